"""Finite-difference verification suite for every analytic gradient.

Each checked quantity is reduced to a scalar through a fixed random probe
vector, so the central-difference oracle in ``tensor.finite_diff_check``
applies uniformly. Instances are drawn at small sizes, seeded, and filtered
away from the nondifferentiable sets (relu kinks, topK ranking ties,
sub-center argmax ties) before checking, since a subgradient cannot match a
two-sided difference quotient across a kink.
"""

import numpy as np

from .margin_loss import (
    ClassCenters,
    LossConfig,
    cosine_logits_vjp,
    init_class_centers,
    inter_topk_loss,
)
from .pooling import PoolingConfig, PoolingParams, init_pooling_params, mqmha_backward, mqmha_forward
from .tensor import finite_diff_check, matmul, relu, softmax_axis

# The generalized pooling's named special cases, at sizes small enough for a
# dense finite-difference pass, plus the full multi-query multi-head points.
NAMED_POOLING_CONFIGS: dict[str, PoolingConfig] = {
    "pooling: single-head self-attentive (h=1, q=1, n=2, shared)": PoolingConfig(
        dim=6, heads=1, queries=1, attn_layers=2, hidden_dim=5, weight_mode="shared"),
    "pooling: split multi-head (h=4, q=1, n=1, shared)": PoolingConfig(
        dim=8, heads=4, queries=1, attn_layers=1, weight_mode="shared"),
    "pooling: multi-query single-head (h=1, q=3, n=2, shared)": PoolingConfig(
        dim=4, heads=1, queries=3, attn_layers=2, hidden_dim=5, weight_mode="shared"),
    "pooling: per-channel vector attention (h=1, q=2, n=2, unique)": PoolingConfig(
        dim=4, heads=1, queries=2, attn_layers=2, hidden_dim=5, weight_mode="unique"),
    "pooling: multi-query multi-head (h=2, q=2, n=1, shared)": PoolingConfig(
        dim=6, heads=2, queries=2, attn_layers=1, weight_mode="shared"),
    "pooling: multi-query multi-head (h=16, q=4, n=1, shared)": PoolingConfig(
        dim=32, heads=16, queries=4, attn_layers=1, weight_mode="shared"),
}

_RELU_KINK_MARGIN = 1e-3
_TIE_MARGIN = 1e-3


def _pack(arrays):
    return np.concatenate([a.ravel() for a in arrays])


def _unpack(vec, templates):
    out, pos = [], 0
    for t in templates:
        out.append(vec[pos:pos + t.size].reshape(t.shape))
        pos += t.size
    return out


def _pooling_instance(config: PoolingConfig, rng):
    """Random (frames, params, probe) kept clear of relu kinks."""
    for _ in range(100):
        T = int(rng.integers(2, 5))
        O = rng.standard_normal((T, config.dim))
        params = init_pooling_params(config, int(rng.integers(0, 2**31)))
        if config.attn_layers == 2:
            X = O.reshape(T, config.heads, config.head_dim)
            pre = np.einsum("thc,hck->thk", X, params.w_hidden)
            if np.abs(pre).min() < _RELU_KINK_MARGIN:
                continue
        probe = rng.standard_normal(config.out_dim)
        return O, params, probe
    raise RuntimeError("could not draw a kink-free pooling instance")


def check_pooling_config(config: PoolingConfig, seed: int, instances: int,
                         step: float = 1e-5) -> float:
    """Max FD error over random instances, w.r.t. frames and all parameters."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        O, params, probe = _pooling_instance(config, rng)
        arrays = [O, params.w_out] + ([params.w_hidden] if params.w_hidden is not None else [])
        templates = [np.empty_like(a) for a in arrays]

        def f(vec):
            parts = _unpack(vec, templates)
            p = PoolingParams(
                w_out=parts[1], w_hidden=parts[2] if len(parts) == 3 else None
            )
            out, cache = mqmha_forward(parts[0], p, config)
            gO, gp = mqmha_backward(probe, cache)
            garrays = [gO, gp.w_out] + ([gp.w_hidden] if gp.w_hidden is not None else [])
            return float(probe @ out), _pack(garrays)

        worst = max(worst, finite_diff_check(f, _pack(arrays), step=step))
    return worst


def _loss_instance(config: LossConfig, rng):
    """Random cosine matrix whose topK ranking gap exceeds the tie margin."""
    n = 4
    for _ in range(100):
        cos = rng.uniform(-0.9, 0.9, size=(n, config.num_classes))
        labels = rng.integers(0, config.num_classes, size=n)
        neg = np.array([
            np.sort(np.delete(cos[i], labels[i]))[::-1] for i in range(n)
        ])
        k = config.k_top
        if 0 < k < config.num_classes - 1:
            if np.min(neg[:, k - 1] - neg[:, k]) < _TIE_MARGIN:
                continue
        return cos, labels
    raise RuntimeError("could not draw a tie-free loss instance")


def check_loss_cosines(mode: str, seed: int, instances: int, step: float = 1e-6) -> float:
    """FD error of the loss gradient w.r.t. the cosine matrix."""
    config = LossConfig(
        num_classes=6, scale=35.0, margin=0.2, extra_margin=0.06, k_top=2,
        penalty_mode=mode,
    )
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        cos, labels = _loss_instance(config, rng)
        m_current = float(rng.uniform(0.0, config.margin))

        def f(vec):
            loss, grad = inter_topk_loss(vec.reshape(cos.shape), labels, config, m_current)
            return loss, grad.ravel()

        worst = max(worst, finite_diff_check(f, cos.ravel(), step=step))
    return worst


def check_loss_composed(mode: str, seed: int, instances: int, step: float = 1e-6) -> float:
    """FD error of loss(cosine_logits(...)) w.r.t. embeddings and centers."""
    config = LossConfig(
        num_classes=5, scale=35.0, margin=0.2, extra_margin=0.06, k_top=2,
        subcenters=2, penalty_mode=mode,
    )
    rng = np.random.default_rng(seed)
    embed_dim = 6
    n = 3
    worst = 0.0
    done = 0
    while done < instances:
        emb = rng.standard_normal((n, embed_dim))
        centers = init_class_centers(
            config.num_classes, config.subcenters, embed_dim, int(rng.integers(0, 2**31))
        )
        labels = rng.integers(0, config.num_classes, size=n)
        m_current = float(rng.uniform(0.0, config.margin))

        cos, sel, _ = cosine_logits_vjp(emb, centers)
        sims = (emb / np.linalg.norm(emb, axis=1, keepdims=True)) @ \
            centers.weights.reshape(-1, embed_dim).T
        sims = sims.reshape(n, config.num_classes, config.subcenters)
        gap = np.sort(sims, axis=2)
        if config.subcenters > 1 and np.min(gap[:, :, -1] - gap[:, :, -2]) < _TIE_MARGIN:
            continue
        neg = np.array([
            np.sort(np.delete(cos[i], labels[i]))[::-1] for i in range(n)
        ])
        if np.min(neg[:, config.k_top - 1] - neg[:, config.k_top]) < _TIE_MARGIN:
            continue

        templates = [np.empty_like(emb), np.empty_like(centers.weights)]

        def f(vec):
            e, w = _unpack(vec, templates)
            c, s, vjp = cosine_logits_vjp(e, ClassCenters(weights=w))
            loss, gcos = inter_topk_loss(c, labels, config, m_current)
            ge, gw = vjp(gcos)
            return loss, _pack([ge, gw])

        worst = max(worst, finite_diff_check(f, _pack([emb, centers.weights]), step=step))
        done += 1
    return worst


def check_base_ops(seed: int, instances: int, step: float = 1e-5) -> dict[str, float]:
    """FD errors for the three primitive ops."""
    rng = np.random.default_rng(seed)
    worst = {"matmul": 0.0, "softmax": 0.0, "relu": 0.0}
    for _ in range(instances):
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))
        probe = rng.standard_normal((3, 2))

        def f_a(vec):
            out, vjp = matmul(vec.reshape(3, 4), b)
            return float((probe * out).sum()), vjp(probe)[0].ravel()

        def f_b(vec):
            out, vjp = matmul(a, vec.reshape(4, 2))
            return float((probe * out).sum()), vjp(probe)[1].ravel()

        worst["matmul"] = max(
            worst["matmul"],
            finite_diff_check(f_a, a.ravel(), step=step),
            finite_diff_check(f_b, b.ravel(), step=step),
        )

        x = rng.standard_normal(5)
        sm_probe = rng.standard_normal(5)

        def f_sm(vec):
            out, vjp = softmax_axis(vec, axis=0)
            return float(sm_probe @ out), vjp(sm_probe)

        worst["softmax"] = max(worst["softmax"], finite_diff_check(f_sm, x, step=step))

        r = rng.standard_normal(6)
        r[np.abs(r) < _RELU_KINK_MARGIN] += 0.5  # keep away from the kink
        r_probe = rng.standard_normal(6)

        def f_r(vec):
            out, vjp = relu(vec)
            return float(r_probe @ out), vjp(r_probe)

        worst["relu"] = max(worst["relu"], finite_diff_check(f_r, r, step=step))
    return worst


def run_suite(seed: int = 0, instances: int = 100) -> dict[str, float]:
    """The full gradient suite: base ops, all named pooling configs, and the
    loss in both penalty modes (directly and composed through the logits)."""
    results = {}
    base = check_base_ops(seed, min(instances, 50))
    results.update({f"op: {k}": v for k, v in base.items()})
    for name, config in NAMED_POOLING_CONFIGS.items():
        results[name] = check_pooling_config(config, seed, instances)
    for mode in ("additive", "angular"):
        results[f"loss: inter-topK {mode} (d cos)"] = check_loss_cosines(mode, seed, instances)
        results[f"loss: inter-topK {mode} (d embeddings, d centers)"] = check_loss_composed(
            mode, seed, max(instances // 4, 25)
        )
    return results
