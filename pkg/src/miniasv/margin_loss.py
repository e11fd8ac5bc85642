"""Sub-center additive-margin softmax with an inter-topK penalty.

Logits are cosine similarities between l2-normalized embeddings and a bank
of ``subcenters`` unit-norm prototype vectors per class; each class scores
via its nearest sub-center. The loss subtracts a (ramped) margin from the
target logit and, on top of that, adds an extra penalty ``m_prime`` to the
``k_top`` highest-scoring negative classes of each sample, in either
additive form (cos + m') or angular form (cos(theta - m')). With
``k_top = 0`` or ``m_prime = 0`` this is exactly plain AM-Softmax.

TopK membership is recomputed on every forward pass and treated as constant
inside one backward pass; all ties (topK ranking, sub-center argmax) break
toward the lowest index so runs are reproducible.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, NumericError
from .tensor import Tensor, as_tensor

# Keep |cos| strictly inside (-1, 1) before arccos; d(arccos)/dx diverges at +-1.
_ANGULAR_CLIP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    num_classes: int
    scale: float = 35.0
    margin: float = 0.2
    extra_margin: float = 0.0  # inter-class penalty m'
    k_top: int = 0
    subcenters: int = 3
    penalty_mode: str = "additive"  # or "angular"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.scale <= 0:
            raise ConfigError("scale must be positive")
        if not 0.0 <= self.margin < 1.0:
            raise ConfigError("margin must be in [0, 1)")
        if not 0.0 <= self.extra_margin < 1.0:
            raise ConfigError("extra_margin must be in [0, 1)")
        if self.k_top < 0:
            raise ConfigError("k_top must be >= 0")
        if self.subcenters < 1:
            raise ConfigError("subcenters must be >= 1")
        if self.penalty_mode not in ("additive", "angular"):
            raise ConfigError(f"penalty_mode must be 'additive' or 'angular', got {self.penalty_mode!r}")


@dataclass
class ClassCenters:
    """Prototype bank of shape (num_classes, subcenters, embed_dim).

    Rows are kept unit-norm by re-projecting after each optimizer step
    (see ``renormalize``), not by normalizing inside the graph.
    """

    weights: Tensor

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def subcenters(self) -> int:
        return self.weights.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.weights.shape[2]

    def renormalize(self) -> None:
        norms = np.linalg.norm(self.weights, axis=2, keepdims=True)
        if np.any(norms == 0):
            raise NumericError("zero-norm class center cannot be renormalized")
        self.weights /= norms


def init_class_centers(num_classes: int, subcenters: int, embed_dim: int, seed: int) -> ClassCenters:
    """Random unit-norm centers, deterministic per seed."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((num_classes, subcenters, embed_dim))
    centers = ClassCenters(weights=w)
    centers.renormalize()
    return centers


@dataclass(frozen=True)
class MarginSchedule:
    """Linear ramp of the target margin from 0 to m_final over warmup_steps."""

    m_final: float = 0.2
    warmup_steps: int = 1000

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ConfigError("warmup_steps must be >= 1")
        if self.m_final < 0:
            raise ConfigError("m_final must be >= 0")


def margin_schedule(step: int, schedule: MarginSchedule) -> float:
    if step < 0:
        raise InputError(f"step must be >= 0, got {step}")
    return min(step / schedule.warmup_steps, 1.0) * schedule.m_final


def averaged_margin(m: float, m_prime: float, k: int, num_classes: int) -> float:
    """Effective margin averaged over all negatives when the k nearest carry m'."""
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    if not 0 <= k <= num_classes - 1:
        raise InputError(f"k must be in [0, {num_classes - 1}], got {k}")
    return m + k * m_prime / (num_classes - 1)


def _normalize_rows(embeddings: Tensor) -> tuple[Tensor, Tensor]:
    norms = np.linalg.norm(embeddings, axis=1)
    bad = np.nonzero(norms == 0)[0]
    if bad.size:
        raise NumericError(f"zero-norm embedding at row {bad[0]}")
    return embeddings / norms[:, None], norms


def cosine_logits(embeddings: Tensor, centers: ClassCenters) -> tuple[Tensor, np.ndarray]:
    """Nearest-sub-center cosine similarities.

    Returns the (N, num_classes) cosine matrix and the (N, num_classes)
    indices of the selected sub-center per entry. Ties select the lowest
    sub-center index.
    """
    cos, sel, _ = cosine_logits_vjp(embeddings, centers)
    return cos, sel


def cosine_logits_vjp(embeddings: Tensor, centers: ClassCenters):
    """Like ``cosine_logits`` but also returns vjp(g_cos) -> (g_emb, g_centers).

    Gradient flows only through the selected sub-center of every
    (sample, class) pair.
    """
    embeddings = as_tensor(embeddings)
    if embeddings.ndim != 2 or embeddings.shape[1] != centers.embed_dim:
        raise InputError(
            f"expected embeddings of shape (N, {centers.embed_dim}), got {embeddings.shape}"
        )
    xhat, norms = _normalize_rows(embeddings)
    n, e = embeddings.shape
    c, k = centers.num_classes, centers.subcenters
    sims = (xhat @ centers.weights.reshape(c * k, e).T).reshape(n, c, k)
    sel = sims.argmax(axis=2)  # argmax takes the first (lowest) index on ties
    cos = np.take_along_axis(sims, sel[:, :, None], axis=2)[:, :, 0]

    def vjp(g_cos: Tensor) -> tuple[Tensor, Tensor]:
        g_cos = as_tensor(g_cos)
        if g_cos.shape != (n, c):
            raise InputError(f"expected gradient of shape ({n}, {c}), got {g_cos.shape}")
        w_sel = centers.weights[np.arange(c)[None, :], sel]  # (N, C, e)
        g_xhat = np.einsum("nc,nce->ne", g_cos, w_sel)
        g_centers = np.zeros_like(centers.weights)
        flat_idx = (np.arange(c)[None, :] * k + sel).ravel()
        np.add.at(
            g_centers.reshape(c * k, e),
            flat_idx,
            (g_cos[:, :, None] * xhat[:, None, :]).reshape(-1, e),
        )
        # through x / ||x||: (I - xhat xhat^T) / ||x||
        g_emb = (g_xhat - (g_xhat * xhat).sum(axis=1, keepdims=True) * xhat) / norms[:, None]
        return g_emb, g_centers

    return cos, sel, vjp


def _validate_loss_inputs(cos, labels, config, m_current):
    cos = as_tensor(cos)
    labels = np.asarray(labels, dtype=np.int64)
    if cos.ndim != 2 or cos.shape[1] != config.num_classes:
        raise InputError(f"expected cosines of shape (N, {config.num_classes}), got {cos.shape}")
    if labels.shape != (cos.shape[0],):
        raise InputError(f"expected {cos.shape[0]} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= config.num_classes):
        raise InputError("label out of range [0, num_classes)")
    if not 0.0 <= m_current <= config.margin + 1e-12:
        raise InputError(f"m_current must be in [0, margin], got {m_current}")
    k = config.k_top
    if k > config.num_classes - 1:
        warnings.warn(
            f"k_top={k} exceeds num_classes-1={config.num_classes - 1}; clamping",
            stacklevel=3,
        )
        k = config.num_classes - 1
    return cos, labels, k


def _topk_negative_mask(cos: Tensor, labels: np.ndarray, k: int) -> np.ndarray:
    """Boolean (N, C) mask of each row's k highest-cosine negative classes.

    Ranking uses the raw cosines; ties go to the lower class index (stable
    sort on descending value).
    """
    n, c = cos.shape
    if k == 0:
        return np.zeros((n, c), dtype=bool)
    order = np.argsort(-cos, axis=1, kind="stable")
    is_target = order == labels[:, None]
    neg_rank = np.cumsum(~is_target, axis=1)  # 1-based rank among negatives
    chosen = ~is_target & (neg_rank <= k)
    mask = np.zeros((n, c), dtype=bool)
    np.put_along_axis(mask, order, chosen, axis=1)
    return mask


def _penalized_negatives(cos: Tensor, mask: np.ndarray, config: LossConfig) -> Tensor:
    """Apply the extra penalty to masked entries; returns the full phi matrix."""
    phi = cos.copy()
    if config.extra_margin == 0.0 or not mask.any():
        return phi
    if config.penalty_mode == "additive":
        phi[mask] = cos[mask] + config.extra_margin
    else:
        clipped = np.clip(cos[mask], -1.0 + _ANGULAR_CLIP, 1.0 - _ANGULAR_CLIP)
        phi[mask] = np.cos(np.arccos(clipped) - config.extra_margin)
    return phi


def inter_topk_loss(
    cos: Tensor, labels, config: LossConfig, m_current: float
) -> tuple[float, Tensor]:
    """Mean penalized AM-Softmax loss and its exact gradient w.r.t. the cosines.

    The target logit is cos - m_current; the k_top nearest negatives are
    penalized per ``config.penalty_mode``. TopK membership is held constant
    for the gradient (the true subgradient away from ranking ties).
    """
    cos, labels, k = _validate_loss_inputs(cos, labels, config, m_current)
    n, c = cos.shape
    rows = np.arange(n)
    mask = _topk_negative_mask(cos, labels, k)
    psi = _penalized_negatives(cos, mask, config)
    psi[rows, labels] = cos[rows, labels] - m_current

    z = config.scale * psi
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    loss = float(np.mean(lse - z[rows, labels]))

    p = np.exp(z - lse[:, None])
    dz = p / n
    dz[rows, labels] -= 1.0 / n
    dpsi_dcos = np.ones_like(cos)
    if config.penalty_mode == "angular" and config.extra_margin > 0.0 and mask.any():
        inside = mask & (np.abs(cos) < 1.0 - _ANGULAR_CLIP)
        theta = np.arccos(cos[inside])
        dpsi_dcos[inside] = np.sin(theta - config.extra_margin) / np.sin(theta)
        dpsi_dcos[mask & ~inside] = 0.0  # clipped flat region
    grad = config.scale * dz * dpsi_dcos
    return loss, grad


def loss_equivalent_form(cos: Tensor, labels, config: LossConfig, m_current: float) -> float:
    """Inter-penalty-only rewrite of the loss: the target keeps its raw cosine
    and every negative's exponent is shifted up by the target margin instead.

    Algebraically identical to ``inter_topk_loss`` (multiply numerator and
    denominator by e^{scale * m_current}); kept as an independent cross-check.
    """
    cos, labels, k = _validate_loss_inputs(cos, labels, config, m_current)
    n, c = cos.shape
    rows = np.arange(n)
    mask = _topk_negative_mask(cos, labels, k)
    phi = _penalized_negatives(cos, mask, config)
    exponents = config.scale * (phi + m_current)
    exponents[rows, labels] = config.scale * cos[rows, labels]
    target = exponents[rows, labels]
    shift = exponents.max(axis=1)
    lse = shift + np.log(np.exp(exponents - shift[:, None]).sum(axis=1))
    return float(np.mean(lse - target))
