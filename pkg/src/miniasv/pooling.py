"""Multi-query multi-head attentive statistics pooling.

Maps a T x d frame sequence to a fixed vector of attention-weighted means
and standard deviations. The d channels are split into ``heads`` contiguous
blocks; each head carries ``queries`` independent attention weightings, and
each (head, query) pair contributes a weighted mean and std over its block.
Special cases by configuration:

    single-head self-attentive      heads=1, queries=1, attn_layers=2, shared
    split multi-head                heads>1, queries=1, attn_layers=1, shared
    multi-query single-head         heads=1, queries>1, attn_layers=2, shared
    per-channel (vector) attention  heads=1, queries>1, attn_layers=2, unique

All of these run through the one ``mqmha_forward`` code path. With all
attention parameters zero the layer degenerates to plain statistics pooling.

Output layout: all means first, then all stds; heads outermost, queries
inner, channels innermost. Length is exactly ``2 * d * queries``.
"""

from dataclasses import dataclass

import numpy as np

from . import _pool_np, backend
from .errors import ConfigError, DimensionError, InputError
from .tensor import Tensor, as_tensor

try:
    from . import _pool_nb
except ImportError:  # pragma: no cover - numba missing entirely
    _pool_nb = None

_K = _pool_nb if backend.active_backend() == "numba" else _pool_np


@dataclass(frozen=True)
class PoolingConfig:
    """Hyperparameters of the pooling layer.

    ``weight_mode`` is "shared" (one attention weight per frame for all
    channels of a head) or "unique" (one weight per frame per channel).
    ``hidden_dim`` is only used when ``attn_layers == 2``.
    """

    dim: int
    heads: int = 1
    queries: int = 1
    attn_layers: int = 1
    hidden_dim: int = 512
    weight_mode: str = "shared"
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.dim < 1 or self.heads < 1 or self.queries < 1:
            raise ConfigError("dim, heads and queries must all be >= 1")
        if self.dim % self.heads != 0:
            raise ConfigError(f"heads ({self.heads}) must divide dim ({self.dim})")
        if self.attn_layers not in (1, 2):
            raise ConfigError(f"attn_layers must be 1 or 2, got {self.attn_layers}")
        if self.attn_layers == 2 and self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be >= 1 for two-layer attention")
        if self.weight_mode not in ("shared", "unique"):
            raise ConfigError(f"weight_mode must be 'shared' or 'unique', got {self.weight_mode!r}")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def weight_dim(self) -> int:
        """Columns of attention output per query: 1 if shared, head_dim if unique."""
        return 1 if self.weight_mode == "shared" else self.head_dim

    @property
    def out_dim(self) -> int:
        return 2 * self.dim * self.queries


@dataclass
class PoolingParams:
    """Trainable attention matrices, stacked over heads.

    One-layer attention: ``w_out`` has shape (heads, head_dim, queries * weight_dim)
    and ``w_hidden`` is None. Two-layer: ``w_hidden`` is
    (heads, head_dim, hidden_dim) and ``w_out`` is (heads, hidden_dim,
    queries * weight_dim); the hidden matrix is shared across a head's queries.
    """

    w_out: Tensor
    w_hidden: Tensor | None = None


@dataclass
class PoolCache:
    """Forward intermediates needed by mqmha_backward."""

    config: PoolingConfig
    params: PoolingParams
    X: Tensor  # (T, heads, head_dim)
    W: Tensor  # (T, heads, queries * weight_dim), softmax over T
    R: Tensor | None  # (T, heads, hidden_dim) relu outputs, two-layer only
    mu: Tensor
    var: Tensor
    sigma: Tensor


def _validate_params(config: PoolingConfig, params: PoolingParams) -> None:
    j = config.queries * config.weight_dim
    if config.attn_layers == 1:
        want = (config.heads, config.head_dim, j)
        if params.w_hidden is not None or params.w_out.shape != want:
            raise DimensionError(
                f"one-layer params need w_out {want} and no w_hidden, "
                f"got w_out {params.w_out.shape}"
            )
    else:
        want_h = (config.heads, config.head_dim, config.hidden_dim)
        want_o = (config.heads, config.hidden_dim, j)
        if params.w_hidden is None or params.w_hidden.shape != want_h or params.w_out.shape != want_o:
            raise DimensionError(
                f"two-layer params need w_hidden {want_h} and w_out {want_o}"
            )


def _split_heads(O: Tensor, config: PoolingConfig) -> Tensor:
    O = as_tensor(O)
    if O.ndim != 2 or O.shape[1] != config.dim:
        raise DimensionError(f"expected frames of shape (T, {config.dim}), got {O.shape}")
    if O.shape[0] == 0:
        raise InputError("empty frame sequence (T = 0)")
    return O.reshape(O.shape[0], config.heads, config.head_dim)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_pooling_params(config: PoolingConfig, seed: int) -> PoolingParams:
    """Xavier-uniform attention matrices, deterministic per seed."""
    rng = np.random.default_rng(seed)
    j = config.queries * config.weight_dim
    if config.attn_layers == 1:
        w_out = _xavier(rng, config.head_dim, j, (config.heads, config.head_dim, j))
        return PoolingParams(w_out=w_out)
    w_hidden = _xavier(
        rng, config.head_dim, config.hidden_dim,
        (config.heads, config.head_dim, config.hidden_dim),
    )
    w_out = _xavier(rng, config.hidden_dim, j, (config.heads, config.hidden_dim, j))
    return PoolingParams(w_out=w_out, w_hidden=w_hidden)


def attention_weights(O: Tensor, params: PoolingParams, config: PoolingConfig) -> Tensor:
    """Attention weights of shape (T, heads, queries, weight_dim).

    Each (head, query, column) slice is a softmax over the T frames, so it
    sums to 1.
    """
    _, _, _, W = _forward_arrays(O, params, config)
    T = W.shape[0]
    return W.reshape(T, config.heads, config.queries, config.weight_dim)


def _forward_arrays(O, params, config):
    _validate_params(config, params)
    X = _split_heads(O, config)
    ds = config.weight_dim
    if config.attn_layers == 1:
        mu, var, sigma, W = _K.forward_n1(X, params.w_out, config.queries, ds, config.epsilon)
        R = None
    else:
        mu, var, sigma, W, R = _K.forward_n2(
            X, params.w_hidden, params.w_out, config.queries, ds, config.epsilon
        )
    return X, (mu, var, sigma), R, W


def mqmha_forward(O: Tensor, params: PoolingParams, config: PoolingConfig) -> tuple[Tensor, PoolCache]:
    """Pool a (T, dim) sequence into a (2 * dim * queries,) vector.

    Returns the pooled vector (means then stds) and the cache consumed by
    ``mqmha_backward``.
    """
    X, (mu, var, sigma), R, W = _forward_arrays(O, params, config)
    out = np.concatenate([mu.ravel(), sigma.ravel()])
    cache = PoolCache(config=config, params=params, X=X, W=W, R=R, mu=mu, var=var, sigma=sigma)
    return out, cache


def mqmha_backward(grad: Tensor, cache: PoolCache) -> tuple[Tensor, PoolingParams]:
    """Exact gradients of mqmha_forward w.r.t. the frames and the parameters."""
    config = cache.config
    grad = as_tensor(grad)
    if grad.shape != (config.out_dim,):
        raise DimensionError(f"expected gradient of shape ({config.out_dim},), got {grad.shape}")
    half = config.dim * config.queries
    stat_shape = (config.heads, config.queries, config.head_dim)
    gmu = grad[:half].reshape(stat_shape)
    gsigma = grad[half:].reshape(stat_shape)
    ds = config.weight_dim
    if config.attn_layers == 1:
        gX, gwa = _K.backward_n1(
            cache.X, cache.params.w_out, cache.W, cache.mu, cache.var, cache.sigma,
            gmu, gsigma, config.queries, ds, config.epsilon,
        )
        grads = PoolingParams(w_out=gwa)
    else:
        gX, gwb, gwc = _K.backward_n2(
            cache.X, cache.params.w_hidden, cache.params.w_out, cache.W, cache.R,
            cache.mu, cache.var, cache.sigma,
            gmu, gsigma, config.queries, ds, config.epsilon,
        )
        grads = PoolingParams(w_out=gwc, w_hidden=gwb)
    return gX.reshape(-1, config.dim), grads


def statistics_pool(O: Tensor, epsilon: float = 1e-8):
    """Unweighted per-channel mean and epsilon-floored std, concatenated.

    Returns ``(vector of length 2*d, vjp)``; the vjp maps an upstream
    gradient back to a (T, d) gradient on the frames.
    """
    O = as_tensor(O)
    if O.ndim != 2:
        raise DimensionError(f"expected a (T, d) array, got shape {O.shape}")
    T, d = O.shape
    if T == 0:
        raise InputError("empty frame sequence (T = 0)")
    mean = O.mean(axis=0)
    m2 = (O * O).mean(axis=0)
    var = m2 - mean * mean
    sigma = np.sqrt(np.maximum(var, epsilon))
    out = np.concatenate([mean, sigma])

    def vjp(g: Tensor) -> Tensor:
        g = as_tensor(g)
        if g.shape != (2 * d,):
            raise DimensionError(f"expected gradient of shape ({2 * d},), got {g.shape}")
        gmean, gsigma = g[:d], g[d:]
        gvar = np.where(var > epsilon, gsigma * (0.5 / sigma), 0.0)
        gmean_tot = gmean - 2.0 * mean * gvar
        return (gmean_tot + 2.0 * O * gvar) / T

    return out, vjp
