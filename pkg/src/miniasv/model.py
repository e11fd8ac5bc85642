"""Full speaker model: frame encoder -> attentive pooling -> linear embedding,
with the sub-center loss head's class centers.

Parameters live in one flat name -> array dict so the optimizer, checkpoints
and gradient bookkeeping stay uniform. Checkpoints are a single ``.npz``
file with a versioned JSON header carrying the configs.
"""

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, encoder_backward, encoder_forward, init_encoder_params
from .errors import ConfigError, InputError
from .margin_loss import ClassCenters, LossConfig, init_class_centers
from .pooling import (
    PoolingConfig,
    PoolingParams,
    init_pooling_params,
    mqmha_backward,
    mqmha_forward,
)
from .tensor import Tensor, as_tensor

_CHECKPOINT_VERSION = 1


class SpeakerModel:
    """Bundles the three configs and the flat parameter dict."""

    def __init__(self, encoder: EncoderConfig, pooling: PoolingConfig,
                 loss: LossConfig, params: dict[str, Tensor]):
        if encoder.output_dim != pooling.dim:
            raise ConfigError(
                f"encoder output width {encoder.output_dim} != pooling dim {pooling.dim}"
            )
        self.encoder = encoder
        self.pooling = pooling
        self.loss = loss
        self.params = params

    def pooling_params(self) -> PoolingParams:
        return PoolingParams(
            w_out=self.params["pool_w_out"],
            w_hidden=self.params.get("pool_w_hidden"),
        )

    def centers(self) -> ClassCenters:
        return ClassCenters(weights=self.params["centers"])


def init_model(encoder: EncoderConfig, pooling: PoolingConfig, loss: LossConfig,
               seed: int) -> SpeakerModel:
    """Deterministic init; component seeds are fixed offsets of ``seed``."""
    params = init_encoder_params(encoder, seed)
    pool = init_pooling_params(pooling, seed + 1)
    params["pool_w_out"] = pool.w_out
    if pool.w_hidden is not None:
        params["pool_w_hidden"] = pool.w_hidden

    rng = np.random.default_rng(seed + 2)
    head_in = pooling.out_dim
    limit = np.sqrt(6.0 / (head_in + encoder.embed_dim))
    params["head_w"] = rng.uniform(-limit, limit, size=(head_in, encoder.embed_dim))
    params["head_b"] = np.zeros(encoder.embed_dim)

    params["centers"] = init_class_centers(
        loss.num_classes, loss.subcenters, encoder.embed_dim, seed + 3
    ).weights
    return SpeakerModel(encoder, pooling, loss, params)


def embed_batch(model: SpeakerModel, feats: Tensor):
    """Embeddings for a (B, T, feat_dim) batch; returns (emb, cache)."""
    feats = as_tensor(feats)
    if feats.ndim != 3:
        raise InputError(f"expected a (B, T, feat_dim) batch, got shape {feats.shape}")
    b, t, f = feats.shape
    frames, enc_cache = encoder_forward(feats.reshape(b * t, f), model.params, model.encoder)
    seq = frames.reshape(b, t, model.pooling.dim)

    pparams = model.pooling_params()
    pooled = np.empty((b, model.pooling.out_dim))
    pool_caches = []
    for i in range(b):
        pooled[i], cache = mqmha_forward(seq[i], pparams, model.pooling)
        pool_caches.append(cache)

    emb = pooled @ model.params["head_w"] + model.params["head_b"]
    return emb, {"enc": enc_cache, "pool": pool_caches, "pooled": pooled, "shape": (b, t, f)}


def embed_backward(model: SpeakerModel, grad_emb: Tensor, cache) -> dict[str, Tensor]:
    """Parameter gradients for embed_batch (input gradients are discarded)."""
    b, t, f = cache["shape"]
    grads: dict[str, Tensor] = {}
    grads["head_w"] = cache["pooled"].T @ grad_emb
    grads["head_b"] = grad_emb.sum(axis=0)
    grad_pooled = grad_emb @ model.params["head_w"].T

    grad_frames = np.empty((b, t, model.pooling.dim))
    gw_out = np.zeros_like(model.params["pool_w_out"])
    gw_hidden = (
        np.zeros_like(model.params["pool_w_hidden"])
        if "pool_w_hidden" in model.params else None
    )
    for i in range(b):
        grad_frames[i], pg = mqmha_backward(grad_pooled[i], cache["pool"][i])
        gw_out += pg.w_out
        if gw_hidden is not None:
            gw_hidden += pg.w_hidden
    grads["pool_w_out"] = gw_out
    if gw_hidden is not None:
        grads["pool_w_hidden"] = gw_hidden

    _, enc_grads = encoder_backward(
        grad_frames.reshape(b * t, -1), cache["enc"], model.params, model.encoder
    )
    grads.update(enc_grads)
    return grads


def embed_utterance(model: SpeakerModel, feats: Tensor) -> Tensor:
    """Embedding of a single (T, feat_dim) utterance."""
    emb, _ = embed_batch(model, as_tensor(feats)[None, :, :])
    return emb[0]


def save_checkpoint(model: SpeakerModel, path) -> None:
    header = {
        "version": _CHECKPOINT_VERSION,
        "encoder": asdict(model.encoder),
        "pooling": asdict(model.pooling),
        "loss": asdict(model.loss),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, __header__=np.array(json.dumps(header)), **model.params)


def load_checkpoint(path) -> SpeakerModel:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if "__header__" not in data:
            raise InputError(f"not a model checkpoint (missing header): {path}")
        header = json.loads(str(data["__header__"]))
        if header.get("version") != _CHECKPOINT_VERSION:
            raise InputError(f"unsupported checkpoint version {header.get('version')}")
        params = {k: data[k] for k in data.files if k != "__header__"}
    header["encoder"]["layer_widths"] = tuple(header["encoder"]["layer_widths"])
    return SpeakerModel(
        encoder=EncoderConfig(**header["encoder"]),
        pooling=PoolingConfig(**header["pooling"]),
        loss=LossConfig(**header["loss"]),
        params=params,
    )
