"""Per-frame multilayer encoder standing in for a heavy convolutional backbone.

Applies the same small relu MLP to every frame independently, mapping raw
feature rows to the channel width the pooling layer expects. Forward and
backward are hand-written like everything else in the package.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor, as_tensor


@dataclass(frozen=True)
class EncoderConfig:
    """``layer_widths`` runs (input_dim, ..., channels); relu between layers,
    final layer linear. ``embed_dim`` is the width of the post-pooling
    projection that produces the utterance embedding."""

    layer_widths: tuple[int, ...]
    embed_dim: int = 512

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(self.layer_widths))
        if len(self.layer_widths) < 2:
            raise ConfigError("layer_widths needs at least (input_dim, output_dim)")
        if any(w < 1 for w in self.layer_widths):
            raise ConfigError("all layer widths must be >= 1")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def num_layers(self) -> int:
        return len(self.layer_widths) - 1


def init_encoder_params(config: EncoderConfig, seed: int) -> dict[str, Tensor]:
    """Xavier-uniform weights, zero biases; keys enc_w{i}/enc_b{i}."""
    rng = np.random.default_rng(seed)
    params = {}
    for i in range(config.num_layers):
        fan_in, fan_out = config.layer_widths[i], config.layer_widths[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"enc_w{i}"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params[f"enc_b{i}"] = np.zeros(fan_out)
    return params


def encoder_forward(frames: Tensor, params: dict, config: EncoderConfig):
    """Map (n, input_dim) frame rows to (n, output_dim); returns (out, cache)."""
    x = as_tensor(frames)
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise DimensionError(f"expected frames of shape (n, {config.input_dim}), got {x.shape}")
    activations = [x]
    for i in range(config.num_layers):
        z = x @ params[f"enc_w{i}"] + params[f"enc_b{i}"]
        x = np.maximum(z, 0.0) if i < config.num_layers - 1 else z
        activations.append(x)
    return x, activations


def encoder_backward(grad_out: Tensor, activations: list, params: dict, config: EncoderConfig):
    """Gradients w.r.t. inputs and parameters; relu gate is strict (> 0)."""
    g = as_tensor(grad_out)
    grads = {}
    for i in reversed(range(config.num_layers)):
        if i < config.num_layers - 1:
            g = g * (activations[i + 1] > 0.0)
        grads[f"enc_w{i}"] = activations[i].T @ g
        grads[f"enc_b{i}"] = g.sum(axis=0)
        g = g @ params[f"enc_w{i}"].T
    return g, grads
