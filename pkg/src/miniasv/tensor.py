"""Minimal dense-array numerics with explicit vector-Jacobian products.

All values live in 64-bit float, C-contiguous numpy arrays; there is no
autograd tape. Each differentiable operation returns ``(value, vjp)`` where
``vjp(g)`` maps an upstream gradient of the output to gradients of the
inputs. Consumers compose these by hand, and ``finite_diff_check`` is the
oracle used to verify every analytic gradient in the package.
"""

from collections.abc import Callable

import numpy as np

from .errors import DimensionError, NumericError

# A "tensor" throughout this package is a float64 C-order ndarray.
Tensor = np.ndarray


def as_tensor(x) -> Tensor:
    """Coerce input to a float64, row-major ndarray."""
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


def matmul(a: Tensor, b: Tensor) -> tuple[Tensor, Callable]:
    """Matrix product with VJP: vjp(g) -> (g @ b.T, a.T @ g)."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes do not chain: {a.shape} x {b.shape}")
    out = a @ b

    def vjp(g: Tensor) -> tuple[Tensor, Tensor]:
        g = as_tensor(g)
        if g.shape != out.shape:
            raise DimensionError(f"gradient shape {g.shape} != output shape {out.shape}")
        return g @ b.T, a.T @ g

    return out, vjp


def softmax_axis(x: Tensor, axis: int) -> tuple[Tensor, Callable]:
    """Stable softmax along ``axis``; every slice sums to 1.

    vjp(g) = y * (g - sum(y * g, axis)), the usual softmax Jacobian product.
    """
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} invalid for shape {x.shape}")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g: Tensor) -> Tensor:
        g = as_tensor(g)
        if g.shape != y.shape:
            raise DimensionError(f"gradient shape {g.shape} != output shape {y.shape}")
        return y * (g - np.sum(y * g, axis=axis, keepdims=True))

    return y, vjp


def relu(x: Tensor) -> tuple[Tensor, Callable]:
    """Elementwise max(x, 0); the gradient at exactly 0 is 0."""
    x = as_tensor(x)
    out = np.maximum(x, 0.0)
    mask = x > 0.0

    def vjp(g: Tensor) -> Tensor:
        g = as_tensor(g)
        if g.shape != out.shape:
            raise DimensionError(f"gradient shape {g.shape} != output shape {out.shape}")
        return g * mask

    return out, vjp


def finite_diff_check(f: Callable, x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between an analytic gradient and central differences.

    ``f(x)`` must return ``(scalar_value, gradient_like_x)``. Every
    coordinate of ``x`` is perturbed by ``+-step`` and the centered quotient
    is compared against the analytic gradient; the error for a coordinate is
    ``|analytic - numeric| / max(1, |analytic|)`` and the max over all
    coordinates is returned.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    x = as_tensor(x)
    value, grad = f(x)
    value = float(value)
    grad = as_tensor(grad)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NumericError("non-finite value or gradient at base point")
    if grad.shape != x.shape:
        raise DimensionError(f"gradient shape {grad.shape} != input shape {x.shape}")

    numeric = np.empty_like(x)
    flat = x.ravel()
    num_flat = numeric.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(f(x)[0])
        flat[i] = orig - step
        down = float(f(x)[0])
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"non-finite probe value at coordinate {i}")
        num_flat[i] = (up - down) / (2.0 * step)

    rel = np.abs(grad - numeric) / np.maximum(1.0, np.abs(grad))
    return float(rel.max()) if rel.size else 0.0
