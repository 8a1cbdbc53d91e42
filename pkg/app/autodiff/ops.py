"""Differentiable ops: the closed set the toy transformer is built from."""

import math
from typing import Sequence, Tuple

import numpy as np

from app.autodiff.tensor import Tensor, make_output
from app.services.exceptions import DimensionError, TokenIndexError

GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes (leading axes must match)."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError("matmul", a.shape, b.shape)
    a_data, b_data = a.data, b.data

    def _backward(g: np.ndarray):
        grad_a = np.matmul(g, np.swapaxes(b_data, -1, -2)) if a.requires_grad else None
        grad_b = np.matmul(np.swapaxes(a_data, -1, -2), g) if b.requires_grad else None
        return grad_a, grad_b

    return make_output("matmul", (a, b), np.matmul(a_data, b_data), _backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError("add", a.shape, b.shape)
    a_shape, b_shape = a.shape, b.shape

    def _backward(g: np.ndarray):
        return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

    return make_output("add", (a, b), a.data + b.data, _backward)


def scale(x: Tensor, factor: float) -> Tensor:
    def _backward(g: np.ndarray):
        return (g * factor,)

    return make_output("scale", (x,), x.data * factor, _backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax with max-subtraction."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    y = exps / exps.sum(axis=axis, keepdims=True)

    def _backward(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_output("softmax", (x,), y, _backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then apply gamma/beta."""
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise DimensionError("layer_norm", x.shape, gamma.shape, beta.shape)
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std
    gamma_data = gamma.data

    def _backward(g: np.ndarray):
        rows = g.reshape(-1, width)
        grad_gamma = (rows * x_hat.reshape(-1, width)).sum(axis=0)
        grad_beta = rows.sum(axis=0)
        d_hat = g * gamma_data
        grad_x = inv_std * (
            d_hat
            - d_hat.mean(axis=-1, keepdims=True)
            - x_hat * (d_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        return grad_x, grad_gamma, grad_beta

    return make_output("layer_norm", (x, gamma, beta), x_hat * gamma_data + beta.data, _backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    v = x.data
    t = np.tanh(GELU_C * (v + 0.044715 * v ** 3))

    def _backward(g: np.ndarray):
        dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * dt),)

    return make_output("gelu", (x,), 0.5 * v * (1.0 + t), _backward)


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Row lookup ``table[ids]``."""
    index = np.asarray(ids, dtype=np.int64)
    rows = table.shape[0]
    if index.size and (index.min() < 0 or index.max() >= rows):
        bad = int(index.max()) if index.max() >= rows else int(index.min())
        raise TokenIndexError(bad, rows)
    table_shape = table.shape

    def _backward(g: np.ndarray):
        grad = np.zeros(table_shape)
        np.add.at(grad, index, g)
        return (grad,)

    return make_output("embedding", (table,), table.data[index], _backward)


def conv1d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution over time.

    ``x`` is [T, C_in] and ``weight`` is [kernel, C_in, C_out]; the result is
    [T_out, C_out] with T_out = (T + 2*padding - kernel) // stride + 1.
    """
    if x.data.ndim != 2 or weight.data.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise DimensionError("conv1d", x.shape, weight.shape)
    length, c_in = x.shape
    kernel, _, c_out = weight.shape
    t_out = (length + 2 * padding - kernel) // stride + 1
    if t_out <= 0:
        raise DimensionError("conv1d", x.shape, weight.shape)

    padded = np.pad(x.data, ((padding, padding), (0, 0)))
    windows = stride * np.arange(t_out)[:, None] + np.arange(kernel)[None, :]
    cols = padded[windows].reshape(t_out, kernel * c_in)
    w_flat = weight.data.reshape(kernel * c_in, c_out)

    def _backward(g: np.ndarray):
        grad_w = (cols.T @ g).reshape(kernel, c_in, c_out)
        grad_padded = np.zeros_like(padded)
        np.add.at(grad_padded, windows, (g @ w_flat.T).reshape(t_out, kernel, c_in))
        return grad_padded[padding:padding + length], grad_w

    return make_output("conv1d", (x, weight), cols @ w_flat, _backward)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    original = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError("reshape", original, shape)

    def _backward(g: np.ndarray):
        return (g.reshape(original),)

    return make_output("reshape", (x,), data, _backward)


def transpose(x: Tensor, axes: Tuple[int, ...]) -> Tensor:
    inverse = tuple(int(i) for i in np.argsort(axes))

    def _backward(g: np.ndarray):
        return (np.transpose(g, inverse),)

    return make_output("transpose", (x,), np.transpose(x.data, axes), _backward)


def cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under softmax(logits)."""
    if logits.data.ndim != 2:
        raise DimensionError("cross_entropy", logits.shape)
    steps, vocab = logits.shape
    target = np.asarray(targets, dtype=np.int64)
    if target.shape != (steps,):
        raise DimensionError("cross_entropy", logits.shape, target.shape)
    for token in target:
        if token < 0 or token >= vocab:
            raise TokenIndexError(int(token), vocab)

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    positions = np.arange(steps)
    nll = log_z - shifted[positions, target]

    def _backward(g: np.ndarray):
        probs = np.exp(shifted - log_z[:, None])
        probs[positions, target] -= 1.0
        return (probs * (g.reshape(()) / steps),)

    return make_output("cross_entropy", (logits,), np.asarray(nll.mean()), _backward)
