"""Differentiable primitives over :class:`Tensor`.

Every primitive computes its forward value with numpy and, when the output
depends on a watched parameter of a recording tape, appends a node holding
the closure that maps the output gradient to input gradients.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from orthosupernet.autodiff.exceptions import ContractError, DimensionError, DomainError
from orthosupernet.autodiff.tensor import BackwardFn, Tape, Tensor


def _tape_of(inputs: Sequence[Tensor]) -> Tape | None:
    tape: Tape | None = None
    for tensor in inputs:
        if tensor.tape is None:
            continue
        if tape is not None and tensor.tape is not tape:
            raise ContractError("operands were recorded on different tapes")
        tape = tensor.tape
    return tape


def _wrap(value: Tensor | float | np.ndarray, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype), like.tape)


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    tape = _tape_of(inputs)
    requires_grad = (
        tape is not None
        and tape.record
        and any(tensor.requires_grad for tensor in inputs)
    )
    output = Tensor(data, tape, requires_grad)
    if requires_grad:
        tape.add_node(output, inputs, backward_fn)
    return output


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor | float, b: Tensor | float) -> Tensor:
    a, b = (_wrap(a, b), b) if not isinstance(a, Tensor) else (a, _wrap(b, a))
    shape_a, shape_b = a.shape, b.shape

    def backward(grad: np.ndarray):
        return _unbroadcast(grad, shape_a), _unbroadcast(grad, shape_b)

    return _result(a.data + b.data, (a, b), backward)


def sub(a: Tensor | float, b: Tensor | float) -> Tensor:
    a, b = (_wrap(a, b), b) if not isinstance(a, Tensor) else (a, _wrap(b, a))
    shape_a, shape_b = a.shape, b.shape

    def backward(grad: np.ndarray):
        return _unbroadcast(grad, shape_a), _unbroadcast(-grad, shape_b)

    return _result(a.data - b.data, (a, b), backward)


def mul(a: Tensor | float, b: Tensor | float) -> Tensor:
    a, b = (_wrap(a, b), b) if not isinstance(a, Tensor) else (a, _wrap(b, a))

    def backward(grad: np.ndarray):
        return (
            _unbroadcast(grad * b.data, a.shape),
            _unbroadcast(grad * a.data, b.shape),
        )

    return _result(a.data * b.data, (a, b), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    def backward(grad: np.ndarray):
        return (grad * factor,)

    return _result(x.data * factor, (x,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors.

    Raises
    ------
    DimensionError
        Operands are not 2-D or inner dimensions differ
    """
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul", a.shape, b.shape)
    tape = _tape_of((a, b))
    if tape is not None:
        tape.macs += a.shape[0] * a.shape[1] * b.shape[1]

    def backward(grad: np.ndarray):
        return grad @ b.data.T, a.data.T @ grad

    return _result(a.data @ b.data, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError("transpose", x.shape)

    def backward(grad: np.ndarray):
        return (grad.T,)

    return _result(x.data.T, (x,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    original = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError("reshape", original, shape) from None

    def backward(grad: np.ndarray):
        return (grad.reshape(original),)

    return _result(data, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if len(tensors) == 1:
        return tensors[0]
    try:
        data = np.concatenate([tensor.data for tensor in tensors], axis=axis)
    except ValueError:
        raise DimensionError("concat", *(tensor.shape for tensor in tensors)) from None
    sizes = np.cumsum([tensor.shape[axis] for tensor in tensors])[:-1]

    def backward(grad: np.ndarray):
        return np.split(grad, sizes, axis=axis)

    return _result(data, tuple(tensors), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    try:
        data = np.stack([tensor.data for tensor in tensors], axis=axis)
    except ValueError:
        raise DimensionError("stack", *(tensor.shape for tensor in tensors)) from None

    def backward(grad: np.ndarray):
        return [np.take(grad, index, axis=axis) for index in range(len(tensors))]

    return _result(data, tuple(tensors), backward)


def slice_axis(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    """Contiguous ``[start, stop)`` range along ``axis``."""
    size = x.shape[axis]
    if not 0 <= start <= stop <= size:
        raise DimensionError(f"slice [{start}, {stop})", x.shape)
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape, dtype = x.shape, x.dtype

    def backward(grad: np.ndarray):
        full = np.zeros(shape, dtype=dtype)
        full[index] = grad
        return (full,)

    return _result(x.data[index], (x,), backward)


def take(x: Tensor, indices: Sequence[int] | np.ndarray, axis: int = 0) -> Tensor:
    """Gather entries of ``x`` along ``axis``; repeated indices scatter-add
    their gradients."""
    indices = np.asarray(indices, dtype=np.intp)
    if indices.ndim != 1:
        raise DimensionError("take", x.shape, indices.shape)
    axis = axis % x.data.ndim
    shape, dtype = x.shape, x.dtype

    def backward(grad: np.ndarray):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(np.moveaxis(full, axis, 0), indices, np.moveaxis(grad, axis, 0))
        return (full,)

    return _result(np.take(x.data, indices, axis=axis), (x,), backward)


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0

    def backward(grad: np.ndarray):
        return (grad * positive,)

    return _result(np.where(positive, x.data, 0).astype(x.dtype), (x,), backward)


def _sigmoid(values: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * values))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)

    def backward(grad: np.ndarray):
        return (grad * out * (1.0 - out),)

    return _result(out, (x,), backward)


def swish(x: Tensor) -> Tensor:
    gate = _sigmoid(x.data)

    def backward(grad: np.ndarray):
        return (grad * (gate + x.data * gate * (1.0 - gate)),)

    return _result(x.data * gate, (x,), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(grad: np.ndarray):
        return (grad * out,)

    return _result(out, (x,), backward)


def log(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise DomainError("log", "x", float(x.data.min()))

    def backward(grad: np.ndarray):
        return (grad / x.data,)

    with np.errstate(divide="ignore"):
        return _result(np.log(x.data), (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    """Square root with a zero subgradient at 0."""
    if np.any(x.data < 0):
        raise DomainError("sqrt", "x", float(x.data.min()))
    out = np.sqrt(x.data)

    def backward(grad: np.ndarray):
        safe = np.where(out > 0, out, 1)
        return (np.where(out > 0, grad / (2 * safe), 0).astype(x.dtype),)

    return _result(out, (x,), backward)


def square(x: Tensor) -> Tensor:
    def backward(grad: np.ndarray):
        return (2 * grad * x.data,)

    return _result(x.data * x.data, (x,), backward)


def clip(x: Tensor, low: float | None = None, high: float | None = None) -> Tensor:
    """Clamp into ``[low, high]``; the gradient passes where the input lies
    inside the closed interval."""
    out = x.data
    inside = np.ones(x.shape, dtype=bool)
    if low is not None:
        inside &= x.data >= low
        out = np.maximum(out, low)
    if high is not None:
        inside &= x.data <= high
        out = np.minimum(out, high)
    out = out.astype(x.dtype, copy=False)

    def backward(grad: np.ndarray):
        return (grad * inside,)

    return _result(out, (x,), backward)


def cast(x: Tensor, dtype: np.dtype | type) -> Tensor:
    if x.dtype == np.dtype(dtype):
        return x
    source = x.dtype

    def backward(grad: np.ndarray):
        return (grad.astype(source),)

    return _result(x.data.astype(dtype), (x,), backward)


def straight_through(x: Tensor, value: np.ndarray) -> Tensor:
    """Forward ``value``; pass the output gradient to ``x`` unchanged."""
    value = np.asarray(value, dtype=x.dtype)
    if value.shape != x.shape:
        raise DimensionError("straight_through", x.shape, value.shape)

    def backward(grad: np.ndarray):
        return (grad,)

    return _result(value, (x,), backward)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.shape

    def backward(grad: np.ndarray):
        if axis is not None:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, shape).copy(),)

    return _result(np.asarray(x.data.sum(axis=axis)), (x,), backward)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    return scale(reduce_sum(x, axis), 1.0 / count)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis followed by an affine map."""
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise DimensionError("layer_norm", x.shape, gain.shape, bias.shape)
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normalized = centered * inv_std
    leading = tuple(range(x.data.ndim - 1))

    def backward(grad: np.ndarray):
        d_normalized = grad * gain.data
        d_x = inv_std * (
            d_normalized
            - d_normalized.mean(axis=-1, keepdims=True)
            - normalized * (d_normalized * normalized).mean(axis=-1, keepdims=True)
        )
        return d_x, (grad * normalized).sum(axis=leading), grad.sum(axis=leading)

    return _result(normalized * gain.data + bias.data, (x, gain, bias), backward)


def dropout(x: Tensor, p: float, generator: np.random.Generator) -> Tensor:
    """Inverted dropout; the keep mask is drawn from ``generator``."""
    if not 0 <= p < 1:
        raise DomainError("dropout", "p", p)
    if p == 0:
        return x
    keep = generator.random(x.shape) >= p
    factor = keep.astype(x.dtype) / x.dtype.type(1 - p)

    def backward(grad: np.ndarray):
        return (grad * factor,)

    return _result(x.data * factor, (x,), backward)


def softmax_rows(s: Tensor, temperature: float = 1.0) -> Tensor:
    """Row-wise softmax of ``s / temperature`` computed with max-subtraction.

    Raises
    ------
    DomainError
        ``temperature`` is not positive
    """
    if not temperature > 0:
        raise DomainError("softmax_rows", "temperature", temperature)
    scaled = s.data / temperature
    shifted = np.exp(scaled - scaled.max(axis=-1, keepdims=True))
    out = shifted / shifted.sum(axis=-1, keepdims=True)

    def backward(grad: np.ndarray):
        inner = (grad * out).sum(axis=-1, keepdims=True)
        return (out * (grad - inner) / temperature,)

    return _result(out, (s,), backward)


def log_softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward(grad: np.ndarray):
        return (grad - np.exp(out) * grad.sum(axis=-1, keepdims=True),)

    return _result(out, (x,), backward)


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    """log(sum(exp(x))) along ``axis``; slices that are entirely -inf give
    -inf with a zero gradient."""
    if x.data.ndim == 0 or x.shape[axis] == 0:
        raise DimensionError("logsumexp", x.shape)
    peak = x.data.max(axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0)
    with np.errstate(divide="ignore"):
        out_kept = peak + np.log(np.exp(x.data - peak).sum(axis=axis, keepdims=True))
    out = np.squeeze(out_kept, axis=axis)

    def backward(grad: np.ndarray):
        finite = np.isfinite(out_kept)
        weights = np.where(finite, np.exp(x.data - np.where(finite, out_kept, 0)), 0)
        return (np.expand_dims(grad, axis) * weights,)

    return _result(out, (x,), backward)


def depthwise_conv1d(x: Tensor, weight: Tensor) -> Tensor:
    """Per-channel convolution over time with same padding.

    Parameters
    ----------
    x : Tensor
        Input of shape ``T x C``
    weight : Tensor
        Kernel of shape ``K x C`` with odd ``K``
    """
    frames, channels = x.shape
    kernel = weight.shape[0]
    if weight.shape[1] != channels or kernel % 2 == 0:
        raise DimensionError("depthwise_conv1d", x.shape, weight.shape)
    pad = kernel // 2
    padded = np.pad(x.data, ((pad, pad), (0, 0)))
    windows = sliding_window_view(padded, kernel, axis=0)
    tape = _tape_of((x, weight))
    if tape is not None:
        tape.macs += frames * channels * kernel

    def backward(grad: np.ndarray):
        d_weight = np.einsum("tck,tc->kc", windows, grad)
        d_padded = np.zeros_like(padded)
        for offset in range(kernel):
            d_padded[offset : offset + frames] += grad * weight.data[offset]
        return d_padded[pad : pad + frames], d_weight

    return _result(np.einsum("tck,kc->tc", windows, weight.data), (x, weight), backward)


def unfold_frames(x: Tensor, kernel: int, stride: int) -> Tensor:
    """Stack ``kernel`` neighbouring frames (zero padded by ``kernel // 2``)
    for every ``stride``-th output frame, producing ``T' x (kernel * d)``."""
    frames, width = x.shape
    pad = kernel // 2
    out_frames = (frames + 2 * pad - kernel) // stride + 1
    if out_frames < 1:
        raise DimensionError("unfold_frames", x.shape)
    padded = np.pad(x.data, ((pad, pad), (0, 0)))
    index = np.arange(out_frames)[:, None] * stride + np.arange(kernel)[None, :]

    def backward(grad: np.ndarray):
        d_padded = np.zeros_like(padded)
        np.add.at(d_padded, index, grad.reshape(out_frames, kernel, width))
        return (d_padded[pad : pad + frames],)

    return _result(padded[index].reshape(out_frames, kernel * width), (x,), backward)
