from abc import ABC, abstractmethod
from typing import Sequence

import numpy as np

from palp_lab.diffcore.errors import GradientError
from palp_lab.diffcore.tensor import Context, Tape, Tensor, as_tensor, check_finite


def _common_tape(tensors: Sequence[Tensor]) -> Tape | None:
    tape = None
    for tensor in tensors:
        if tensor.tape is None:
            continue
        if tape is None:
            tape = tensor.tape
        elif tensor.tape is not tape:
            raise GradientError("Inputs are recorded on different tapes")
    return tape


def _same_shape(name: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


class Function(ABC):
    """
    A primitive differentiable operation.

    Subclasses hold their static configuration (scale factor, axis, ...) as instance
    attributes and implement forward/backward over plain arrays. Calling the instance
    evaluates it and, when any input lives on a tape, records it there.
    """

    @property
    @abstractmethod
    def name(self) -> str:
        pass

    @abstractmethod
    def forward(self, ctx: Context, *inputs: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def backward(self, ctx: Context, grad_output: np.ndarray) -> tuple[np.ndarray | None, ...]:
        pass

    def __call__(self, *inputs: Tensor | np.ndarray | float) -> Tensor:
        tensors = tuple(as_tensor(value) for value in inputs)
        tape = _common_tape(tensors)
        ctx = Context(needs_input_grad=tuple(t.tape is not None for t in tensors))
        output = np.asarray(self.forward(ctx, *(t.data for t in tensors)), dtype=np.float64)
        check_finite(output, self.name)
        if tape is None:
            return Tensor(output)
        return tape.record(self, tensors, output, ctx)


class Add(Function):
    name = "add"

    def forward(self, ctx, a, b):
        _same_shape(self.name, a, b)
        return a + b

    def backward(self, ctx, grad_output):
        return grad_output, grad_output


class Sub(Function):
    name = "sub"

    def forward(self, ctx, a, b):
        _same_shape(self.name, a, b)
        return a - b

    def backward(self, ctx, grad_output):
        return grad_output, -grad_output


class Mul(Function):
    name = "mul"

    def forward(self, ctx, a, b):
        _same_shape(self.name, a, b)
        ctx.save(a=a, b=b)
        return a * b

    def backward(self, ctx, grad_output):
        return grad_output * ctx.saved["b"], grad_output * ctx.saved["a"]


class Scale(Function):
    name = "scale"

    def __init__(self, factor: float):
        self.factor = float(factor)

    def forward(self, ctx, a):
        return a * self.factor

    def backward(self, ctx, grad_output):
        return (grad_output * self.factor,)


class MatMul(Function):
    """Matrix x vector or matrix x matrix."""

    name = "matmul"

    def forward(self, ctx, a, b):
        if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
            raise ValueError(f"{self.name}: incompatible shapes {a.shape} @ {b.shape}")
        ctx.save(a=a, b=b)
        return a @ b

    def backward(self, ctx, grad_output):
        a, b = ctx.saved["a"], ctx.saved["b"]
        if b.ndim == 1:
            return np.outer(grad_output, b), a.T @ grad_output
        return grad_output @ b.T, a.T @ grad_output


class Affine(Function):
    """x @ W.T (+ b) for a single vector x of width d_in or a batch of rows."""

    name = "affine"

    def forward(self, ctx, x, weight, bias=None):
        if weight.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != weight.shape[1]:
            raise ValueError(f"{self.name}: input {x.shape} does not fit weight {weight.shape}")
        if bias is not None and bias.shape != (weight.shape[0],):
            raise ValueError(f"{self.name}: bias {bias.shape} does not fit weight {weight.shape}")
        ctx.save(x=x, weight=weight)
        out = x @ weight.T
        if bias is not None:
            out = out + bias
        return out

    def backward(self, ctx, grad_output):
        x, weight = ctx.saved["x"], ctx.saved["weight"]
        needs = ctx.needs_input_grad
        grad_x = grad_output @ weight if needs[0] else None
        grad_w = None
        if needs[1]:
            grad_w = grad_output.T @ x if x.ndim == 2 else np.outer(grad_output, x)
        if len(needs) == 2:
            return grad_x, grad_w
        grad_b = None
        if needs[2]:
            grad_b = grad_output.sum(axis=0) if grad_output.ndim == 2 else grad_output
        return grad_x, grad_w, grad_b


class SiLU(Function):
    name = "silu"

    def forward(self, ctx, x):
        sig = 0.5 * (1.0 + np.tanh(0.5 * x))
        ctx.save(x=x, sig=sig)
        return x * sig

    def backward(self, ctx, grad_output):
        x, sig = ctx.saved["x"], ctx.saved["sig"]
        return (grad_output * sig * (1.0 + x * (1.0 - sig)),)


class Sum(Function):
    name = "sum"

    def forward(self, ctx, a):
        ctx.save(shape=a.shape)
        return np.sum(a)

    def backward(self, ctx, grad_output):
        return (np.full(ctx.saved["shape"], float(grad_output)),)


class MSE(Function):
    """Mean of squared differences over all elements."""

    name = "mse"

    def forward(self, ctx, a, b):
        _same_shape(self.name, a, b)
        diff = a - b
        ctx.save(diff=diff)
        return np.mean(diff * diff)

    def backward(self, ctx, grad_output):
        diff = ctx.saved["diff"]
        grad_a = float(grad_output) * 2.0 * diff / diff.size
        return grad_a, -grad_a


class Dot(Function):
    """Inner product <a, b> over all elements."""

    name = "dot"

    def forward(self, ctx, a, b):
        _same_shape(self.name, a, b)
        ctx.save(a=a, b=b)
        return np.sum(a * b)

    def backward(self, ctx, grad_output):
        g = float(grad_output)
        return g * ctx.saved["b"], g * ctx.saved["a"]


class Concat(Function):
    name = "concat"

    def __init__(self, axis: int = -1):
        self.axis = axis

    def forward(self, ctx, *parts):
        ctx.save(sizes=[part.shape[self.axis] for part in parts])
        return np.concatenate(parts, axis=self.axis)

    def backward(self, ctx, grad_output):
        bounds = np.cumsum(ctx.saved["sizes"])[:-1]
        return tuple(np.split(grad_output, bounds, axis=self.axis))


class Reshape(Function):
    name = "reshape"

    def __init__(self, shape: tuple[int, ...]):
        self.shape = tuple(shape)

    def forward(self, ctx, a):
        ctx.save(shape=a.shape)
        return a.reshape(self.shape)

    def backward(self, ctx, grad_output):
        return (grad_output.reshape(ctx.saved["shape"]),)


class BagMean(Function):
    """Row i of the output is the mean of the table rows listed in groups[i]."""

    name = "bag_mean"

    def __init__(self, groups: Sequence[Sequence[int]]):
        if not groups or any(len(group) == 0 for group in groups):
            raise ValueError(f"{self.name}: every group needs at least one row")
        self.groups = tuple(tuple(int(i) for i in group) for group in groups)

    def forward(self, ctx, table):
        ctx.save(n_rows=table.shape[0], width=table.shape[1])
        return np.stack([table[list(group)].mean(axis=0) for group in self.groups])

    def backward(self, ctx, grad_output):
        grad_table = np.zeros((ctx.saved["n_rows"], ctx.saved["width"]))
        for row, group in enumerate(self.groups):
            share = grad_output[row] / len(group)
            for index in group:
                grad_table[index] += share
        return (grad_table,)


class TimeFeatures(Function):
    """Sinusoidal features [sin(t*f_i), cos(t*f_i)] with f_i = 10000^(-2i/dim)."""

    name = "time_features"

    def __init__(self, dim: int):
        if dim < 2 or dim % 2:
            raise ValueError(f"{self.name}: dim must be even and >= 2, got {dim}")
        self.dim = dim
        half = dim // 2
        self.freqs = 1.0 / (10000.0 ** (2.0 * np.arange(half) / dim))

    def forward(self, ctx, t):
        angles = np.multiply.outer(t, self.freqs)
        ctx.save(angles=angles)
        return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)

    def backward(self, ctx, grad_output):
        angles = ctx.saved["angles"]
        half = self.dim // 2
        grad_sin, grad_cos = grad_output[..., :half], grad_output[..., half:]
        per_freq = (grad_sin * np.cos(angles) - grad_cos * np.sin(angles)) * self.freqs
        return (per_freq.sum(axis=-1),)


def add(a, b) -> Tensor:
    return Add()(a, b)


def sub(a, b) -> Tensor:
    return Sub()(a, b)


def mul(a, b) -> Tensor:
    return Mul()(a, b)


def scale(a, factor: float) -> Tensor:
    return Scale(factor)(a)


def matmul(a, b) -> Tensor:
    return MatMul()(a, b)


def affine(x, weight, bias=None) -> Tensor:
    if bias is None:
        return Affine()(x, weight)
    return Affine()(x, weight, bias)


def silu(x) -> Tensor:
    return SiLU()(x)


def tsum(a) -> Tensor:
    return Sum()(a)


def mse(a, b) -> Tensor:
    return MSE()(a, b)


def dot(a, b) -> Tensor:
    return Dot()(a, b)


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    return Concat(axis)(*parts)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    return Reshape(shape)(a)


def bag_mean(table, groups: Sequence[Sequence[int]]) -> Tensor:
    return BagMean(groups)(table)


def time_features(t, dim: int) -> Tensor:
    return TimeFeatures(dim)(t)
