"""Dense numpy-backed tensors with reverse-mode automatic differentiation.

Every differentiable primitive is a `Function` subclass with a `forward` on
raw arrays and a `backward` that maps the output gradient to one gradient per
input. `Function.apply` wires the result into the graph.
"""
from __future__ import annotations

import logging
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

from ghvit.errors import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]

_DTYPE: ContextVar[np.dtype] = ContextVar("ghvit_dtype", default=np.dtype(np.float32))
_GRAD_ENABLED: ContextVar[bool] = ContextVar("ghvit_grad_enabled", default=True)

LAYER_NORM_EPS = 1e-5


def default_dtype() -> np.dtype:
    return _DTYPE.get()


@contextmanager
def float64_mode() -> Iterator[None]:
    """Create new tensors as float64 (gradient checking only)."""
    token = _DTYPE.set(np.dtype(np.float64))
    try:
        yield
    finally:
        _DTYPE.reset(token)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording lineage (evaluation)."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out the axes numpy broadcasting added or stretched."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function:
    def __init__(self, *inputs: "Tensor") -> None:
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs) -> "Tensor":
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        requires_grad = _GRAD_ENABLED.get() and any(t.requires_grad for t in inputs)
        return Tensor(out, requires_grad=requires_grad, dtype=out.dtype, _creator=fn if requires_grad else None)


class Tensor:
    """n-dimensional float array plus optional gradient and graph lineage."""

    __array_priority__ = 1000  # keep ndarray <op> Tensor dispatching to Tensor

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Optional[np.dtype] = None,
        _creator: Optional[Function] = None,
    ) -> None:
        self.data = np.asarray(data, dtype=dtype if dtype is not None else default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._creator = _creator

    # -- introspection --------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._creator is None

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        grad = grad.astype(self.dtype, copy=False)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- operators ------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        return Add.apply(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return Add.apply(self, Neg.apply(_lift(other, self)))

    def __rsub__(self, other) -> "Tensor":
        return Add.apply(_lift(other, self), Neg.apply(self))

    def __mul__(self, other) -> "Tensor":
        return Mul.apply(self, _lift(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> "Tensor":
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a python scalar")
        return Mul.apply(self, _lift(1.0 / other, self))

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes: int) -> "Tensor":
        return Transpose.apply(self, axes=axes)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return Sum.apply(self, axis=axis)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        n = self.size if axis is None else self.shape[axis]
        return Sum.apply(self, axis=axis) * (1.0 / n)

    def select(self, axis: int, index: int) -> "Tensor":
        return Select.apply(self, axis=axis, index=index)

    def broadcast_to(self, shape: Sequence[int]) -> "Tensor":
        return BroadcastTo.apply(self, shape=tuple(shape))


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=like.dtype)


# ----------------------------------------------------------------------
# elementwise / structural primitives
# ----------------------------------------------------------------------
class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        a, b = self.inputs
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Mul(Function):
    def forward(self, a, b):
        return a * b

    def backward(self, grad):
        a, b = self.inputs
        return unbroadcast(grad * b.data, a.shape), unbroadcast(grad * a.data, b.shape)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}", details={"a": a.shape, "b": b.shape})
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.inputs
        ga = np.matmul(grad, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), grad)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


class Sum(Function):
    def forward(self, a, axis=None):
        self.axis = axis
        return np.asarray(a.sum(axis=axis))

    def backward(self, grad):
        (a,) = self.inputs
        if self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, a.shape).copy(),)


class Reshape(Function):
    def forward(self, a, shape):
        try:
            return a.reshape(shape)
        except ValueError as e:
            raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}") from e

    def backward(self, grad):
        return (grad.reshape(self.inputs[0].shape),)


class Transpose(Function):
    def forward(self, a, axes):
        self.axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
        return np.transpose(a, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Select(Function):
    """Pick one index along an axis, dropping that axis."""

    def forward(self, a, axis, index):
        self.axis, self.index = axis, index
        return np.take(a, index, axis=axis)

    def backward(self, grad):
        (a,) = self.inputs
        out = np.zeros(a.shape, dtype=grad.dtype)
        slicer = [slice(None)] * a.ndim
        slicer[self.axis] = self.index
        out[tuple(slicer)] = grad
        return (out,)


class BroadcastTo(Function):
    def forward(self, a, shape):
        return np.broadcast_to(a, shape).copy()

    def backward(self, grad):
        return (unbroadcast(grad, self.inputs[0].shape),)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.splits = np.cumsum([arr.shape[axis] for arr in arrays])[:-1]
        try:
            return np.concatenate(arrays, axis=axis)
        except ValueError as e:
            raise ShapeError(f"cannot concatenate shapes {[arr.shape for arr in arrays]} on axis {axis}") from e

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


class Relu(Function):
    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, 0).astype(a.dtype)

    def backward(self, grad):
        return (grad * self.mask,)


class Gelu(Function):
    """Exact GELU, x * Phi(x) with Phi written through erf."""

    def forward(self, a):
        self.cdf = 0.5 * (1.0 + erf(a / np.sqrt(2.0)))
        return (a * self.cdf).astype(a.dtype)

    def backward(self, grad):
        (a,) = self.inputs
        pdf = np.exp(-0.5 * a.data * a.data) / np.sqrt(2.0 * np.pi)
        return ((grad * (self.cdf + a.data * pdf)).astype(a.dtype),)


class Softmax(Function):
    def forward(self, a):
        if a.shape[-1] < 1:
            raise ShapeError("softmax over an empty axis")
        if not np.isfinite(a).all():
            raise NonFiniteError("softmax input contains non-finite values")
        shifted = a - a.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=-1, keepdims=True)
        return self.out

    def backward(self, grad):
        y = self.out
        return (y * (grad - (grad * y).sum(axis=-1, keepdims=True)),)


class LayerNorm(Function):
    def forward(self, x, gamma, beta, eps=LAYER_NORM_EPS):
        d = x.shape[-1]
        if gamma.shape != (d,) or beta.shape != (d,):
            raise ShapeError(f"layer_norm expects gamma/beta of shape ({d},), got {gamma.shape} and {beta.shape}")
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = xc * self.inv_std
        return self.xhat * gamma + beta

    def backward(self, grad):
        _, gamma, _ = self.inputs
        xhat, inv_std = self.xhat, self.inv_std
        g_gamma = (grad * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
        g_beta = grad.reshape(-1, grad.shape[-1]).sum(axis=0)
        g_xhat = grad * gamma.data
        g_x = inv_std * (
            g_xhat
            - g_xhat.mean(axis=-1, keepdims=True)
            - xhat * (g_xhat * xhat).mean(axis=-1, keepdims=True)
        )
        return g_x, g_gamma, g_beta


class Conv2dPatchify(Function):
    """Convolution with kernel size == stride == P over [B,H,W,C] input."""

    def forward(self, x, kernel, bias):
        b, h, w, c = x.shape
        p = kernel.shape[0]
        if kernel.ndim != 4 or kernel.shape[1] != p or kernel.shape[2] != c:
            raise ShapeError(f"patchify kernel {kernel.shape} does not fit input channels {c}")
        d = kernel.shape[3]
        if bias.shape != (d,):
            raise ShapeError(f"patchify bias must have shape ({d},), got {bias.shape}")
        if h % p or w % p:
            raise ShapeError(f"image {h}x{w} is not divisible by patch size {p}")
        gh, gw = h // p, w // p
        # [B, gh, P, gw, P, C] -> [B, gh, gw, P, P, C]
        patches = x.reshape(b, gh, p, gw, p, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, gh, gw, p * p * c)
        self.patches = patches
        self.geometry = (b, h, w, c, p, gh, gw)
        return patches @ kernel.reshape(p * p * c, d) + bias

    def backward(self, grad):
        _, kernel, _ = self.inputs
        b, h, w, c, p, gh, gw = self.geometry
        d = kernel.shape[3]
        flat_grad = grad.reshape(-1, d)
        flat_patches = self.patches.reshape(-1, p * p * c)
        g_kernel = (flat_patches.T @ flat_grad).reshape(kernel.shape)
        g_bias = flat_grad.sum(axis=0)
        g_patches = grad @ kernel.data.reshape(p * p * c, d).T
        g_x = g_patches.reshape(b, gh, gw, p, p, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, h, w, c)
        return g_x, g_kernel, g_bias


# ----------------------------------------------------------------------
# functional surface
# ----------------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    return Softmax.apply(x)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def gelu(x: Tensor) -> Tensor:
    return Gelu.apply(x)


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


def conv2d_patchify(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    return Conv2dPatchify.apply(x, kernel, bias)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._creator is not None:
            for parent in reversed(node._creator.inputs):
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf that requires grad."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        logger.debug("backward called on a tensor with no trainable lineage")
        return
    order = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node._creator is None:
            node._accumulate(grad)
            continue
        for parent, parent_grad in zip(node._creator.inputs, node._creator.backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad
