"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and, when an operation involves a tensor that
requires gradients, records the parents and a closure that maps the
upstream gradient to parent gradients. backward() runs a reverse
topological sweep from a scalar loss and accumulates into .grad.

Broadcasting is limited to numpy's size-1 rules. Compute stays in the
dtype of the operands, so the same graph code runs in float32 for
training and float64 for finite-difference checks. Gradient arrays are
never mutated in place; accumulation always allocates.
"""

from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from ..errors import ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, metrics)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad, shape):
    """Reduce a gradient back to the shape it was broadcast from."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Dense array with optional gradient tracking."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype.kind in "iub":
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        # leaves that require grad start at zeros so an unused leaf still
        # reports a well-defined (zero) gradient after backward
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _from_op(data, parents, backward_fn):
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        return out

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- elementwise -------------------------------------------------------

    @staticmethod
    def _coerce(value):
        return value if isinstance(value, Tensor) else Tensor(np.asarray(value))

    @staticmethod
    def _check_broadcast(a, b):
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from None

    def __add__(self, other):
        other = self._coerce(other)
        self._check_broadcast(self, other)

        def backward_fn(g):
            _accumulate(self, _unbroadcast(g, self.shape))
            _accumulate(other, _unbroadcast(g, other.shape))

        return Tensor._from_op(self.data + other.data, (self, other), backward_fn)

    __radd__ = __add__

    def __neg__(self):
        def backward_fn(g):
            _accumulate(self, -g)

        return Tensor._from_op(-self.data, (self,), backward_fn)

    def __sub__(self, other):
        other = self._coerce(other)
        self._check_broadcast(self, other)

        def backward_fn(g):
            _accumulate(self, _unbroadcast(g, self.shape))
            _accumulate(other, _unbroadcast(-g, other.shape))

        return Tensor._from_op(self.data - other.data, (self, other), backward_fn)

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __mul__(self, other):
        other = self._coerce(other)
        self._check_broadcast(self, other)

        def backward_fn(g):
            _accumulate(self, _unbroadcast(g * other.data, self.shape))
            _accumulate(other, _unbroadcast(g * self.data, other.shape))

        return Tensor._from_op(self.data * other.data, (self, other), backward_fn)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        self._check_broadcast(self, other)

        def backward_fn(g):
            _accumulate(self, _unbroadcast(g / other.data, self.shape))
            _accumulate(
                other, _unbroadcast(-g * self.data / (other.data * other.data), other.shape)
            )

        return Tensor._from_op(self.data / other.data, (self, other), backward_fn)

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __pow__(self, exponent):
        exponent = float(exponent)
        out_data = self.data**exponent

        def backward_fn(g):
            _accumulate(self, g * exponent * self.data ** (exponent - 1.0))

        return Tensor._from_op(out_data, (self,), backward_fn)

    def relu(self):
        def backward_fn(g):
            _accumulate(self, g * (self.data > 0))

        return Tensor._from_op(np.maximum(self.data, 0), (self,), backward_fn)

    def gelu(self):
        """Exact (erf-based) GELU."""
        inv_sqrt2 = self.data.dtype.type(1.0 / np.sqrt(2.0))
        cdf = 0.5 * (1.0 + erf(self.data * inv_sqrt2))

        def backward_fn(g):
            pdf = np.exp(-0.5 * self.data * self.data) / np.sqrt(2.0 * np.pi)
            _accumulate(self, g * (cdf + self.data * pdf))

        return Tensor._from_op(self.data * cdf, (self,), backward_fn)

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def backward_fn(g):
            _accumulate(self, g * out_data * (1.0 - out_data))

        return Tensor._from_op(out_data, (self,), backward_fn)

    def exp(self):
        out_data = np.exp(self.data)

        def backward_fn(g):
            _accumulate(self, g * out_data)

        return Tensor._from_op(out_data, (self,), backward_fn)

    def log(self):
        def backward_fn(g):
            _accumulate(self, g / self.data)

        return Tensor._from_op(np.log(self.data), (self,), backward_fn)

    # -- reductions --------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward_fn(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(self, np.broadcast_to(g, self.shape))

        return Tensor._from_op(out_data, (self,), backward_fn)

    def mean(self, axis=None, keepdims=False):
        out_data = self.data.mean(axis=axis, keepdims=keepdims)
        count = self.data.size // max(out_data.size, 1)

        def backward_fn(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(self, np.broadcast_to(g / count, self.shape))

        return Tensor._from_op(out_data, (self,), backward_fn)

    # -- structure ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src_shape = self.shape

        def backward_fn(g):
            _accumulate(self, g.reshape(src_shape))

        return Tensor._from_op(self.data.reshape(shape), (self,), backward_fn)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))

        def backward_fn(g):
            _accumulate(self, g.transpose(inverse))

        return Tensor._from_op(self.data.transpose(axes), (self,), backward_fn)

    def __getitem__(self, key):
        def backward_fn(g):
            full = np.zeros_like(self.data)
            full[key] = g
            _accumulate(self, full)

        return Tensor._from_op(self.data[key], (self,), backward_fn)

    def __matmul__(self, other):
        other = self._coerce(other)
        if self.ndim < 2 or other.ndim < 2 or self.shape[-1] != other.shape[-2]:
            raise ShapeError(f"matmul shapes {self.shape} and {other.shape} do not agree")

        def backward_fn(g):
            _accumulate(self, _unbroadcast(g @ other.data.swapaxes(-1, -2), self.shape))
            _accumulate(other, _unbroadcast(self.data.swapaxes(-1, -2) @ g, other.shape))

        return Tensor._from_op(self.data @ other.data, (self, other), backward_fn)


def _accumulate(tensor, grad):
    if not tensor.requires_grad:
        return
    grad = grad.reshape(tensor.shape)
    tensor.grad = grad if tensor.grad is None else tensor.grad + grad


class Parameter(Tensor):
    """Trainable tensor with a name used as its checkpoint key."""

    def __init__(self, data, name):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def concat(tensors, axis=0):
    tensors = [Tensor._coerce(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, stop)
            _accumulate(t, g[tuple(index)])

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._from_op(data, tuple(tensors), backward_fn)


def softmax(x, axis=-1):
    """Softmax along an axis, computed with a detached max shift."""
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True))
    e = (x - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to mean 0 / var 1, then apply the affine."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / ((var + eps) ** 0.5) * gamma + beta
