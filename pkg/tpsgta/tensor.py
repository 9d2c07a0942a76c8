"""
Dense float64 tensors with a reverse-mode gradient tape.

Every operation in this module records a `Function` node on the tape when at
least one of its inputs requires a gradient. `Tensor.backward` walks the tape
once in reverse topological order and accumulates gradients into every tensor
that requires them. Operations accept an optional leading batch dimension and
follow numpy broadcasting.
"""
import contextlib
import logging
import threading
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from .errors import ShapeError, UsageError

logger = logging.getLogger(__name__)

DTYPE = np.float64

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """
    Context manager that stops operations from recording tape nodes on the
    current thread. Used for evaluation and finite differences.
    """
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """
    Sum a gradient over the axes numpy broadcasting added, so that it matches
    the shape of the operand it belongs to.

    Parameters:
    grad: (ndarray) gradient with the broadcast output shape
    shape: (tuple) shape of the operand

    Returns:
    ndarray with the operand's shape
    """
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function:
    """
    A node on the gradient tape.

    Subclasses implement `forward` on raw arrays and `backward`, which maps the
    gradient of the output to one gradient per input (None where an input
    takes no gradient). Values needed by `backward` are saved on the instance
    during `forward`.
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs
        self.backward_calls = 0

    def forward(self, *arrays, **kwargs):
        raise NotImplementedError(f"{type(self).__name__} has no forward rule")

    def backward(self, grad):
        raise NotImplementedError(f"{type(self).__name__} has no backward rule")

    @classmethod
    def apply(cls, *inputs, **kwargs) -> "Tensor":
        tensors = tuple(as_tensor(x) for x in inputs)
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = grad_enabled() and any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, creator=fn if requires_grad else None)


class Tensor:
    """
    A float64 numpy array that can take part in the gradient tape.

    Attributes:
    data: (ndarray) values, always float64
    requires_grad: (bool) whether backward() should produce a gradient here
    grad: (ndarray or None) accumulated gradient, same shape as data
    creator: (Function or None) tape node that produced this tensor
    """

    # Lets ndarray <op> Tensor fall through to the Tensor reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, creator: Optional[Function] = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.creator = creator

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # Arithmetic

    def __add__(self, other):
        return Add.apply(self, other)

    def __radd__(self, other):
        return Add.apply(other, self)

    def __sub__(self, other):
        return Add.apply(self, Neg.apply(other))

    def __rsub__(self, other):
        return Add.apply(other, Neg.apply(self))

    def __mul__(self, other):
        return Mul.apply(self, other)

    def __rmul__(self, other):
        return Mul.apply(other, self)

    def __truediv__(self, other):
        return Div.apply(self, other)

    def __rtruediv__(self, other):
        return Div.apply(other, self)

    def __neg__(self):
        return Neg.apply(self)

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise UsageError("only scalar exponents are supported")
        return Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return GetItem.apply(self, index=index)

    # Shape and reductions

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes) -> "Tensor":
        """
        Permute axes. With no arguments the last two axes are swapped, which
        is the matrix transpose for batched inputs.
        """
        if not axes:
            if self.ndim < 2:
                raise ShapeError(f"cannot transpose a tensor of shape {self.shape}")
            axes = tuple(range(self.ndim - 2)) + (self.ndim - 1, self.ndim - 2)
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)

    def abs(self) -> "Tensor":
        return Abs.apply(self)

    # Tape traversal

    def topological_order(self):
        """
        Returns the tensors on the tape that lead to this one, each listed
        after all of its inputs.
        """
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node.creator is not None:
                for parent in node.creator.inputs:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    def graph_nodes(self):
        """
        Returns the tape nodes (Functions) that backward() would visit, in the
        order it visits them.
        """
        return [t.creator for t in reversed(self.topological_order()) if t.creator is not None]

    def backward(self):
        """
        Accumulates d(self)/dx into x.grad for every tensor x on the tape that
        requires a gradient. Gradients add up across calls until zeroed.

        Raises:
        UsageError if this tensor is not a scalar
        """
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(self.topological_order()):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            node.grad = np.array(grad, dtype=DTYPE) if node.grad is None else node.grad + grad
            fn = node.creator
            if fn is None:
                continue
            fn.backward_calls += 1
            input_grads = fn.backward(grad)
            if not isinstance(input_grads, tuple):
                input_grads = (input_grads,)
            for parent, parent_grad in zip(fn.inputs, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                parent_grad = unbroadcast(np.asarray(parent_grad, dtype=DTYPE), parent.shape)
                key = id(parent)
                pending[key] = pending[key] + parent_grad if key in pending else parent_grad


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def backward(loss: Tensor):
    """
    Runs reverse-mode differentiation from a scalar loss. See Tensor.backward.
    """
    loss.backward()


# Elementwise operations


class Add(Function):
    def forward(self, x, y):
        return x + y

    def backward(self, grad):
        return grad, grad


class Neg(Function):
    def forward(self, x):
        return -x

    def backward(self, grad):
        return -grad


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return grad * self.y, grad * self.x


class Div(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x / y

    def backward(self, grad):
        return grad / self.y, -grad * self.x / (self.y * self.y)


class Pow(Function):
    def forward(self, x, exponent):
        self.x, self.exponent = x, exponent
        return np.power(x, exponent)

    def backward(self, grad):
        return grad * self.exponent * np.power(self.x, self.exponent - 1.0)


class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return grad * self.out


class Log(Function):
    def forward(self, x):
        self.x = x
        return np.log(x)

    def backward(self, grad):
        return grad / self.x


class Abs(Function):
    # sign(0) == 0 gives the zero subgradient at the kink
    def forward(self, x):
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, grad):
        return grad * self.sign


class Relu(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return grad * self.mask


class Sigmoid(Function):
    def forward(self, x):
        self.out = special.expit(x)
        return self.out

    def backward(self, grad):
        return grad * self.out * (1.0 - self.out)


class Softmax(Function):
    def forward(self, x, axis):
        self.axis = axis
        self.out = special.softmax(x, axis=axis)
        return self.out

    def backward(self, grad):
        dot = (grad * self.out).sum(axis=self.axis, keepdims=True)
        return self.out * (grad - dot)


class LogSoftmax(Function):
    def forward(self, x, axis):
        self.axis = axis
        out = special.log_softmax(x, axis=axis)
        self.probs = np.exp(out)
        return out

    def backward(self, grad):
        return grad - self.probs * grad.sum(axis=self.axis, keepdims=True)


# Shape operations and reductions


def _normalize_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


class Sum(Function):
    def forward(self, x, axis, keepdims):
        self.shape = x.shape
        self.axis = _normalize_axis(axis, x.ndim)
        self.keepdims = keepdims
        return x.sum(axis=self.axis, keepdims=keepdims)

    def backward(self, grad):
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return np.broadcast_to(grad, self.shape)


class Mean(Function):
    def forward(self, x, axis, keepdims):
        self.shape = x.shape
        self.axis = _normalize_axis(axis, x.ndim)
        self.keepdims = keepdims
        self.count = int(np.prod([x.shape[a] for a in self.axis])) if self.axis else 1
        if self.count == 0:
            raise ShapeError(f"mean over an empty axis of shape {x.shape}")
        return x.mean(axis=self.axis, keepdims=keepdims)

    def backward(self, grad):
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return np.broadcast_to(grad / self.count, self.shape)


class Reshape(Function):
    def forward(self, x, shape):
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return grad.reshape(self.shape)


class Transpose(Function):
    def forward(self, x, axes):
        self.axes = tuple(axes)
        return np.transpose(x, self.axes)

    def backward(self, grad):
        return np.transpose(grad, np.argsort(self.axes))


class GetItem(Function):
    def forward(self, x, index):
        self.shape = x.shape
        self.index = index
        return x[index]

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=DTYPE)
        np.add.at(out, self.index, grad)
        return out


class MatMul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        grad_a = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        grad_b = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return grad_a, grad_b


class Conv1d(Function):
    def forward(self, x, kernels, left, right):
        self.kernel_size = kernels.shape[-1]
        self.length = x.shape[-1]
        self.left = left
        padded = np.pad(x, ((0, 0), (0, 0), (left, right)))
        self.padded_length = padded.shape[-1]
        self.windows = sliding_window_view(padded, self.kernel_size, axis=-1)
        self.kernels = kernels
        # (B, C_in, N, k) x (C_out, C_in, k) -> (B, N, C_out)
        out = np.tensordot(self.windows, kernels, axes=([1, 3], [1, 2]))
        return np.ascontiguousarray(np.transpose(out, (0, 2, 1)))

    def backward(self, grad):
        grad_kernels = np.tensordot(grad, self.windows, axes=([0, 2], [0, 2]))
        batch, channels = grad.shape[0], self.kernels.shape[1]
        grad_padded = np.zeros((batch, channels, self.padded_length), dtype=DTYPE)
        for j in range(self.kernel_size):
            grad_padded[:, :, j : j + self.length] += np.matmul(self.kernels[:, :, j].T, grad)
        grad_x = grad_padded[:, :, self.left : self.left + self.length]
        return grad_x, grad_kernels


# Functional interface


def matmul(a, b) -> Tensor:
    """
    Matrix product over the last two axes, broadcasting any leading batch axes.

    Raises:
    ShapeError if either operand has fewer than two axes or the inner
        dimensions differ
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return MatMul.apply(a, b)


def softmax(x, axis: int = -1) -> Tensor:
    """
    Softmax along one axis, stabilized by subtracting the slice maximum.
    """
    x = as_tensor(x)
    if not -x.ndim <= axis < max(x.ndim, 1):
        raise UsageError(f"softmax axis {axis} is out of range for shape {x.shape}")
    return Softmax.apply(x, axis=axis)


def log_softmax(x, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(x, axis=axis)


def sigmoid(x) -> Tensor:
    return Sigmoid.apply(x)


def relu(x) -> Tensor:
    return Relu.apply(x)


def same_padding(kernel_size: int) -> Tuple[int, int]:
    """
    Returns (left, right) zero padding that keeps the series length for a
    kernel: floor((k-1)/2) on the left and the remainder on the right.
    """
    total = kernel_size - 1
    return total // 2, total - total // 2


def conv1d(x, kernels, bias=None, same_length: bool = True) -> Tensor:
    """
    Length-preserving 1D cross-correlation.

    Parameters:
    x: (Tensor) input of shape (d_in, N) or (B, d_in, N)
    kernels: (Tensor) weights of shape (d_out, d_in, k)
    bias: (Tensor) optional, shape (d_out,)
    same_length: (bool) zero-pad so the output has N steps; otherwise no
        padding is applied

    Returns:
    Tensor of shape (d_out, N) or (B, d_out, N)
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    unbatched = x.ndim == 2
    if unbatched:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3 or x.shape[-1] == 0 or x.shape[1] == 0:
        raise ShapeError(f"conv1d needs a non-empty (B, d_in, N) input, got {x.shape}")
    if kernels.ndim != 3 or kernels.shape[1] != x.shape[1]:
        raise ShapeError(f"conv1d: kernels {kernels.shape} do not match input {x.shape}")
    left, right = same_padding(kernels.shape[-1]) if same_length else (0, 0)
    if x.shape[-1] + left + right < kernels.shape[-1]:
        raise ShapeError(f"conv1d: kernel {kernels.shape} is longer than the padded input {x.shape}")
    out = Conv1d.apply(x, kernels, left=left, right=right)
    if bias is not None:
        out = out + as_tensor(bias).reshape(-1, 1)
    if unbatched:
        out = out.reshape(out.shape[1:])
    return out


def batchnorm1d(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = "train",
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """
    Batch normalization over the batch and time axes of (B, C, N) inputs
    (or (C, N), treated as a batch of one).

    In "train" mode the batch statistics normalize the input and the running
    statistics are updated in place with the given momentum (the running
    variance uses the unbiased estimate). In "eval" mode the running
    statistics are used.

    Raises:
    UsageError for a mode other than "train" or "eval"
    ShapeError if the channel axis does not match gamma/beta
    """
    if mode not in ("train", "eval"):
        raise UsageError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    unbatched = x.ndim == 2
    if unbatched:
        x = x.reshape(1, *x.shape)
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"batchnorm: input {x.shape} does not match gamma {gamma.shape} / beta {beta.shape}")
    if mode == "train":
        mean = x.mean(axis=(0, 2), keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=(0, 2), keepdims=True)
        count = x.shape[0] * x.shape[2]
        unbiased = var.data.reshape(-1) * (count / max(count - 1, 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.data.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
        normalized = centered * (var + eps) ** -0.5
    else:
        mean = Tensor(running_mean.reshape(1, -1, 1))
        scale = Tensor((running_var.reshape(1, -1, 1) + eps) ** -0.5)
        normalized = (x - mean) * scale
    out = normalized * gamma.reshape(1, -1, 1) + beta.reshape(1, -1, 1)
    if unbatched:
        out = out.reshape(out.shape[1:])
    return out


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """
    Normalizes over the last axis, then applies the elementwise affine map.
    """
    x = as_tensor(x)
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * (var + eps) ** -0.5 * gamma + beta


def global_avg_pool(x, axis: int = -1) -> Tensor:
    """
    Mean over the time axis: (d, N) -> (d,), (B, d, N) -> (B, d).

    Raises:
    ShapeError when the series has no time steps
    """
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise ShapeError(f"global average pooling needs at least one time step, got {x.shape}")
    return x.mean(axis=axis)

