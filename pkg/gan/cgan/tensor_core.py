"""
tensor_core.py - Dense tensors with a reverse-mode autodiff tape.

Every differentiable operation is a `Function` subclass with a numpy forward
pass and a vector-Jacobian backward pass. Operations are recorded on the
`Tape` that is active for the current thread:

    with Tape() as tape:
        loss = bce_loss(forward_discriminator(D, x, y, 'train'), ones)
    backward(loss, tape)

Buffers are float32. The finite-difference oracle is the only place that
evaluates in float64.
"""
import logging
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, DegenerateBatchError, ShapeError

logger = logging.getLogger(__name__)

BCE_EPS = 1e-7
DEFAULT_LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

Scalar = Union[int, float, np.floating]
_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """n-dimensional float array with an optional gradient buffer.

    Float ndarrays keep their precision (float32 or float64); anything else
    is stored as float32. Layout for 4-D tensors is NCHW.
    """

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        array = np.asarray(data)
        if not (isinstance(data, np.ndarray) and array.dtype in _FLOAT_DTYPES):
            array = array.astype(np.float32)
        if any(dim < 1 for dim in array.shape):
            raise ShapeError('tensor', array.shape, detail='all dims must be >= 1')
        self.data = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.creator: Optional['Function'] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {list(self.shape)}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0)

    def __add__(self, other):
        return elementwise('add', self, other)

    def __radd__(self, other):
        return elementwise('add', self, other)

    def __sub__(self, other):
        return elementwise('sub', self, other)

    def __mul__(self, other):
        return elementwise('mul', self, other)

    def __rmul__(self, other):
        return elementwise('mul', self, other)

    def __neg__(self):
        return elementwise('scale', self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ''
        return f"Tensor(shape={list(self.shape)}, dtype={self.data.dtype}{label}, requires_grad={self.requires_grad})"


_local = threading.local()


def _tape_stack() -> List['Tape']:
    if not hasattr(_local, 'stack'):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional['Tape']:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Execution-ordered record of differentiable operations for one thread."""

    def __init__(self):
        self.nodes: List['Function'] = []

    def record(self, node: 'Function'):
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> 'Tape':
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False


class Function(ABC):
    """Base class for differentiable operations."""

    name = 'function'

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs
        self.output: Optional[Tensor] = None

    @abstractmethod
    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        pass

    @abstractmethod
    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        """Return one gradient (or None) per input, given dL/d(output)."""
        pass

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        fn = cls(*inputs)
        out = Tensor(fn.forward(*(t.data for t in inputs), **kwargs))
        tape = active_tape()
        if tape is not None and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out.creator = fn
            fn.output = out
            tape.record(fn)
        return out


def _is_scalar(value) -> bool:
    return isinstance(value, (int, float, np.floating, np.integer)) and not isinstance(value, bool)


class Add(Function):
    name = 'add'

    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    name = 'sub'

    def forward(self, a, b):
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    name = 'mul'

    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class Shift(Function):
    name = 'shift'

    def forward(self, x, offset=0.0):
        return x + np.asarray(offset, dtype=x.dtype)

    def backward(self, grad):
        return (grad,)


class Scale(Function):
    name = 'scale'

    def forward(self, x, factor=1.0):
        self.factor = np.asarray(factor, dtype=x.dtype)
        return x * self.factor

    def backward(self, grad):
        return (grad * self.factor,)


_BINARY_OPS = {'add': Add, 'sub': Sub, 'mul': Mul}


def elementwise(op_kind: str, a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    """add / sub / mul / scale with equal shapes or a scalar right operand."""
    if op_kind not in ('add', 'sub', 'mul', 'scale'):
        raise ContractError(f"unknown elementwise op '{op_kind}'")
    if _is_scalar(b):
        if op_kind == 'add':
            return Shift.apply(a, offset=float(b))
        if op_kind == 'sub':
            return Shift.apply(a, offset=-float(b))
        return Scale.apply(a, factor=float(b))
    if op_kind == 'scale':
        raise ContractError("scale needs a scalar factor")
    if not isinstance(b, Tensor):
        b = Tensor(b)
    if a.shape != b.shape:
        raise ShapeError(op_kind, a.shape, b.shape)
    return _BINARY_OPS[op_kind].apply(a, b)


class MatMul(Function):
    name = 'matmul'

    def forward(self, a, b):
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError('matmul', a.shape, b.shape, detail='inner dims must agree')
    return MatMul.apply(a, b)


class BiasAdd(Function):
    name = 'bias_add'

    def forward(self, x, b):
        return x + b.reshape(1, -1)

    def backward(self, grad):
        return grad, grad.sum(axis=0)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError('bias_add', x.shape, b.shape)
    return BiasAdd.apply(x, b)


class Reshape(Function):
    name = 'reshape'

    def forward(self, x, shape=()):
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError('reshape', x.shape, shape)
    return Reshape.apply(x, shape=shape)


def _windows(padded: np.ndarray, kh: int, kw: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N, out_h, out_w, C, kh, kw) strided patch view."""
    view = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))
    view = view[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    return view.transpose(0, 2, 3, 1, 4, 5)


def _scatter_windows(cols: np.ndarray, padded_shape: Tuple[int, ...], stride: int) -> np.ndarray:
    """Adjoint of `_windows`: sum (N, out_h, out_w, C, kh, kw) patches into a padded map."""
    _, out_h, out_w, _, kh, kw = cols.shape
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


class Conv2d(Function):
    name = 'conv2d'

    def forward(self, x, w, b=None, stride=1, pad=0):
        n, _, h, width = x.shape
        cout, cin, kh, kw = w.shape
        self.stride, self.pad = stride, pad
        self.x_shape, self.w_shape = x.shape, w.shape
        out_h = (h + 2 * pad - kh) // stride + 1
        out_w = (width + 2 * pad - kw) // stride + 1
        padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        self.padded_shape = padded.shape
        self.cols = _windows(padded, kh, kw, stride, out_h, out_w).reshape(n * out_h * out_w, cin * kh * kw)
        self.w_mat = w.reshape(cout, -1)
        out = (self.cols @ self.w_mat.T).reshape(n, out_h, out_w, cout).transpose(0, 3, 1, 2)
        if b is not None:
            out = out + b.reshape(1, -1, 1, 1)
        return np.ascontiguousarray(out)

    def backward(self, grad):
        n, cout, out_h, out_w = grad.shape
        _, cin, kh, kw = self.w_shape
        _, _, h, width = self.x_shape
        p = self.pad
        g_mat = grad.transpose(0, 2, 3, 1).reshape(-1, cout)
        dw = (g_mat.T @ self.cols).reshape(self.w_shape)
        dcols = (g_mat @ self.w_mat).reshape(n, out_h, out_w, cin, kh, kw)
        dx = _scatter_windows(dcols, self.padded_shape, self.stride)[:, :, p:p + h, p:p + width]
        grads = [np.ascontiguousarray(dx), dw]
        if len(self.inputs) == 3:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return tuple(grads)


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Zero-padded cross-correlation, NCHW input and (Cout, Cin, kh, kw) kernel."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError('conv2d', x.shape, w.shape, detail='expected NCHW input and (Cout, Cin, kh, kw) kernel')
    if stride < 1 or pad < 0:
        raise ShapeError('conv2d', x.shape, w.shape, detail=f'invalid stride={stride} pad={pad}')
    _, _, h, width = x.shape
    _, _, kh, kw = w.shape
    if kh > h + 2 * pad or kw > width + 2 * pad:
        raise ShapeError('conv2d', x.shape, w.shape, detail=f'kernel larger than padded input (pad={pad})')
    if bias is None:
        return Conv2d.apply(x, w, stride=stride, pad=pad)
    if bias.shape != (w.shape[0],):
        raise ShapeError('conv2d', w.shape, bias.shape, detail='bias must have Cout entries')
    return Conv2d.apply(x, w, bias, stride=stride, pad=pad)


class ConvTranspose2d(Function):
    name = 'conv_transpose2d'

    def forward(self, x, w, b=None, stride=1, pad=0):
        n, cin, h, width = x.shape
        _, cout, kh, kw = w.shape
        self.stride, self.pad = stride, pad
        self.x_shape, self.w_shape = x.shape, w.shape
        full_h = (h - 1) * stride + kh
        full_w = (width - 1) * stride + kw
        self.x_mat = x.transpose(0, 2, 3, 1).reshape(-1, cin)
        self.w_mat = w.reshape(cin, -1)
        cols = (self.x_mat @ self.w_mat).reshape(n, h, width, cout, kh, kw)
        full = _scatter_windows(cols, (n, cout, full_h, full_w), stride)
        out = full[:, :, pad:full_h - pad, pad:full_w - pad]
        if b is not None:
            out = out + b.reshape(1, -1, 1, 1)
        return np.ascontiguousarray(out)

    def backward(self, grad):
        n, cin, h, width = self.x_shape
        _, cout, kh, kw = self.w_shape
        p = self.pad
        padded = np.pad(grad, ((0, 0), (0, 0), (p, p), (p, p)))
        gcols = _windows(padded, kh, kw, self.stride, h, width).reshape(n * h * width, cout * kh * kw)
        dx = (gcols @ self.w_mat.T).reshape(n, h, width, cin).transpose(0, 3, 1, 2)
        dw = (self.x_mat.T @ gcols).reshape(self.w_shape)
        grads = [np.ascontiguousarray(dx), dw]
        if len(self.inputs) == 3:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return tuple(grads)


def conv_transpose2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Transposed convolution; the kernel is laid out (Cin, Cout, kh, kw).

    Output size is (H - 1) * stride - 2 * pad + kh. With the same kernel tensor
    this is the adjoint of `conv2d`.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError('conv_transpose2d', x.shape, w.shape, detail='expected NCHW input and (Cin, Cout, kh, kw) kernel')
    if stride < 1 or pad < 0:
        raise ShapeError('conv_transpose2d', x.shape, w.shape, detail=f'invalid stride={stride} pad={pad}')
    out_h = (x.shape[2] - 1) * stride - 2 * pad + w.shape[2]
    out_w = (x.shape[3] - 1) * stride - 2 * pad + w.shape[3]
    if out_h < 1 or out_w < 1:
        raise ShapeError('conv_transpose2d', x.shape, w.shape, detail=f'nonpositive output {out_h}x{out_w}')
    if bias is None:
        return ConvTranspose2d.apply(x, w, stride=stride, pad=pad)
    if bias.shape != (w.shape[1],):
        raise ShapeError('conv_transpose2d', w.shape, bias.shape, detail='bias must have Cout entries')
    return ConvTranspose2d.apply(x, w, bias, stride=stride, pad=pad)


@dataclass
class RunningStats:
    """Per-channel batch-norm statistics used in eval mode."""
    mean: np.ndarray
    var: np.ndarray
    momentum: float = BN_MOMENTUM

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> 'RunningStats':
        return cls(mean=np.zeros(channels, dtype=dtype), var=np.ones(channels, dtype=dtype))


class BatchNormTrain(Function):
    name = 'batch_norm2d'

    def forward(self, x, gamma, beta, eps=BN_EPS):
        axes = (0, 2, 3)
        self.count = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
        self.x_hat = (x - mean) * self.inv_std
        self.gamma = gamma.reshape(1, -1, 1, 1)
        return self.gamma * self.x_hat + beta.reshape(1, -1, 1, 1)

    def backward(self, grad):
        axes = (0, 2, 3)
        dgamma = (grad * self.x_hat).sum(axis=axes)
        dbeta = grad.sum(axis=axes)
        dx_hat = grad * self.gamma
        dx = (self.inv_std / self.count) * (
            self.count * dx_hat
            - dx_hat.sum(axis=axes, keepdims=True)
            - self.x_hat * (dx_hat * self.x_hat).sum(axis=axes, keepdims=True)
        )
        return dx, dgamma, dbeta


class BatchNormEval(Function):
    name = 'batch_norm2d_eval'

    def forward(self, x, gamma, beta, mean=None, var=None, eps=BN_EPS):
        self.inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype).reshape(1, -1, 1, 1)
        self.x_hat = (x - mean.astype(x.dtype).reshape(1, -1, 1, 1)) * self.inv_std
        self.gamma = gamma.reshape(1, -1, 1, 1)
        return self.gamma * self.x_hat + beta.reshape(1, -1, 1, 1)

    def backward(self, grad):
        axes = (0, 2, 3)
        return grad * self.gamma * self.inv_std, (grad * self.x_hat).sum(axis=axes), grad.sum(axis=axes)


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = BN_EPS, mode: str = 'train',
                 running_stats: Optional[RunningStats] = None) -> Tensor:
    """Per-channel normalization over N, H, W.

    In train mode batch statistics are used and, when `running_stats` is given,
    its mean and unbiased variance are moved towards the batch by `momentum`.
    Eval mode normalizes with `running_stats` and requires them.
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError('batch_norm2d', x.shape, gamma.shape, beta.shape)
    if mode == 'eval':
        if running_stats is None:
            raise ContractError("batch_norm2d in eval mode needs running statistics")
        return BatchNormEval.apply(x, gamma, beta, mean=running_stats.mean, var=running_stats.var, eps=eps)
    if mode != 'train':
        raise ContractError(f"unknown batch norm mode '{mode}'")
    count = x.shape[0] * x.shape[2] * x.shape[3]
    if count < 2:
        raise DegenerateBatchError('batch_norm2d', x.shape, detail='N*H*W must be >= 2 in train mode')
    out = BatchNormTrain.apply(x, gamma, beta, eps=eps)
    if running_stats is not None:
        batch_mean = x.data.mean(axis=(0, 2, 3))
        batch_var = x.data.var(axis=(0, 2, 3)) * (count / (count - 1))
        m = running_stats.momentum
        dtype = running_stats.mean.dtype
        running_stats.mean = ((1 - m) * running_stats.mean + m * batch_mean).astype(dtype)
        running_stats.var = ((1 - m) * running_stats.var + m * batch_var).astype(dtype)
    return out


class LeakyReLU(Function):
    name = 'leaky_relu'

    def forward(self, x, slope=DEFAULT_LEAKY_SLOPE):
        self.slope = np.asarray(slope, dtype=x.dtype)
        self.positive = x >= 0
        return np.where(self.positive, x, self.slope * x)

    def backward(self, grad):
        return (np.where(self.positive, grad, self.slope * grad),)


class Tanh(Function):
    name = 'tanh'

    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1 - self.out * self.out),)


class Sigmoid(Function):
    name = 'sigmoid'

    def forward(self, x):
        e = np.exp(-np.abs(x))
        self.out = np.where(x >= 0, 1 / (1 + e), e / (1 + e))
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)


def activation(kind: str, x: Tensor, slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    if kind == 'leaky_relu':
        return LeakyReLU.apply(x, slope=slope)
    if kind == 'tanh':
        return Tanh.apply(x)
    if kind == 'sigmoid':
        return Sigmoid.apply(x)
    raise ContractError(f"unknown activation '{kind}'")


def leaky_relu(x: Tensor, slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    return activation('leaky_relu', x, slope)


def tanh(x: Tensor) -> Tensor:
    return activation('tanh', x)


def sigmoid(x: Tensor) -> Tensor:
    return activation('sigmoid', x)


class Concat(Function):
    name = 'concat'

    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    first = tensors[0]
    axis = axis % first.ndim if first.ndim else 0
    for t in tensors[1:]:
        same_rank = t.ndim == first.ndim
        if not same_rank or any(d1 != d2 for i, (d1, d2) in enumerate(zip(first.shape, t.shape)) if i != axis):
            raise ShapeError('concat', first.shape, t.shape, detail=f'dims must match except axis {axis}')
    return Concat.apply(*tensors, axis=axis)


class BCELoss(Function):
    name = 'bce_loss'

    def forward(self, pred, target, eps=BCE_EPS):
        self.p = np.clip(pred, eps, 1 - eps)
        self.t = target.astype(pred.dtype)
        losses = -(self.t * np.log(self.p) + (1 - self.t) * np.log(1 - self.p))
        return np.asarray(losses.mean(), dtype=pred.dtype)

    def backward(self, grad):
        # gradient at the clamped prediction
        dp = grad * (self.p - self.t) / (self.p * (1 - self.p)) / self.p.size
        return dp, None


def bce_loss(pred: Tensor, target: Union[Tensor, np.ndarray]) -> Tensor:
    """Mean binary cross-entropy of probabilities against {0, 1} targets."""
    if not isinstance(target, Tensor):
        target = Tensor(np.asarray(target, dtype=pred.data.dtype))
    if pred.shape != target.shape:
        raise ShapeError('bce_loss', pred.shape, target.shape)
    return BCELoss.apply(pred, target)


class ReduceMean(Function):
    name = 'reduce_mean'

    def forward(self, x):
        self.in_shape = x.shape
        return np.asarray(x.mean(), dtype=x.dtype)

    def backward(self, grad):
        n = int(np.prod(self.in_shape))
        return (np.full(self.in_shape, grad / n, dtype=grad.dtype),)


def reduce_mean(x: Tensor) -> Tensor:
    if x.size == 0:
        raise ShapeError('reduce_mean', x.shape, detail='empty tensor')
    return ReduceMean.apply(x)


def _accumulate(tensor: Tensor, grad: np.ndarray):
    grad = np.asarray(grad, dtype=tensor.data.dtype)
    if tensor.grad is None:
        tensor.grad = grad.copy()
    else:
        tensor.grad += grad


def backward(loss: Tensor, tape: Tape):
    """Populate `.grad` on every requires_grad leaf recorded on `tape`.

    Gradients are summed into existing buffers; call `zero_grads` between
    updates. Leaves on the tape that do not reach `loss` get zero gradients.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    if loss.creator is None or not any(node is loss.creator for node in tape.nodes):
        raise ContractError("loss is not reachable from the tape")

    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        out_grad = pending.pop(id(node.output), None)
        if out_grad is None:
            continue
        for tensor, grad in zip(node.inputs, node.backward(out_grad)):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor.creator is None:
                _accumulate(tensor, grad)
            else:
                key = id(tensor)
                pending[key] = pending[key] + grad if key in pending else grad

    for node in tape.nodes:
        for tensor in node.inputs:
            if tensor.requires_grad and tensor.creator is None and tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.data)


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-3,
                      indices: Optional[Iterable[int]] = None) -> float:
    """Max relative error between autodiff and central differences of `f` at `x`.

    `f` must be pure and return a scalar tensor. The numeric pass evaluates
    `f` with `x` temporarily promoted to float64. Relative error per
    coordinate is |a - n| / max(|a|, |n|, 1e-6).
    """
    was_requiring = x.requires_grad
    x.requires_grad = True
    x.grad = None
    try:
        with Tape() as tape:
            out = f(x)
        backward(out, tape)
        analytic = (x.grad if x.grad is not None else np.zeros_like(x.data)).astype(np.float64).reshape(-1)
    finally:
        x.requires_grad = was_requiring

    original = x.data
    base = original.astype(np.float64)
    coords = range(x.size) if indices is None else indices
    worst = 0.0
    try:
        for i in coords:
            probe = base.copy()
            probe.flat[i] += eps
            x.data = probe
            plus = float(f(x).data)
            probe.flat[i] -= 2 * eps
            minus = float(f(x).data)
            numeric = (plus - minus) / (2 * eps)
            a = analytic[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, err)
    finally:
        x.data = original
        x.grad = None
    return worst
