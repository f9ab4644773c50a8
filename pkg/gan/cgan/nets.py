"""Conditional generator / discriminator for 32x32 grayscale images.

Generator: concat(z, one_hot(y)) -> dense -> 256x4x4 -> three 4x4 stride-2
transposed convolutions (4 -> 8 -> 16 -> 32), batch norm and leaky ReLU on
hidden blocks, tanh head.

Discriminator: image plus 9 constant label planes -> three 4x4 stride-2
convolutions (32 -> 16 -> 8 -> 4), batch norm on all hidden blocks except
the first, dense head, sigmoid.
"""
import logging
from dataclasses import dataclass
from numbers import Integral
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, LabelError, ShapeError
from .tensor_core import (
    DEFAULT_LEAKY_SLOPE,
    RunningStats,
    Tensor,
    batch_norm2d,
    bias_add,
    concat,
    conv2d,
    conv_transpose2d,
    leaky_relu,
    matmul,
    reshape,
    sigmoid,
    tanh,
)

logger = logging.getLogger(__name__)

GLEASON_SCORES = (0, 2, 3, 4, 5, 6, 7, 8, 9)
N_CLASSES = len(GLEASON_SCORES)
_SCORE_TO_INDEX = {score: index for index, score in enumerate(GLEASON_SCORES)}

IMAGE_SIZE = 32
BASE_SIZE = 4
KERNEL = 4
STRIDE = 2
PAD = 1
INIT_STD = 0.02
DEFAULT_Z_DIM = 100
DEFAULT_G_WIDTHS = (256, 128, 64)
DEFAULT_D_WIDTHS = (64, 128, 256)


@dataclass(frozen=True, order=True)
class GleasonLabel:
    score: int

    def __post_init__(self):
        if isinstance(self.score, bool) or not isinstance(self.score, Integral) \
                or int(self.score) not in _SCORE_TO_INDEX:
            raise LabelError(self.score)
        object.__setattr__(self, 'score', int(self.score))

    @property
    def class_index(self) -> int:
        return _SCORE_TO_INDEX[self.score]

    @classmethod
    def from_index(cls, class_index: int) -> 'GleasonLabel':
        if not 0 <= int(class_index) < N_CLASSES:
            raise ContractError(f"class index {class_index} outside [0, {N_CLASSES - 1}]")
        return cls(GLEASON_SCORES[int(class_index)])

    def one_hot(self, dtype=np.float32) -> np.ndarray:
        vector = np.zeros(N_CLASSES, dtype=dtype)
        vector[self.class_index] = 1
        return vector

    def __str__(self) -> str:
        return f"gleason-{self.score}"


LabelLike = Union[GleasonLabel, int]


def as_label(value: LabelLike) -> GleasonLabel:
    return value if isinstance(value, GleasonLabel) else GleasonLabel(value)


def one_hot_batch(labels: Sequence[LabelLike], dtype=np.float32) -> np.ndarray:
    indices = [as_label(label).class_index for label in labels]
    return np.eye(N_CLASSES, dtype=dtype)[indices]


def sample_labels(n: int, rng: np.random.Generator) -> List[GleasonLabel]:
    """Uniform draw over the 9 classes."""
    return [GleasonLabel.from_index(i) for i in rng.integers(0, N_CLASSES, size=n)]


def init_weights(shape: Sequence[int], rng: np.random.Generator, std: float = INIT_STD,
                 dtype=np.float32) -> Tensor:
    """i.i.d. N(0, std^2) entries."""
    return Tensor(rng.normal(0.0, std, size=tuple(shape)).astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


@dataclass
class Net:
    params: Dict[str, Tensor]
    running: Dict[str, RunningStats]
    leaky_slope: float = DEFAULT_LEAKY_SLOPE

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return list(self.params.items())

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def named_state(self) -> Dict[str, np.ndarray]:
        """Parameters followed by batch-norm running statistics, in a fixed order."""
        state = {name: p.data for name, p in self.params.items()}
        for name, stats in self.running.items():
            state[f"{name}.running_mean"] = stats.mean
            state[f"{name}.running_var"] = stats.var
        return state

    def load_state(self, state: Dict[str, np.ndarray]):
        expected = self.named_state()
        missing = [name for name in expected if name not in state]
        if missing:
            raise ContractError(f"state is missing entries: {', '.join(missing)}")
        for name, current in expected.items():
            if tuple(state[name].shape) != tuple(current.shape):
                raise ShapeError('load_state', current.shape, state[name].shape, detail=name)
        for name, p in self.params.items():
            p.data = np.array(state[name], dtype=p.data.dtype)
            p.grad = None
        for name, stats in self.running.items():
            stats.mean = np.array(state[f"{name}.running_mean"], dtype=stats.mean.dtype)
            stats.var = np.array(state[f"{name}.running_var"], dtype=stats.var.dtype)


@dataclass
class GeneratorNet(Net):
    z_dim: int = DEFAULT_Z_DIM
    n_classes: int = N_CLASSES
    widths: Tuple[int, ...] = DEFAULT_G_WIDTHS


@dataclass
class DiscriminatorNet(Net):
    n_classes: int = N_CLASSES
    widths: Tuple[int, ...] = DEFAULT_D_WIDTHS


def build_generator(z_dim: int = DEFAULT_Z_DIM, n_classes: int = N_CLASSES,
                    rng: np.random.Generator = None, widths: Sequence[int] = DEFAULT_G_WIDTHS,
                    dtype=np.float32, leaky_slope: float = DEFAULT_LEAKY_SLOPE) -> GeneratorNet:
    if z_dim < 1:
        raise ContractError(f"z_dim must be >= 1, got {z_dim}")
    if n_classes != N_CLASSES:
        raise ContractError(f"the label set has {N_CLASSES} classes, got n_classes={n_classes}")
    if len(widths) != 3 or min(widths) < 1:
        raise ContractError(f"generator needs three positive widths, got {list(widths)}")
    rng = rng if rng is not None else np.random.default_rng(0)
    w0, w1, w2 = (int(w) for w in widths)
    k = KERNEL
    params = {
        'dense.weight': init_weights((z_dim + n_classes, w0 * BASE_SIZE * BASE_SIZE), rng, dtype=dtype),
        'dense.bias': _zeros(w0 * BASE_SIZE * BASE_SIZE, dtype),
        'bn0.gamma': _ones(w0, dtype),
        'bn0.beta': _zeros(w0, dtype),
        'deconv1.weight': init_weights((w0, w1, k, k), rng, dtype=dtype),
        'deconv1.bias': _zeros(w1, dtype),
        'bn1.gamma': _ones(w1, dtype),
        'bn1.beta': _zeros(w1, dtype),
        'deconv2.weight': init_weights((w1, w2, k, k), rng, dtype=dtype),
        'deconv2.bias': _zeros(w2, dtype),
        'bn2.gamma': _ones(w2, dtype),
        'bn2.beta': _zeros(w2, dtype),
        'deconv3.weight': init_weights((w2, 1, k, k), rng, dtype=dtype),
        'deconv3.bias': _zeros(1, dtype),
    }
    for name, p in params.items():
        p.name = f"G.{name}"
    running = {f"bn{i}": RunningStats.fresh(w, dtype) for i, w in enumerate((w0, w1, w2))}
    net = GeneratorNet(params=params, running=running, leaky_slope=leaky_slope,
                       z_dim=z_dim, n_classes=n_classes, widths=(w0, w1, w2))
    logger.debug(f"Built generator with {net.parameter_count():,} parameters, widths={net.widths}")
    return net


def build_discriminator(n_classes: int = N_CLASSES, rng: np.random.Generator = None,
                        widths: Sequence[int] = DEFAULT_D_WIDTHS, dtype=np.float32,
                        leaky_slope: float = DEFAULT_LEAKY_SLOPE) -> DiscriminatorNet:
    if n_classes != N_CLASSES:
        raise ContractError(f"the label set has {N_CLASSES} classes, got n_classes={n_classes}")
    if len(widths) != 3 or min(widths) < 1:
        raise ContractError(f"discriminator needs three positive widths, got {list(widths)}")
    rng = rng if rng is not None else np.random.default_rng(0)
    w0, w1, w2 = (int(w) for w in widths)
    k = KERNEL
    params = {
        'conv1.weight': init_weights((w0, 1 + n_classes, k, k), rng, dtype=dtype),
        'conv1.bias': _zeros(w0, dtype),
        'conv2.weight': init_weights((w1, w0, k, k), rng, dtype=dtype),
        'conv2.bias': _zeros(w1, dtype),
        'bn2.gamma': _ones(w1, dtype),
        'bn2.beta': _zeros(w1, dtype),
        'conv3.weight': init_weights((w2, w1, k, k), rng, dtype=dtype),
        'conv3.bias': _zeros(w2, dtype),
        'bn3.gamma': _ones(w2, dtype),
        'bn3.beta': _zeros(w2, dtype),
        'head.weight': init_weights((w2 * BASE_SIZE * BASE_SIZE, 1), rng, dtype=dtype),
        'head.bias': _zeros(1, dtype),
    }
    for name, p in params.items():
        p.name = f"D.{name}"
    running = {'bn2': RunningStats.fresh(w1, dtype), 'bn3': RunningStats.fresh(w2, dtype)}
    net = DiscriminatorNet(params=params, running=running, leaky_slope=leaky_slope,
                           n_classes=n_classes, widths=(w0, w1, w2))
    logger.debug(f"Built discriminator with {net.parameter_count():,} parameters, widths={net.widths}")
    return net


def _norm_act(net: Net, block: str, h: Tensor, mode: str, update_stats: bool) -> Tensor:
    p = net.params
    stats = net.running[block]
    if mode == 'train' and not update_stats:
        stats = None
    h = batch_norm2d(h, p[f"{block}.gamma"], p[f"{block}.beta"], mode=mode, running_stats=stats)
    return leaky_relu(h, net.leaky_slope)


def forward_generator(net: GeneratorNet, z: Tensor, labels: Sequence[LabelLike], mode: str = 'train',
                      update_stats: bool = True) -> Tensor:
    """G(z, y) -> N x 1 x 32 x 32 images in [-1, 1].

    `update_stats=False` keeps batch-norm running statistics untouched in
    train mode (used when the generator only supplies fakes).
    """
    if z.ndim != 2 or z.shape[1] != net.z_dim:
        raise ShapeError('forward_generator', z.shape, detail=f'expected N x {net.z_dim} noise')
    if len(labels) != z.shape[0]:
        raise ContractError(f"got {len(labels)} labels for a batch of {z.shape[0]}")
    n = z.shape[0]
    p = net.params
    y = Tensor(one_hot_batch(labels, dtype=z.data.dtype))
    h = bias_add(matmul(concat([z, y], axis=1), p['dense.weight']), p['dense.bias'])
    h = reshape(h, (n, net.widths[0], BASE_SIZE, BASE_SIZE))
    h = _norm_act(net, 'bn0', h, mode, update_stats)
    h = conv_transpose2d(h, p['deconv1.weight'], p['deconv1.bias'], stride=STRIDE, pad=PAD)
    h = _norm_act(net, 'bn1', h, mode, update_stats)
    h = conv_transpose2d(h, p['deconv2.weight'], p['deconv2.bias'], stride=STRIDE, pad=PAD)
    h = _norm_act(net, 'bn2', h, mode, update_stats)
    h = conv_transpose2d(h, p['deconv3.weight'], p['deconv3.bias'], stride=STRIDE, pad=PAD)
    return tanh(h)


def label_planes(labels: Sequence[LabelLike], size: int = IMAGE_SIZE, dtype=np.float32) -> np.ndarray:
    """N x 9 x size x size constant planes encoding the one-hot label."""
    onehot = one_hot_batch(labels, dtype=dtype)
    return np.ascontiguousarray(np.broadcast_to(onehot[:, :, None, None], onehot.shape + (size, size)))


def forward_discriminator(net: DiscriminatorNet, x: Tensor, labels: Sequence[LabelLike], mode: str = 'train',
                          update_stats: bool = True) -> Tensor:
    """D(x, y) -> N x 1 probabilities."""
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (IMAGE_SIZE, IMAGE_SIZE):
        raise ShapeError('forward_discriminator', x.shape, detail=f'expected N x 1 x {IMAGE_SIZE} x {IMAGE_SIZE}')
    if len(labels) != x.shape[0]:
        raise ContractError(f"got {len(labels)} labels for a batch of {x.shape[0]}")
    n = x.shape[0]
    p = net.params
    planes = Tensor(label_planes(labels, dtype=x.data.dtype))
    h = conv2d(concat([x, planes], axis=1), p['conv1.weight'], p['conv1.bias'], stride=STRIDE, pad=PAD)
    h = leaky_relu(h, net.leaky_slope)
    h = conv2d(h, p['conv2.weight'], p['conv2.bias'], stride=STRIDE, pad=PAD)
    h = _norm_act(net, 'bn2', h, mode, update_stats)
    h = conv2d(h, p['conv3.weight'], p['conv3.bias'], stride=STRIDE, pad=PAD)
    h = _norm_act(net, 'bn3', h, mode, update_stats)
    h = reshape(h, (n, net.widths[2] * BASE_SIZE * BASE_SIZE))
    return sigmoid(bias_add(matmul(h, p['head.weight']), p['head.bias']))
