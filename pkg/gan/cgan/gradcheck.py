"""
gradcheck.py - Finite-difference verification of every differentiable operation.

Each check reduces an op's output to a scalar through fixed random weights and
compares autodiff gradients with central differences. All inputs are float64
and kept away from non-smooth points (|x| >= 0.1 for leaky ReLU, predictions
in (0.05, 0.95) for BCE).
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from .nets import IMAGE_SIZE, build_discriminator, build_generator, forward_discriminator, forward_generator, sample_labels
from .tensor_core import (
    Tensor,
    batch_norm2d,
    bce_loss,
    concat,
    conv2d,
    conv_transpose2d,
    elementwise,
    finite_diff_check,
    leaky_relu,
    matmul,
    reduce_mean,
    sigmoid,
    tanh,
)

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = 5
PASS_THRESHOLD = 1e-2
OP_EPS = 1e-6
COMPOSITE_EPS = 1e-6
SAMPLES_PER_LAYER = 20
COMPOSITE_G_WIDTHS = (8, 4, 2)
COMPOSITE_D_WIDTHS = (2, 4, 8)


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < PASS_THRESHOLD


def _param(rng, *shape, low=-1.0, high=1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _away_from_zero(rng, *shape, margin=0.1) -> Tensor:
    magnitude = rng.uniform(margin, 1.0, size=shape)
    return Tensor(np.where(rng.random(shape) < 0.5, -magnitude, magnitude), requires_grad=True)


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return reduce_mean(elementwise('mul', out, Tensor(weights)))


def _check(f: Callable[..., Tensor], inputs: Sequence[Tensor], rng, eps: float = OP_EPS) -> float:
    """Worst relative error over every input of f(*inputs) weighted to a scalar."""
    probe = f(*inputs)
    weights = rng.uniform(0.5, 1.5, size=probe.shape)
    worst = 0.0
    for position, x in enumerate(inputs):
        def scalar(t, position=position):
            args = list(inputs)
            args[position] = t
            return _weighted(f(*args), weights)
        worst = max(worst, finite_diff_check(scalar, x, eps=eps))
    return worst


def _op_checks(rng) -> List[GradCheckResult]:
    results = []

    def record(name, f, *inputs):
        results.append(GradCheckResult(name, _check(f, inputs, rng)))

    a, b = _param(rng, 3, 4), _param(rng, 3, 4)
    record('add', lambda x, y: elementwise('add', x, y), a, b)
    record('sub', lambda x, y: elementwise('sub', x, y), a, b)
    record('mul', lambda x, y: elementwise('mul', x, y), a, b)
    record('scale', lambda x: elementwise('scale', x, -1.7), a)
    record('matmul', matmul, _param(rng, 3, 5), _param(rng, 5, 2))

    x = _param(rng, 2, 3, 6, 6)
    w = _param(rng, 4, 3, 4, 4, low=-0.5, high=0.5)
    bias = _param(rng, 4)
    record('conv2d', lambda x_, w_, b_: conv2d(x_, w_, b_, stride=2, pad=1), x, w, bias)

    xt = _param(rng, 2, 4, 3, 3)
    wt = _param(rng, 4, 3, 4, 4, low=-0.5, high=0.5)
    bt = _param(rng, 3)
    record('conv_transpose2d', lambda x_, w_, b_: conv_transpose2d(x_, w_, b_, stride=2, pad=1), xt, wt, bt)

    xb = _param(rng, 4, 3, 3, 3)
    gamma, beta = _param(rng, 3, low=0.5, high=1.5), _param(rng, 3)
    record('batch_norm2d', lambda x_, g_, b_: batch_norm2d(x_, g_, b_), xb, gamma, beta)

    record('leaky_relu', lambda x_: leaky_relu(x_, 0.2), _away_from_zero(rng, 3, 5))
    record('tanh', tanh, _param(rng, 3, 5, low=-2, high=2))
    record('sigmoid', sigmoid, _param(rng, 3, 5, low=-3, high=3))
    record('concat', lambda x_, y_: concat([x_, y_], axis=1), _param(rng, 2, 3), _param(rng, 2, 4))

    target = (rng.random((6, 1)) < 0.5).astype(np.float64)
    results.append(GradCheckResult('bce_loss', finite_diff_check(
        lambda p: bce_loss(p, target), _param(rng, 6, 1, low=0.05, high=0.95), eps=OP_EPS)))
    results.append(GradCheckResult('reduce_mean', finite_diff_check(reduce_mean, _param(rng, 4, 5), eps=OP_EPS)))
    return results


def composite_check(seed: int, samples_per_layer: int = SAMPLES_PER_LAYER) -> GradCheckResult:
    """BCE(D(G(z, y), y), 1) against a sampled subset of every G and D parameter.

    Narrow float64 networks keep the full 32x32 geometry.
    """
    rng = np.random.default_rng([seed, 1])
    generator = build_generator(z_dim=6, rng=rng, widths=COMPOSITE_G_WIDTHS, dtype=np.float64)
    discriminator = build_discriminator(rng=rng, widths=COMPOSITE_D_WIDTHS, dtype=np.float64)
    z = Tensor(rng.uniform(-1, 1, size=(3, 6)))
    labels = sample_labels(3, rng)
    ones = np.ones((3, 1))

    def loss() -> Tensor:
        fake = forward_generator(generator, z, labels, update_stats=False)
        return bce_loss(forward_discriminator(discriminator, fake, labels, update_stats=False), ones)

    worst = 0.0
    for name, p in generator.named_parameters() + discriminator.named_parameters():
        k = min(samples_per_layer, p.size)
        indices = rng.choice(p.size, size=k, replace=False)
        err = finite_diff_check(lambda _t: loss(), p, eps=COMPOSITE_EPS, indices=indices)
        logger.debug(f"composite {name}: max rel err {err:.2e} over {k} coordinates")
        worst = max(worst, err)
    return GradCheckResult('composite D(G(z,y),y)', worst)


def adjoint_check(seed: int) -> float:
    """Relative gap between <conv2d(x, w), y> and <x, conv_transpose2d(y, w)>."""
    rng = np.random.default_rng([seed, 2])
    x = Tensor(rng.normal(size=(2, 3, IMAGE_SIZE // 4, IMAGE_SIZE // 4)))
    w = Tensor(rng.normal(size=(5, 3, 4, 4)))
    forward = conv2d(x, w, stride=2, pad=1)
    y = Tensor(rng.normal(size=forward.shape))
    lhs = float(np.sum(forward.data * y.data))
    rhs = float(np.sum(x.data * conv_transpose2d(y, w, stride=2, pad=1).data))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-12)


def run_gradcheck_suite(seed: int, n_seeds: int = DEFAULT_SEEDS, composite: bool = True) -> List[GradCheckResult]:
    """Max error per check over `n_seeds` consecutive seeds starting at `seed`."""
    worst = {}
    for k in range(n_seeds):
        rng = np.random.default_rng([seed + k, 0])
        checks = _op_checks(rng)
        if composite:
            checks.append(composite_check(seed + k))
        checks.append(GradCheckResult('adjoint conv2d/conv_transpose2d', adjoint_check(seed + k)))
        for result in checks:
            worst[result.name] = max(worst.get(result.name, 0.0), result.max_rel_err)
    results = [GradCheckResult(name, err) for name, err in worst.items()]
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.warning(f"Gradient check failed for: {', '.join(failed)}")
    else:
        logger.info(f"All {len(results)} gradient checks passed over {n_seeds} seeds")
    return results
