"""Adam optimizer with bias correction, one state per network."""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np

from .errors import ContractError, PoisonedGradientError
from .tensor_core import Tensor

logger = logging.getLogger(__name__)

DEFAULT_LR = 0.0002
DEFAULT_BETA1 = 0.5
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8

NamedParams = Sequence[Tuple[str, Tensor]]


@dataclass
class AdamState:
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_EPS
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: NamedParams, **hyper) -> 'AdamState':
        state = cls(**hyper)
        for name, p in params:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def zero_grads(params: Iterable[Tensor]):
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        else:
            p.grad.fill(0)


def adam_step(params: NamedParams, state: AdamState):
    """One Adam update of every named parameter from its `.grad`.

    The whole step is refused if any gradient is missing, misshapen or non-finite.
    """
    params = list(params)
    for name, p in params:
        if p.grad is None:
            raise ContractError(f"parameter '{name}' has no gradient")
        if p.grad.shape != p.data.shape:
            raise ContractError(f"gradient shape {list(p.grad.shape)} != parameter shape {list(p.data.shape)} for '{name}'")
        if name not in state.m:
            raise ContractError(f"optimizer state has no moments for '{name}'")
        if not np.all(np.isfinite(p.grad)):
            raise PoisonedGradientError(name)

    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t
    for name, p in params:
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        p.data = (p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)


class Adam:
    """Adam bound to one network's named parameters."""

    def __init__(self, named_params: NamedParams, lr: float = DEFAULT_LR, beta1: float = DEFAULT_BETA1,
                 beta2: float = DEFAULT_BETA2, eps: float = DEFAULT_EPS):
        self.named_params = list(named_params)
        self.state = AdamState.for_params(self.named_params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        logger.debug(f"Adam over {len(self.named_params)} tensors (lr={lr}, beta1={beta1}, beta2={beta2})")

    def zero_grad(self):
        zero_grads(p for _, p in self.named_params)

    def step(self):
        adam_step(self.named_params, self.state)
