#!/usr/bin/env python3
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from cgan.errors import ContractError, PoisonedGradientError
from cgan.optim import Adam, AdamState, adam_step, zero_grads
from cgan.tensor_core import Tape, Tensor, backward, reduce_mean


def quadratic_loss(w: Tensor, target: Tensor) -> Tensor:
    diff = w - target
    return reduce_mean(diff * diff)


def test_first_step_moves_by_learning_rate():
    w = Tensor(np.array([0.5, -0.25, 2.0], dtype=np.float32), requires_grad=True)
    w.grad = np.array([3.0, -0.1, 40.0], dtype=np.float32)
    state = AdamState.for_params([('w', w)], lr=0.01)
    adam_step([('w', w)], state)
    np.testing.assert_allclose(w.data, [0.49, -0.24, 1.99], atol=1e-6)
    assert state.t == 1


def test_adam_converges_on_quadratic():
    target = Tensor(np.array([0.7, -0.3, 0.1, -0.9], dtype=np.float32))
    w = Tensor(np.zeros(4, dtype=np.float32), requires_grad=True)
    opt = Adam([('w', w)], lr=0.01)
    for _ in range(2000):
        opt.zero_grad()
        with Tape() as tape:
            loss = quadratic_loss(w, target)
        backward(loss, tape)
        opt.step()
    np.testing.assert_allclose(w.data, target.data, atol=2e-2)
    assert opt.state.t == 2000


def test_poisoned_gradient_refuses_whole_step():
    a = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    b = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    a.grad = np.ones(3, dtype=np.float32)
    b.grad = np.array([1.0, np.nan], dtype=np.float32)
    state = AdamState.for_params([('a', a), ('b', b)])
    with pytest.raises(PoisonedGradientError, match="'b'"):
        adam_step([('a', a), ('b', b)], state)
    assert np.all(a.data == 1.0)
    assert state.t == 0
    assert np.all(state.m['a'] == 0)


def test_missing_gradient_is_contract_error():
    w = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    opt = Adam([('w', w)])
    with pytest.raises(ContractError):
        opt.step()


def test_gradient_shape_mismatch():
    w = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    w.grad = np.ones(4, dtype=np.float32)
    with pytest.raises(ContractError):
        Adam([('w', w)]).step()


def test_zero_grads_creates_and_clears():
    a = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    b = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    b.grad = np.full(2, 5.0, dtype=np.float32)
    zero_grads([a, b])
    assert a.grad.shape == (2, 2) and np.all(a.grad == 0)
    assert np.all(b.grad == 0)


def test_step_keeps_parameter_dtype():
    w = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    w.grad = np.ones(2, dtype=np.float32)
    Adam([('w', w)]).step()
    assert w.data.dtype == np.float32
