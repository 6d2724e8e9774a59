"""Adam update oracles and the trainability contract."""

import numpy as np
import pytest

from burnadapt.autodiff import Parameter
from burnadapt.errors import ContractError
from burnadapt.optim import Adam


def test_zero_gradient_leaves_parameter_unchanged():
    p = Parameter(np.array([1.0, -2.0], dtype=np.float32))
    opt = Adam([p], lr=0.1)
    p.grad = np.zeros_like(p.data)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_first_step_closed_form():
    # bias correction makes the first update ~ -lr * sign(g)
    p = Parameter(np.array([0.0], dtype=np.float64))
    opt = Adam([p], lr=0.1)
    p.grad = np.array([1.0])
    opt.step()
    expected = -0.1 * 1.0 / (1.0 + 1e-8)
    np.testing.assert_allclose(p.data, [expected], rtol=1e-12)


def test_frozen_parameter_never_written():
    p = Parameter(np.array([3.0], dtype=np.float32), trainable=False)
    q = Parameter(np.array([3.0], dtype=np.float32))
    opt = Adam([p, q], lr=0.5)
    p.grad = np.array([10.0], dtype=np.float32)
    q.grad = np.array([10.0], dtype=np.float32)
    before = p.data.tobytes()
    opt.step()
    assert p.data.tobytes() == before
    assert not np.array_equal(q.data, [3.0])


def test_shape_mismatch_rejected():
    p = Parameter(np.zeros(3, dtype=np.float32))
    opt = Adam([p])
    p.grad = np.zeros(4, dtype=np.float32)
    with pytest.raises(ContractError):
        opt.step()


def test_state_roundtrip_preserves_trajectory():
    def make():
        p = Parameter(np.array([1.0, 2.0], dtype=np.float64))
        return p, Adam([p], lr=0.05)

    p1, o1 = make()
    p1.name = "w"
    o1.params[0].name = "w"
    for i in range(3):
        p1.grad = np.array([0.5, -0.25]) * (i + 1)
        o1.step()
    state = o1.state_dict()

    p2, o2 = make()
    p2.name = "w"
    p2.data[:] = p1.data
    o2.load_state_dict(state)
    p1.grad = np.array([1.0, 1.0])
    p2.grad = np.array([1.0, 1.0])
    o1.step()
    o2.step()
    np.testing.assert_array_equal(p1.data, p2.data)
