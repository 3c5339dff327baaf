import numpy as np
import pytest

from oucopula import NumericalError, Parameter
from oucopula.optim import AdamState, adam_step


def test_first_step_with_unit_gradient_moves_by_lr():
    # hand evaluation: m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
    p = Parameter(np.array([0.0]), path="w")
    p.grad.data[...] = 1.0
    state = AdamState(lr=0.1)
    adam_step(state, [p])
    expected = -0.1 * 1.0 / (1.0 + 1e-8)
    assert np.allclose(p.value.data, expected, rtol=0, atol=1e-18)
    assert abs(p.value.data[0] + 0.1) < 1e-8


def test_matches_reference_recurrence_over_many_steps():
    rng = np.random.default_rng(21)
    theta = rng.normal(size=(3, 2))
    p = Parameter(theta.copy(), path="w")
    state = AdamState(lr=0.05, beta1=0.9, beta2=0.999, eps=1e-8)

    ref = theta.copy()
    m = np.zeros_like(ref)
    v = np.zeros_like(ref)
    for step in range(1, 26):
        g = rng.normal(size=ref.shape)
        p.grad.data[...] = g
        adam_step(state, [p])

        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mhat = m / (1.0 - 0.9 ** step)
        vhat = v / (1.0 - 0.999 ** step)
        ref = ref - 0.05 * mhat / (np.sqrt(vhat) + 1e-8)
        assert np.allclose(p.value.data, ref, rtol=0, atol=1e-14)


def test_gradients_cleared_after_step():
    p = Parameter(np.zeros(2), path="w")
    p.grad.data[...] = 3.0
    adam_step(AdamState(lr=0.01), [p])
    assert np.all(p.grad.data == 0.0)


def test_nonfinite_gradient_rejected_with_parameter_path():
    p = Parameter(np.zeros(2), path="block1.conv.weight")
    p.grad.data[...] = [1.0, np.nan]
    state = AdamState(lr=0.01)
    with pytest.raises(NumericalError, match="block1.conv.weight"):
        adam_step(state, [p])
    # the failed step must not advance the step counter or the parameter
    assert state.step_count == 0
    assert np.all(p.value.data == 0.0)


def test_state_tracks_parameters_independently():
    a = Parameter(np.zeros(1), path="a")
    b = Parameter(np.zeros(1), path="b")
    state = AdamState(lr=0.1)
    a.grad.data[...] = 1.0
    b.grad.data[...] = -1.0
    adam_step(state, [a, b])
    assert a.value.data[0] < 0 < b.value.data[0]
    assert np.allclose(a.value.data, -b.value.data, atol=1e-15)
