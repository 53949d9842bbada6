import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from shrinkmeta import optim
from shrinkmeta.optim import AdamState, ProxConfig
from shrinkmeta.prior import ContractError

finite = st.floats(-10, 10)


def test_prox_gd_fixed_point():
    phi = np.array([0.5, -1.0])
    out = optim.prox_gd_step(phi.copy(), np.zeros(2), ProxConfig(0.1, 3.0, phi))
    np.testing.assert_array_equal(out, phi)


def test_prox_gd_direct_value():
    out = optim.prox_gd_step(np.array([1.0]), np.zeros(1), ProxConfig(0.1, 10.0, np.zeros(1)))
    assert out[0] == 0.5


@given(arrays(float, 5, elements=finite), arrays(float, 5, elements=finite),
       arrays(float, 5, elements=finite), st.floats(1e-4, 1.0))
def test_lambda_zero_is_plain_gd(theta, g, phi, lr):
    out = optim.prox_gd_step(theta, g, ProxConfig(lr, 0.0, phi))
    np.testing.assert_array_equal(out, theta - lr * g)


@given(arrays(float, 5, elements=finite), arrays(float, 5, elements=finite),
       arrays(float, 5, elements=finite), st.floats(1e-4, 1e-1), st.integers(1, 4))
def test_lambda_zero_is_plain_adam(theta, g, phi, lr, steps):
    s1 = AdamState.zeros(5)
    s2 = AdamState.zeros(5)
    a = theta.copy()
    b = theta.copy()
    cfg = ProxConfig(lr, 0.0, phi)
    for _ in range(steps):
        a, s1 = optim.prox_adam_step(a, g, s1, cfg)
        b, s2, _ = optim.adam_step(b, g, s2, lr)
    assert np.max(np.abs(a - b)) <= 1e-15
    # the prox never touches the moment estimates
    np.testing.assert_array_equal(s1.m, s2.m)
    np.testing.assert_array_equal(s1.v, s2.v)


def test_prox_adam_shrink_synthetic_vhat():
    eps = 1e-8
    lam_alpha = 3.0
    cfg = ProxConfig(1.0, lam_alpha * np.sqrt(eps), np.zeros(1))
    out = optim.prox_adam_shrink(np.array([1.0]), np.zeros(1), cfg, eps)
    assert abs(out[0] - 0.25) < 1e-15


def test_prox_adam_golden_step():
    # independent scalar transcription of one bias-corrected Adam step plus the shrink
    theta, state = optim.prox_adam_step(np.array([1.0]), np.array([0.5]), AdamState.zeros(1),
                                        ProxConfig(1e-3, 1.0, np.zeros(1)))
    assert theta[0] == pytest.approx(0.9970059880837128, rel=1e-15, abs=0)
    assert state.t == 1


@given(arrays(float, 6, elements=finite), arrays(float, 6, elements=finite),
       arrays(float, 6, elements=st.floats(0, 100)), st.floats(1e-3, 1.0))
def test_prox_is_contraction(theta_half, phi, lam, lr):
    out = optim.prox_shrink(theta_half, ProxConfig(lr, lam, phi))
    d_out = np.abs(out - phi)
    d_in = np.abs(theta_half - phi)
    assert np.all(d_out <= d_in + 1e-12)
    strict = (lam * lr > 1e-8) & (d_in > 1e-6)
    assert np.all(d_out[strict] < d_in[strict])


def test_prox_gd_converges_to_map():
    # x ~ N(theta, 1), N = 4 points with mean 2; prior N(0, 1)
    N, xbar, s2 = 4, 2.0, 1.0
    theta = np.zeros(1)
    cfg = ProxConfig(0.1, 1 / s2, np.zeros(1))
    for _ in range(400):
        theta = optim.prox_gd_step(theta, N * (theta - xbar), cfg)
    assert abs(theta[0] - 1.6) < 1e-8


def test_config_validation():
    with pytest.raises(ContractError):
        ProxConfig(-0.1, 1.0, np.zeros(1))
    with pytest.raises(ContractError):
        ProxConfig(0.1, -1.0, np.zeros(1))


def test_linear_decay():
    assert optim.linear_decay(1.0, 0, 10) == 1.0
    assert optim.linear_decay(1.0, 5, 10) == 0.5
    assert optim.linear_decay(2.0, 10, 10, final_frac=0.1) == pytest.approx(0.2)
