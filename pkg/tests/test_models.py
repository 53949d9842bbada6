import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from shrinkmeta.models import (Batch, GaussianObsModel, SinusoidMLP, fd_hvp, linear_exp1_matrix,
                               normal_mean_model, swirl_transform)
from shrinkmeta.prior import ContractError

from conftest import central_fd, rel_err


def gaussian_models():
    return [
        normal_mean_model(),
        GaussianObsModel(8, [64.0] * 4 + [25.0] * 4 + [1.0], "linear"),
        GaussianObsModel(10, 100.0, "swirl"),
    ]


def random_batch(model, rng, n=5):
    if isinstance(model, SinusoidMLP):
        x = rng.uniform(-5, 5, n)
        return Batch(x, 2.0 * np.sin(x - 1.0))
    return Batch(rng.normal(size=(n, model.obs_dim)) * 2.0)


def all_models():
    return gaussian_models() + [SinusoidMLP(8), SinusoidMLP()]


@pytest.mark.parametrize("model", all_models(), ids=lambda m: f"{m.name}-{m.dim}")
def test_grad_matches_fd(model, rng):
    batch = random_batch(model, rng)
    for _ in range(3):
        theta = rng.normal(size=model.dim)
        g = model.grad(theta, batch)
        fd = central_fd(lambda t: model.loss(t, batch), theta)
        assert rel_err(g, fd) <= 1e-5


@pytest.mark.parametrize("model", all_models(), ids=lambda m: f"{m.name}-{m.dim}")
def test_hvp_matches_fd_of_grad(model, rng):
    batch = random_batch(model, rng)
    theta = rng.normal(size=model.dim)
    v = rng.normal(size=model.dim)
    assert rel_err(model.hvp(theta, batch, v), fd_hvp(model, theta, batch, v)) <= 1e-4


@pytest.mark.parametrize("model", all_models(), ids=lambda m: f"{m.name}-{m.dim}")
def test_hvp_zero_vector(model, rng):
    batch = random_batch(model, rng)
    theta = rng.normal(size=model.dim)
    assert np.all(model.hvp(theta, batch, np.zeros(model.dim)) == 0)


def test_mlp_hvp_symmetric(rng):
    model = SinusoidMLP()
    batch = random_batch(model, rng, 10)
    theta = model.init_params(rng)
    u, v = rng.normal(size=(2, model.dim))
    a = u @ model.hvp(theta, batch, v)
    b = v @ model.hvp(theta, batch, u)
    assert abs(a - b) <= 1e-4 * max(abs(a), abs(b))


@pytest.mark.parametrize("model", gaussian_models()[:2], ids=lambda m: m.name)
def test_analytic_hvp_linear(model, rng):
    batch = random_batch(model, rng)
    theta = rng.normal(size=model.dim)
    u, v = rng.normal(size=(2, model.dim))
    lhs = model.hvp(theta, batch, 2.5 * u - 0.5 * v)
    rhs = 2.5 * model.hvp(theta, batch, u) - 0.5 * model.hvp(theta, batch, v)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * (1 + np.max(np.abs(rhs)))


def test_identity_hvp_is_n_times_v(rng):
    model = normal_mean_model()
    batch = Batch(rng.normal(size=(7, 1)))
    v = rng.normal(size=1)
    np.testing.assert_allclose(model.hvp(np.zeros(1), batch, v), 7 * v, rtol=1e-15)


def test_identity_loss_zero_at_observation():
    model = normal_mean_model()
    assert model.loss(np.array([1.3]), Batch(np.array([[1.3]]))) == 0.0


def test_identity_grad_zero_at_sample_mean(rng):
    model = normal_mean_model()
    x = rng.normal(size=(6, 1))
    assert abs(model.grad(np.array([x.mean()]), Batch(x))[0]) <= 1e-12


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_identity_grad_linear_in_offset(t, xbar):
    model = normal_mean_model()
    x = xbar + np.array([[-0.5], [0.5]])
    g = model.grad(np.array([t]), Batch(x))
    assert g[0] == pytest.approx(2 * (t - xbar), abs=1e-12)


def test_mlp_zero_params_loss_is_mean_square(rng):
    model = SinusoidMLP()
    x = rng.uniform(-5, 5, 10)
    y = rng.normal(size=10)
    assert model.loss(np.zeros(model.dim), Batch(x, y)) == pytest.approx(np.mean(y ** 2), rel=1e-15)


def test_swirl_loss_at_origin(rng):
    model = GaussianObsModel(4, [1.0, 2.0, 4.0, 8.0], "swirl")
    x = rng.normal(size=(1, 4))
    want = np.sum(x[0] ** 2 / (2 * model.xi2))
    assert model.loss(np.zeros(4), Batch(x)) == pytest.approx(want, rel=1e-14)


def test_empty_batch_rejected():
    with pytest.raises(ContractError):
        normal_mean_model().loss(np.zeros(1), Batch(np.zeros((0, 1))))
    with pytest.raises(ContractError):
        SinusoidMLP().loss(np.zeros(SinusoidMLP().dim), Batch(np.zeros(0), np.zeros(0)))


def test_mlp_partition():
    model = SinusoidMLP()
    assert model.partition.names == ["w0", "b0", "w1", "b1", "w2", "b2"]
    assert model.partition.sizes.tolist() == [40, 40, 1600, 40, 40, 1]


def test_mlp_predict_matches_loss(rng):
    model = SinusoidMLP()
    theta = model.init_params(rng)
    x = rng.uniform(-5, 5, 10)
    y = rng.normal(size=10)
    assert model.loss(theta, Batch(x, y)) == pytest.approx(np.mean((model.predict(theta, x) - y) ** 2))


def test_mlp_init_bounds(rng):
    model = SinusoidMLP()
    theta = model.init_params(rng)
    w1 = theta[model.partition.slice("w1")]
    assert np.all(np.abs(w1) <= np.sqrt(1 / 40))
    assert np.all(np.isfinite(model.predict(theta, np.linspace(-5, 5, 50))))


def test_swirl_examples():
    assert np.all(swirl_transform(np.zeros(4), np.pi / 5) == 0)
    out = swirl_transform(np.array([5.0, 0.0]), np.pi / 5)
    np.testing.assert_allclose(out, [-5.0, 0.0], atol=1e-14)
    with pytest.raises(ContractError):
        swirl_transform(np.zeros(3), 1.0)


@given(arrays(float, 8, elements=st.floats(-20, 20)), st.floats(-3, 3))
def test_swirl_preserves_pair_norm(theta, omega):
    out = swirl_transform(theta, omega)
    n_in = np.hypot(theta[0::2], theta[1::2])
    n_out = np.hypot(out[0::2], out[1::2])
    assert np.all(np.abs(n_out - n_in) <= 1e-12 * (1 + n_in))


def test_linear_matrix():
    A = linear_exp1_matrix(8)
    assert A.shape == (9, 8)
    np.testing.assert_array_equal(A[:8], np.eye(8))
    np.testing.assert_allclose(A[8], np.full(8, 1 / np.sqrt(8)))


def test_linear_hessian_dense(rng):
    model = GaussianObsModel(8, [64.0] * 4 + [25.0] * 4 + [1.0], "linear")
    batch = random_batch(model, rng, 3)
    H = model.hessian(np.zeros(8), batch)
    v = rng.normal(size=8)
    np.testing.assert_allclose(H @ v, model.hvp(np.zeros(8), batch, v), rtol=1e-12)
