import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from shrinkmeta.prior import (ContractError, MetaParams, ModulePartition, clip_sigma2,
                              ig_regularizer, prior_terms)

from conftest import central_fd, rel_err


def two_module_meta(rng, theta_scale=1.0):
    part = ModulePartition.from_sizes([4, 2], ["a", "b"])
    meta = MetaParams(rng.normal(size=6), rng.normal(size=2), part)
    theta = meta.phi + theta_scale * rng.normal(size=6)
    return theta, meta


def test_partition_validation():
    with pytest.raises(ContractError):
        ModulePartition((("a", 0, 2), ("b", 3, 5)), 5)  # gap
    with pytest.raises(ContractError):
        ModulePartition((("a", 0, 3), ("b", 2, 5)), 5)  # overlap
    with pytest.raises(ContractError):
        ModulePartition((("a", 0, 0), ("b", 0, 5)), 5)  # empty module
    part = ModulePartition.from_sizes([3, 1, 2])
    assert part.dim == 6 and part.sizes.tolist() == [3, 1, 2]


def test_partition_json_roundtrip():
    part = ModulePartition.from_sizes([2, 3], ["w", "b"])
    obj = json.loads(json.dumps(part.to_json()))
    assert obj == {"modules": [{"name": "w", "start": 0, "end": 2}, {"name": "b", "start": 2, "end": 5}],
                   "dim": 5}
    assert ModulePartition.from_json(obj) == part


def test_expand_reduce_mask():
    part = ModulePartition.from_sizes([2, 1], ["x", "y"])
    assert part.expand(np.array([1.0, 5.0])).tolist() == [1.0, 1.0, 5.0]
    assert part.reduce(np.array([1.0, 2.0, 3.0])).tolist() == [3.0, 3.0]
    assert part.mask(["y"]).tolist() == [False, False, True]


def test_prior_at_mean():
    part = ModulePartition.from_sizes([3, 2])
    meta = MetaParams(np.zeros(5), np.log([2.0, 0.5]), part)
    nll, gt, gp, gs = prior_terms(np.zeros(5), meta)
    assert np.all(gt == 0) and np.all(gp == 0)
    np.testing.assert_allclose(gs, [1.5, 1.0])


def test_prior_zero_nll_unit_normalizer():
    meta = MetaParams(np.array([0.3]), np.array([np.log(1 / (2 * np.pi))]),
                      ModulePartition.per_coordinate(1))
    nll, *_ = prior_terms(np.array([0.3]), meta)
    assert abs(nll) < 1e-15


def test_prior_gradients_match_fd(rng):
    theta, meta = two_module_meta(rng)
    nll, gt, gp, gs = prior_terms(theta, meta)

    def f_theta(t):
        return prior_terms(t, meta)[0]

    def f_phi(p):
        return prior_terms(theta, MetaParams(p, meta.log_sigma2, meta.partition))[0]

    def f_s(s):
        return prior_terms(theta, MetaParams(meta.phi, s, meta.partition))[0]

    assert rel_err(gt, central_fd(f_theta, theta)) <= 1e-6
    assert rel_err(gp, central_fd(f_phi, meta.phi)) <= 1e-6
    assert rel_err(gs, central_fd(f_s, meta.log_sigma2)) <= 1e-6
    np.testing.assert_array_equal(gp, -gt)


def test_prior_dimension_mismatch():
    theta, meta = two_module_meta(np.random.default_rng(0))
    with pytest.raises(ContractError):
        prior_terms(theta[:5], meta)


def test_prior_invariant_to_module_order(rng):
    theta, meta = two_module_meta(rng)
    nll, *_ = prior_terms(theta, meta)
    # same modules listed in the other order over a permuted vector
    perm = np.r_[4:6, 0:4]
    part2 = ModulePartition.from_sizes([2, 4], ["b", "a"])
    meta2 = MetaParams(meta.phi[perm], meta.log_sigma2[::-1], part2)
    nll2, *_ = prior_terms(theta[perm], meta2)
    assert abs(nll - nll2) <= 1e-12 * abs(nll)


@pytest.mark.parametrize("s2, want", [(1e-9, 1e-5), (3.7, 3.7), (1e7, 1e5)])
def test_clip(s2, want):
    meta = MetaParams(np.zeros(1), np.log([s2]), ModulePartition.per_coordinate(1))
    out = clip_sigma2(meta)
    assert abs(out.sigma2[0] - want) <= 1e-12 * want


@given(st.lists(st.floats(-40, 40), min_size=1, max_size=6))
def test_clip_idempotent(logs):
    part = ModulePartition.per_coordinate(len(logs))
    meta = MetaParams(np.zeros(len(logs)), np.array(logs), part)
    once = clip_sigma2(meta)
    twice = clip_sigma2(once)
    np.testing.assert_array_equal(once.log_sigma2, twice.log_sigma2)
    assert np.all((once.sigma2 >= 1e-5 * (1 - 1e-12)) & (once.sigma2 <= 1e5 * (1 + 1e-12)))


def test_ig_values():
    meta = MetaParams(np.zeros(1), np.zeros(1), ModulePartition.per_coordinate(1))
    pen, g = ig_regularizer(meta, 1e-5)
    assert abs(pen - 1e-5) < 1e-18
    assert abs(g[0] - (2 - 1e-5)) < 1e-15
    with pytest.raises(ContractError):
        ig_regularizer(meta, -1.0)


def test_ig_beta_zero_increasing():
    part = ModulePartition.per_coordinate(1)
    vals = [ig_regularizer(MetaParams(np.zeros(1), np.array([s]), part), 0.0)[0] for s in (-3, 0, 3)]
    assert vals[0] < vals[1] < vals[2]
    np.testing.assert_allclose(vals, [-6, 0, 6])


@given(st.floats(1e-8, 1e2))
def test_ig_stationary_point(beta):
    part = ModulePartition.per_coordinate(1)

    def grad_at(s2):
        return ig_regularizer(MetaParams(np.zeros(1), np.log([s2]), part), beta)[1][0]

    assert abs(grad_at(beta / 2)) < 1e-9
    assert grad_at(beta / 2 * 0.9) < 0 < grad_at(beta / 2 * 1.1)


def test_meta_json_roundtrip(rng):
    _, meta = two_module_meta(rng)
    meta.alpha = np.array([0.1, 0.2])
    back = MetaParams.from_json(json.loads(json.dumps(meta.to_json())))
    np.testing.assert_array_equal(back.phi, meta.phi)
    np.testing.assert_array_equal(back.log_sigma2, meta.log_sigma2)
    np.testing.assert_array_equal(back.alpha, meta.alpha)
