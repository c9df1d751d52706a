import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate, linalg

from bbmcom import stats
from bbmcom.model import (ModelParams, ParticleCloud, ResourceCapError, assemble_drift_flat, branch,
                          euler_step, exact_epoch_step, exact_update, final_state, n_of_t, net_drift,
                          ou_variance, simulate)
from bbmcom.rng import stream

from conftest import UNIT_LEVEL

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_params_reject_negative_epochs():
    with pytest.raises(ValueError, match="max_epoch ≥ 0"):
        ModelParams(max_epoch=-1)


def test_params_reject_bad_values():
    with pytest.raises(ValueError, match="dim"):
        ModelParams(dim=0)
    with pytest.raises(ValueError):
        ModelParams(gamma=float("nan"))
    with pytest.raises(ValueError):
        ModelParams(sampler="milstein")
    with pytest.raises(ValueError, match="record_mesh"):
        ModelParams(record_mesh=(0.5, 0.25))


def test_cloud_shape_is_checked():
    with pytest.raises(ValueError, match="needs 4 particles"):
        ParticleCloud(2, 0.0, np.zeros((3, 1)))
    with pytest.raises(ValueError):
        ParticleCloud(0, 0.0, np.array([[np.inf]]))


def test_n_of_t():
    assert [n_of_t(t) for t in (0, 0.5, 1, 2.99, 3)] == [1, 1, 2, 4, 8]


@given(st.floats(-5, 5), st.floats(1e-4, 3))
def test_ou_variance_matches_integral(gamma, h):
    # 1-d oracle: int_0^h exp(-2 gamma (h - s)) ds
    want, _ = integrate.quad(lambda s: math.exp(-2 * gamma * (h - s)), 0, h, epsrel=1e-12)
    assert ou_variance(gamma, h) == pytest.approx(want, rel=1e-9)


def test_ou_variance_is_continuous_at_series_cutoff():
    h = 1.0
    for g in (1e-6 * (1 - 1e-9), 1e-6 * (1 + 1e-9)):
        assert ou_variance(g, h) == pytest.approx(-math.expm1(-2 * g) / (2 * g), rel=1e-12)
    assert ou_variance(0.0, 0.7) == 0.7


@given(arrays(float, st.tuples(st.sampled_from([1, 2, 4, 8]), st.integers(1, 3)), elements=finite),
       st.floats(-3, 3))
def test_flat_drift_equals_matrix_drift(z, gamma):
    flat = assemble_drift_flat(z.ravel(), gamma, z.shape[1])
    np.testing.assert_allclose(flat.reshape(z.shape), net_drift(z, gamma), atol=1e-9)


@given(arrays(float, st.tuples(st.sampled_from([2, 4, 16]), st.integers(1, 3)), elements=finite),
       st.floats(-3, 3))
def test_drift_rows_balance(z, gamma):
    d = net_drift(z, gamma)
    assert np.all(np.abs(d.sum(axis=0)) <= 1e-9 * (1 + np.abs(d).sum()))


def _oracle_transition(z0, gamma, h):
    """Mean and covariance of the linear SDE dZ = -gamma A Z dt + dB via expm."""
    n = z0.shape[0]
    B = -gamma * (np.eye(n) - np.full((n, n), 1.0 / n))
    mean = linalg.expm(B * h) @ z0
    cov, _ = integrate.quad_vec(lambda s: linalg.expm(B * s) @ linalg.expm(B * s).T, 0, h, epsrel=1e-12)
    return mean, cov


@pytest.mark.parametrize("gamma", [1.3, -0.7, 0.0])
def test_exact_update_mean_and_covariance_match_expm(gamma):
    n, h = 4, 0.6
    z0 = np.array([[0.3], [-1.0], [2.0], [0.1]])
    mean, cov = _oracle_transition(z0[:, 0], gamma, h)
    # exact_update is affine in the standard normals (g, c): read off its columns
    base = exact_update(z0, gamma, h, np.zeros((n, 1)), np.zeros((1, 1)))[:, 0]
    cols = []
    for k in range(n + 1):
        g = np.zeros((n, 1))
        c = np.zeros((1, 1))
        if k < n:
            g[k, 0] = 1.0
        else:
            c[0, 0] = 1.0
        cols.append(exact_update(z0, gamma, h, g, c)[:, 0] - base)
    L = np.array(cols).T
    np.testing.assert_allclose(base, mean, atol=1e-12)
    np.testing.assert_allclose(L @ L.T, cov, atol=1e-10)


@given(arrays(float, (8, 2), elements=finite), st.tuples(finite, finite), st.floats(-2, 2))
@settings(max_examples=50)
def test_exact_update_translation_equivariant(z, a, gamma):
    r = np.random.default_rng(0)
    g, c = r.standard_normal(z.shape), r.standard_normal((1, 2))
    a = np.array(a)
    np.testing.assert_allclose(exact_update(z + a, gamma, 0.5, g, c),
                               exact_update(z, gamma, 0.5, g, c) + a, atol=1e-9)


def test_euler_step_guards():
    cloud = ParticleCloud(1, 0.9995, np.zeros((2, 1)))
    p = ModelParams()
    with pytest.raises(ValueError, match="branching"):
        euler_step(cloud, p, np.zeros((2, 1)), 0.01)
    with pytest.raises(ValueError, match="noise"):
        euler_step(ParticleCloud(1, 0.0, np.zeros((2, 1))), p, np.zeros((3, 1)), 0.01)


def test_branch_children_follow_parents():
    cloud = ParticleCloud(1, 1.0, np.array([[1.0, 2.0], [3.0, 4.0]]))
    child = branch(cloud)
    assert child.epoch == 2 and child.tau == 0.0
    np.testing.assert_array_equal(child.positions[[0, 1]], [[1, 2], [1, 2]])
    np.testing.assert_array_equal(child.positions[[2, 3]], [[3, 4], [3, 4]])
    with pytest.raises(ValueError):
        branch(ParticleCloud(1, 0.5, np.zeros((2, 1))))


def test_exact_step_requires_forward_time():
    cloud = ParticleCloud(0, 0.5, np.zeros((1, 1)))
    with pytest.raises(ValueError):
        exact_epoch_step(cloud, ModelParams(), 0.5, stream(0))


def test_simulate_emits_ordered_snapshots():
    p = ModelParams(gamma=1.0, dim=2, max_epoch=2, record_mesh=(0.0, 0.5))
    snaps = list(simulate(p, seed=3))
    assert [s.stage for s in snaps] == ["start", "mesh", "pre", "post", "mesh", "pre", "post",
                                        "mesh", "final"]
    assert [s.t for s in snaps] == [0, 0.5, 1, 1, 1.5, 2, 2, 2.5, 3]
    assert all(s.positions.shape == (n_of_t(min(s.t, 2.999)) if s.stage != "pre" else 2**s.epoch, 2)
               for s in snaps)
    pre, post = snaps[2], snaps[3]
    np.testing.assert_array_equal(np.repeat(pre.positions, 2, axis=0), post.positions)


def test_simulate_until_and_zero():
    p = ModelParams(max_epoch=3)
    assert final_state(p, 1, until=0).t == 0.0
    s = final_state(p, 1, until=2.25)
    assert s.t == 2.25 and s.positions.shape == (4, 1)
    assert final_state(p, 1).t == 4.0


def test_simulate_is_deterministic_and_replicates_differ():
    p = ModelParams(gamma=0.5, dim=1, max_epoch=4)
    a = final_state(p, 11, 0).positions
    b = final_state(p, 11, 0).positions
    c = final_state(p, 11, 1).positions
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_resource_cap():
    p = ModelParams(dim=2, max_epoch=20, cell_budget=1 << 10)
    with pytest.raises(ResourceCapError):
        next(simulate(p, 0))


def test_com_does_not_depend_on_gamma():
    coms = [final_state(ModelParams(gamma=g, max_epoch=5), 9, 2).com for g in (1.0, -1.0, 0.0, 3.0)]
    for c in coms[1:]:
        np.testing.assert_allclose(c, coms[0], atol=1e-9)


def test_euler_com_does_not_depend_on_gamma():
    coms = [final_state(ModelParams(gamma=g, max_epoch=3, sampler="euler", dt=0.01), 9, 0, until=3).com
            for g in (2.0, -2.0)]
    np.testing.assert_allclose(coms[0], coms[1], atol=1e-10)


def test_residuals_follow_ou_variance():
    # one epoch from a point mass at m = 3: each residual has variance v(gamma, 1) * (1 - 1/8)
    gamma, m = 1.5, 3
    cloud = ParticleCloud(m, 0.0, np.zeros((8, 1)))
    p = ModelParams(gamma=gamma)
    res = np.array([exact_epoch_step(cloud, p, 1.0, stream(5, "t", i)).positions[:, 0]
                    for i in range(4000)])
    resid = res[:, 0] - res.mean(axis=1)
    rep = stats.variance_test(resid, ou_variance(gamma, 1.0) * (1 - 1 / 8))
    assert rep.passed, rep


def test_coordinates_are_independent():
    p = ModelParams(gamma=1.0, dim=2, max_epoch=4)
    z = np.array([final_state(p, 21, r, until=4).com for r in range(1500)])
    assert stats.correlation_test(z[:, 0], z[:, 1], 0.0).passed
    assert stats.ks_two_sample(z[:, 0], z[:, 1], UNIT_LEVEL).passed


def test_exact_and_euler_agree_in_law_small():
    p_ex = ModelParams(gamma=1.0, max_epoch=2)
    p_eu = ModelParams(gamma=1.0, max_epoch=2, sampler="euler", dt=0.01)
    a = np.array([final_state(p_ex, 1, r, until=3).positions[0, 0] for r in range(1500)])
    b = np.array([final_state(p_eu, 2, r, until=3).positions[0, 0] for r in range(1500)])
    assert stats.ks_two_sample(a, b, UNIT_LEVEL).passed
