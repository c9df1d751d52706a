import math

import numpy as np
import pytest

from bbmcom import stats
from bbmcom.com import (com_at, com_limit_test, com_path, estimate_qv, qv_clock,
                        theoretical_com_variance, uniform_mesh)
from bbmcom.model import ModelParams
from bbmcom.rng import stream

from conftest import UNIT_LEVEL


def _variance_oracle(t):
    # sum over completed epochs of 1/n_k, plus the running fraction
    m = int(math.floor(t))
    return sum(2.0**-k for k in range(m)) + (t - m) * 2.0**-m


@pytest.mark.parametrize("t", [0.0, 0.3, 1.0, 2.5, 7.0, 12.0])
def test_variance_formula(t):
    assert theoretical_com_variance(t) == pytest.approx(_variance_oracle(t), abs=1e-15)


def test_variance_limit_and_errors():
    assert theoretical_com_variance(math.inf) == 2.0
    assert theoretical_com_variance(60) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        theoretical_com_variance(-1)


def test_limit_test_needs_replicates():
    with pytest.raises(ValueError, match="1000"):
        com_limit_test(np.zeros(10), 3.0)


@pytest.mark.parametrize("gamma", [1.0, -1.0])
def test_com_law_at_moderate_time(gamma):
    x = com_at(ModelParams(gamma=gamma, dim=2, max_epoch=6), 5, 1500, 6.0)
    reps = com_limit_test(x, 6.0, level=UNIT_LEVEL, method="ad", min_replicates=1000)
    assert len(reps) == 4 and all(r.passed for r in reps), reps


def test_com_at_thread_invariant():
    p = ModelParams(gamma=0.5, max_epoch=4)
    np.testing.assert_array_equal(com_at(p, 2, 40, 4.0, threads=1), com_at(p, 2, 40, 4.0, threads=4))


def test_com_increments_uncorrelated():
    p = ModelParams(gamma=2.0, max_epoch=4, record_mesh=())
    a, b = [], []
    for r in range(1500):
        t, z = com_path(p, 8, r, until=4)
        zi = dict(zip(t, z[:, 0]))
        a.append(zi[2.0] - zi[1.0])
        b.append(zi[4.0] - zi[3.0])
    assert stats.correlation_test(a, b, 0.0).passed
    assert stats.variance_test(b, 0.125).passed


def test_qv_deterministic_path():
    t = np.linspace(0, 1, 65)
    q = estimate_qv(t, 3 * t)
    assert q.total[0] == pytest.approx(9 / 64)
    assert q.increment(0.5, 1.0)[0] == pytest.approx(9 / 128)


def test_qv_of_brownian_path():
    rng = stream(1, "qv")
    t = np.linspace(0, 2, 2**12 + 1)
    w = np.concatenate([[0], np.cumsum(rng.standard_normal(2**12) * math.sqrt(2 / 2**12))])
    assert estimate_qv(t, w).total[0] == pytest.approx(2.0, abs=4 * 2 * math.sqrt(2 / 2**12))


def test_qv_guards():
    with pytest.raises(ValueError, match="sorted"):
        estimate_qv([0, 0.01, 0.005], [0, 1, 2])
    with pytest.raises(ValueError, match="spacing"):
        estimate_qv([0, 0.5], [0, 1])
    with pytest.raises(ValueError):
        uniform_mesh(0.3)


def test_qv_clock_small():
    tot = qv_clock(ModelParams(gamma=1.0, max_epoch=5), 3, 40, 5.0, spacing=2.0**-6)
    m, se = stats.mean_se(tot[:, 0])
    assert abs(m - (2 - 2.0**-4)) <= 4 * se + 0.02
