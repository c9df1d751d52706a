import math

import numpy as np
import pytest
from scipy import special

from bbmcom.conjecture import (TestFunction, conjecture_experiment, erf_self_check, local_mass,
                               predicted_limit, residual_variance)
from bbmcom.model import ou_variance


def test_erf_self_check():
    ok, got, want = erf_self_check()
    assert ok and abs(got - want) < 1e-10


def test_box_two_dims_is_product_of_erfs():
    g = TestFunction.box([-1.0, -0.5], [1.0, 2.0])
    want = special.erf(1.0) * 0.5 * (special.erf(2.0) + special.erf(0.5))
    assert predicted_limit(g, 1.0) == pytest.approx(want, rel=1e-9)


@pytest.mark.parametrize("gamma,r", [(1.0, 1.0), (0.5, 2.0)])
def test_ball_two_dims(gamma, r):
    g = TestFunction("ball", (0.0, 0.0), radius=r)
    assert predicted_limit(g, gamma) == pytest.approx(1 - math.exp(-gamma * r * r), rel=1e-8)


def test_bump_one_dim_closed_form():
    gamma, s = 1.3, 0.4
    g = TestFunction("bump", (0.0,), scale=s)
    want = math.sqrt(gamma / math.pi) * math.sqrt(math.pi / (gamma + 1 / (2 * s * s)))
    assert predicted_limit(g, gamma) == pytest.approx(want, rel=1e-9)


def test_repulsion_is_lebesgue():
    assert predicted_limit(TestFunction.box([0, 0], [2, 3]), -1.0) == pytest.approx(6.0)
    assert predicted_limit(TestFunction("ball", (1.0, 2.0, 3.0), radius=2.0), -0.5) == pytest.approx(
        4 / 3 * math.pi * 8)
    with pytest.raises(ValueError):
        predicted_limit(TestFunction.box(-1, 1), 0.0)


def test_shift_and_mass():
    g = TestFunction.box(-1.0, 1.0).shifted(5.0)
    assert g.bounds() == [(4.0, 6.0)]
    assert local_mass(np.array([[4.5], [6.5], [5.0]]), g) == 2.0
    assert predicted_limit(g, 2.0, [5.0]) == pytest.approx(special.erf(math.sqrt(2.0)))


def test_residual_variance_limit():
    # fixed point of the epoch recursion is v(gamma, 1) / (1 - exp(-2 gamma)) = 1 / (2 gamma)
    assert residual_variance(1.0, 60) == pytest.approx(0.5, rel=1e-12)
    assert residual_variance(1.0, 1) == 0.0
    assert residual_variance(1.0, 2) == pytest.approx(ou_variance(1.0, 1.0) * 0.5)


def test_experiment_guards_and_report():
    with pytest.raises(ValueError):
        conjecture_experiment(1.0, 1, TestFunction.box(-1, 1), 9, 100, 1)
    with pytest.raises(ValueError):
        conjecture_experiment(1.0, 1, TestFunction.box(-1, 1), 10, 50, 1)
    rep = conjecture_experiment(1.0, 1, TestFunction.box(-1, 1), 10, 100, 1)
    d = rep.to_dict()
    assert d["exploratory"] and len(d["rows"]) == 100
    s = d["summary"]
    assert s["candidate_2_plus_1_over_2gamma"] == 2.5 and s["candidate_2_plus_1_over_4gamma2"] == 2.25
    assert 0.9 < s["ratio_mean"] < 1.1
