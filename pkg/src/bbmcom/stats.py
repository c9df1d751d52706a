"""Statistical checks used by the validation suites.

Acceptance thresholds are written as ``|estimate - target| <= z * SE`` with
``z = 4`` unless stated otherwise, so sample sizes can change without
rewriting criteria.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as sps

Z_DEFAULT = 4.0
MIN_KS = 30


@dataclass
class TestReport:
    name: str
    statistic: float
    p_value: float
    n: int
    passed: bool
    level: float
    params: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError("p_value outside [0, 1]")

    def to_dict(self):
        d = asdict(self)
        d["test"] = d.pop("name")
        d["n_samples"] = d.pop("n")
        d["pass"] = bool(d.pop("passed"))
        return d

    def to_json(self):
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def z_pvalue(z):
    """Two-sided normal p-value."""
    return float(min(1.0, 2.0 * sps.norm.sf(abs(z))))


def level_for_z(z):
    return z_pvalue(z)


def ks_one_sample(samples, cdf, level=0.01, name="ks_one_sample"):
    """One-sample KS test against a callable cdf (asymptotic p-value)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < MIN_KS:
        raise ValueError(f"KS needs at least {MIN_KS} samples, got {x.size}")
    res = sps.kstest(x, cdf, method="asymp")
    p = float(res.pvalue)
    return TestReport(name, float(res.statistic), p, x.size, p >= level, level)


def ks_normal(samples, mean=0.0, var=1.0, level=0.01, name="ks_normal"):
    rep = ks_one_sample(samples, sps.norm(loc=mean, scale=math.sqrt(var)).cdf, level, name)
    rep.params.update(mean=mean, var=var)
    return rep


def ks_two_sample(a, b, level=0.01, name="ks_two_sample"):
    """Two-sample KS test (asymptotic p-value)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if min(a.size, b.size) < MIN_KS:
        raise ValueError(f"KS needs at least {MIN_KS} samples per group")
    res = sps.ks_2samp(a, b, method="asymp")
    p = float(res.pvalue)
    return TestReport(name, float(res.statistic), p, a.size + b.size, p >= level, level,
                      {"n_a": a.size, "n_b": b.size})


def anderson_darling_normal(samples, level=0.01, name="ad_normal"):
    """Anderson-Darling test for normality with mean and variance estimated.

    p-values from the D'Agostino-Stephens approximation for the modified
    statistic ``A2 * (1 + 0.75/n + 2.25/n**2)``.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 8:
        raise ValueError("Anderson-Darling needs at least 8 samples")
    s = x.std(ddof=1)
    if s == 0:
        return TestReport(name, math.inf, 0.0, n, False, level)
    u = sps.norm.cdf((x - x.mean()) / s)
    logcdf = np.log(np.clip(u, 1e-300, None))
    logsf = np.log(np.clip(1.0 - u[::-1], 1e-300, None))
    i = np.arange(1, n + 1)
    a2 = -n - np.sum((2 * i - 1) * (logcdf + logsf)) / n
    a = a2 * (1.0 + 0.75 / n + 2.25 / n**2)
    if a >= 0.6:
        p = math.exp(1.2937 - 5.709 * a + 0.0186 * a * a)
    elif a >= 0.34:
        p = math.exp(0.9177 - 4.279 * a - 1.38 * a * a)
    elif a >= 0.2:
        p = 1.0 - math.exp(-8.318 + 42.796 * a - 59.938 * a * a)
    else:
        p = 1.0 - math.exp(-13.436 + 101.14 * a - 223.73 * a * a)
    p = min(max(p, 0.0), 1.0)
    return TestReport(name, float(a), p, n, p >= level, level)


def normality_test(samples, level=0.01, name=None):
    """Normality against a fitted normal (Anderson-Darling).

    A plain KS distance to the fitted normal is deliberately not offered: with
    estimated parameters its asymptotic p-values are far too conservative to
    be calibrated.
    """
    return anderson_darling_normal(samples, level, name or "ad_normal")


def mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def mean_test(samples, target=0.0, z=Z_DEFAULT, name="mean"):
    """Pass iff the sample mean is within ``z`` standard errors of ``target``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    m, se = mean_se(x)
    if se == 0:
        zstat = 0.0 if m == target else math.inf
    else:
        zstat = (m - target) / se
    return TestReport(name, float(zstat), z_pvalue(zstat), x.size, abs(zstat) <= z,
                      level_for_z(z), {"mean": m, "se": se, "target": target, "z": z})


def variance_se(x):
    """Unbiased variance and its asymptotic standard error ``sqrt((m4 - s**4)/k)``."""
    x = np.asarray(x, dtype=float).ravel()
    k = x.size
    d = x - x.mean()
    v = float(d @ d / (k - 1))
    m4 = float(np.mean(d**4))
    return v, math.sqrt(max(m4 - v * v, 0.0) / k)


def variance_test(samples, target, z=Z_DEFAULT, name="variance"):
    v, se = variance_se(samples)
    zstat = (v - target) / se if se > 0 else (0.0 if v == target else math.inf)
    return TestReport(name, float(zstat), z_pvalue(zstat), np.size(samples), abs(zstat) <= z,
                      level_for_z(z), {"variance": v, "se": se, "target": target, "z": z})


def correlation_test(x, y, target=0.0, z=Z_DEFAULT, name="correlation"):
    """Fisher-z test of ``corr(x, y) == target``; SE ``1/sqrt(k - 3)``."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    k = x.size
    if k < 4 or y.size != k:
        raise ValueError("need at least four paired samples")
    r = float(np.corrcoef(x, y)[0, 1])
    if not math.isfinite(r):
        r = 0.0
    r = min(max(r, -0.999999999), 0.999999999)
    se = 1.0 / math.sqrt(k - 3)
    zstat = (math.atanh(r) - math.atanh(target)) / se
    return TestReport(name, float(zstat), z_pvalue(zstat), k, abs(zstat) <= z, level_for_z(z),
                      {"r": r, "target": target, "z": z,
                       "ci": [math.tanh(math.atanh(r) - z * se), math.tanh(math.atanh(r) + z * se)]})


@dataclass
class CovarianceEstimate:
    cov: np.ndarray
    se: np.ndarray
    n: int

    def within(self, target, z=Z_DEFAULT):
        """Entrywise ``|cov - target| <= z * se``."""
        return np.abs(self.cov - np.asarray(target, dtype=float)) <= z * self.se


def empirical_cov(samples):
    """Unbiased sample covariance of the columns with per-entry standard errors.

    SE of entry ``(i, j)`` is ``sqrt((E[d_i^2 d_j^2] - cov_ij^2) / k)`` with
    ``d`` the centered columns.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    k = x.shape[0]
    if k < 2:
        raise ValueError("need at least two samples")
    d = x - x.mean(axis=0)
    cov = d.T @ d / (k - 1)
    cov = 0.5 * (cov + cov.T)
    sq = d * d
    m22 = sq.T @ sq / k
    se = np.sqrt(np.clip(m22 - cov**2, 0.0, None) / k)
    return CovarianceEstimate(cov, se, k)


def rejection_rate(pvalues, level=0.01):
    p = np.asarray(pvalues, dtype=float)
    return float(np.mean(p < level))
