"""Acceptance criteria as library functions.

Each ``criterion_*`` function runs one check at its stated size and returns
a ``CriterionResult``.  The CLI and the test-suite share these functions so
there is a single definition of what "passing" means.
"""

import functools
import inspect
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from . import rng as rngmod
from . import stats
from .com import com_at, com_path, qv_clock, theoretical_com_variance
from .conjecture import TestFunction, conjecture_experiment, erf_self_check
from .decomposition import (CenteringOperator, SubsystemWeights, apply_centering,
                            centered_increment_cov, centering_rank, first_child_lineage,
                            initial_tags, psi_functional)
from .ensembles import map_replicates
from .model import ModelParams, ParticleCloud, euler_update, exact_epoch_step, simulate
from .sbm import (SBMParams, collect_survivors, com_stabilization, extinction_probability,
                  martingale_check, second_moment_profile, simulate_ensemble)

Z = stats.Z_DEFAULT
LEVEL = 0.01


@dataclass
class CriterionResult:
    id: int
    name: str
    passed: bool
    exploratory: bool = False
    seconds: float = 0.0
    details: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        extra = " (exploratory report; hard checks only)" if self.exploratory else ""
        return f"criterion {self.id:2d} [{tag}] {self.name}{extra} ({self.seconds:.1f}s)"

    def to_dict(self):
        return {"id": self.id, "name": self.name, "pass": bool(self.passed),
                "exploratory": self.exploratory, "seconds": self.seconds,
                "details": self.details, "reports": [r.to_dict() for r in self.reports]}


def _timed(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        res.seconds = time.perf_counter() - t0
        return res
    return wrapper


# BBM ------------------------------------------------------------------------

@_timed
def criterion_com_limit(seed=1, replicates=10_000, epochs=12, gammas=(1.0, -1.0, 0.0), threads=None):
    """Center of mass at ``t = epochs`` against its normal law, for several gammas."""
    samples = {}
    reports = []
    for i, g in enumerate(gammas):
        p = ModelParams(gamma=g, dim=1, max_epoch=epochs, sampler="exact")
        # independent ensembles so the pairwise comparison is not trivial
        x = com_at(p, seed + i, replicates, float(epochs), threads)[:, 0]
        samples[g] = x
        rep = stats.ks_normal(x, 0.0, theoretical_com_variance(epochs), LEVEL, f"ks_com[gamma={g}]")
        reports.append(rep)
    for a in range(len(gammas)):
        for b in range(a + 1, len(gammas)):
            ga, gb = gammas[a], gammas[b]
            reports.append(stats.ks_two_sample(samples[ga], samples[gb], LEVEL,
                                               f"ks2_com[gamma={ga} vs {gb}]"))
    details = {"variance_target": theoretical_com_variance(epochs),
               "sample_variance": {str(g): float(x.var(ddof=1)) for g, x in samples.items()}}
    return CriterionResult(1, "center-of-mass limit law", all(r.passed for r in reports),
                           details=details, reports=reports)


@_timed
def criterion_gamma_coupling(seed=1, epochs=6, dim=2, dt=1e-3, spacing=0.125,
                             gammas=(-2.0, 0.0, 2.0), tol=1e-10):
    """Euler chains with shared noise: the com path does not depend on gamma."""
    mesh = tuple(k * spacing for k in range(int(round(1 / spacing))))
    paths = {}
    for g in gammas:
        p = ModelParams(gamma=g, dim=dim, max_epoch=epochs, sampler="euler", dt=dt, record_mesh=mesh)
        paths[g] = com_path(p, seed, 0, until=float(epochs))
    t_ref, z_ref = paths[gammas[0]]
    worst = 0.0
    for g in gammas[1:]:
        t, z = paths[g]
        if not np.array_equal(t, t_ref):
            raise RuntimeError("mesh differs between gamma values")
        worst = max(worst, float(np.abs(z - z_ref).max()))
    details = {"max_abs_difference": worst, "tolerance": tol, "mesh_points": int(t_ref.size),
               "epochs": epochs, "dt": dt}
    return CriterionResult(2, "gamma-coupling exactness", worst <= tol, details=details)


@_timed
def criterion_exact_vs_euler(seed=1, samples=10_000, m=4, gamma=1.0, h=1.0, dt=1e-3):
    """Exact epoch transition against a fine Euler discretization from the same cloud."""
    n = 2**m
    z0 = (np.linspace(-1.5, 1.5, n) + 0.3)[:, None]
    cloud = ParticleCloud(m, 0.0, z0)
    params = ModelParams(gamma=gamma, dim=1, max_epoch=m, sampler="exact")
    ex = np.array([exact_epoch_step(cloud, params, h, rngmod.stream(seed, "exact-vs-euler", i)).positions
                   for i in range(samples)])
    z = np.broadcast_to(z0, (samples, n, 1)).copy()
    rng = rngmod.stream(seed, "euler-batch")
    steps = int(round(h / dt))
    for _ in range(steps):
        z = euler_update(z, gamma, dt, rng.standard_normal(z.shape))

    def feats(a):
        com = a.mean(axis=1)[:, 0]
        return com, a[:, 0, 0] - com

    ce, re_ = feats(ex)
    cu, ru = feats(z)
    reports = [stats.ks_two_sample(ce, cu, LEVEL, "ks2_com[exact vs euler]"),
               stats.ks_two_sample(re_, ru, LEVEL, "ks2_first_residual[exact vs euler]")]
    details = {"exact_com_var": float(ce.var(ddof=1)), "euler_com_var": float(cu.var(ddof=1)),
               "com_var_target": h / n,
               "exact_residual_mean": float(re_.mean()), "euler_residual_mean": float(ru.mean())}
    return CriterionResult(3, "exact sampler vs Euler", all(r.passed for r in reports),
                           details=details, reports=reports)


@_timed
def criterion_centering(ms=range(1, 7), tol=1e-12):
    """Rank, idempotence and null vector of the centering matrix."""
    rows = []
    ok = True
    for m in ms:
        A = CenteringOperator.for_epoch(m).matrix()
        n = 2**m
        rank = centering_rank(m)
        idem = float(np.abs(A @ A - A).max())
        null = float(np.abs(A @ np.ones(n)).max())
        fast = float(np.abs(apply_centering(np.ones(n))).max())
        good = rank == n - 1 and idem <= tol and null <= tol and fast <= tol
        ok &= good
        rows.append({"m": m, "rank": rank, "expected_rank": n - 1, "idempotence_error": idem,
                     "null_vector_error": null, "pass": good})
    return CriterionResult(4, "centering algebra", ok, details={"rows": rows, "tolerance": tol})


@_timed
def criterion_subsystem_ou(seed=1, replicates=10_000, epochs=12, gamma=1.0, threads=None):
    """Pair functional of two tagged lineages: stationary variance and lag-1 correlation."""
    w = SubsystemWeights.pair()
    m0, tags = initial_tags(w.k)
    params = ModelParams(gamma=gamma, dim=1, max_epoch=epochs, sampler="exact")

    def one(r):
        out = {}
        for snap in simulate(params, seed, r, until=float(epochs)):
            if snap.stage in ("pre", "final") and snap.t >= epochs - 1:
                lin = first_child_lineage(tags, m0, snap.epoch)
                out[snap.t] = float(psi_functional(snap.positions, w, lin)[0])
        return out[epochs - 1.0], out[float(epochs)]

    res = np.array(map_replicates(one, range(replicates), threads))
    target_var = 1.0 / (2 * gamma)
    rv = stats.variance_test(res[:, 1], target_var, Z, "psi_variance")
    rc = stats.correlation_test(res[:, 0], res[:, 1], math.exp(-gamma), Z, "psi_lag1_correlation")
    details = {"tagging_epoch": m0, "tags": tags.tolist(), "variance": rv.params["variance"],
               "variance_target": target_var, "lag1_correlation": rc.params["r"],
               "correlation_target": math.exp(-gamma), "correlation_ci": rc.params["ci"]}
    return CriterionResult(5, "subsystem OU law", rv.passed and rc.passed, details=details,
                           reports=[rv, rc])


@_timed
def criterion_residual_covariance(seed=1, draws=1_000_000, m=1, tau=1.0):
    """Covariance of centered Brownian increments against the bilinear expansion."""
    n = 2**m
    b = rngmod.stream(seed, "covariance").standard_normal((draws, n)) * math.sqrt(tau)
    w = apply_centering(b, axis=1)
    est = stats.empirical_cov(w[:, :2])
    diag, off = centered_increment_cov(m, tau)
    ok_diag = bool(est.within(np.array([[diag, off], [off, diag]]), Z)[0, 0])
    ok_off = bool(est.within(np.array([[diag, off], [off, diag]]), Z)[0, 1])
    printed = 2.0**-m * tau
    details = {
        "diagonal": float(est.cov[0, 0]), "diagonal_se": float(est.se[0, 0]), "diagonal_target": diag,
        "offdiagonal": float(est.cov[0, 1]), "offdiagonal_se": float(est.se[0, 1]),
        "offdiagonal_target": off,
        "sign_note": "the off-diagonal is negative; a positive value "
                     f"{printed} is inconsistent with the data",
        "positive_sign_within_4se": bool(abs(est.cov[0, 1] - printed) <= Z * est.se[0, 1]),
    }
    return CriterionResult(6, "centered increment covariance", ok_diag and ok_off, details=details)


@_timed
def criterion_qv_clock(seed=1, replicates=100, epochs=12, dim=2, spacing=2.0**-8, tol=0.05,
                       gamma=1.0, threads=None):
    """Quadratic-variation clock of the com path at ``t = epochs``."""
    params = ModelParams(gamma=gamma, dim=dim, max_epoch=epochs)
    tot = qv_clock(params, seed, replicates, float(epochs), spacing, threads)
    target = 2.0 - 2.0 ** (1 - epochs)
    mean = tot.mean(axis=0)
    ok = bool(np.all(np.abs(mean - target) <= tol))
    details = {"mean_clock": mean.tolist(), "target": target, "tolerance": tol,
               "se": (tot.std(axis=0, ddof=1) / math.sqrt(replicates)).tolist()}
    return CriterionResult(7, "quadratic-variation clock", ok, details=details)


# SBM ------------------------------------------------------------------------

@_timed
def criterion_extinction(seed=1, replicates=10_000, n=200, horizon=20.0, levels=(50, 100, 200),
                         allowance=0.01, threads=None):
    """Extinction fraction against ``exp(-beta/alpha)`` plus a refinement sweep in ``n``."""
    base = SBMParams(alpha=1.0, beta=1.0, n=n, horizon=horizon)
    main = extinction_probability(base, horizon, replicates, seed, threads=threads)
    ok_main = main.within(Z, allowance)
    sweep = []
    ok_sweep = True
    for k in levels:
        est = main if k == n else extinction_probability(base.with_(n=k), horizon, replicates,
                                                         seed + k, threads=threads)
        vs_limit = est.within(Z, allowance)
        vs_scheme = abs(est.fraction - est.scheme_exact) <= Z * est.se
        ok_sweep &= vs_limit and vs_scheme
        sweep.append({"n": k, "fraction": est.fraction, "se": est.se,
                      "scheme_exact": est.scheme_exact,
                      "exact_gap": abs(est.scheme_exact - est.limit),
                      "empirical_gap": abs(est.fraction - est.limit),
                      "within_limit": vs_limit, "within_scheme": vs_scheme})
    gaps = [row["exact_gap"] for row in sweep]
    shrinking = all(b < a for a, b in zip(gaps, gaps[1:]))
    details = {"fraction": main.fraction, "se": main.se, "limit": main.limit,
               "scheme_exact": main.scheme_exact, "allowance": allowance,
               "near_extinct_fraction": main.near_extinct, "refinement": sweep,
               "exact_gap_shrinking": shrinking,
               "note": "the refinement gap is O(1/n**2) and far below Monte Carlo "
                       "resolution, so monotonicity is asserted on the scheme's exact "
                       "extinction probability; each estimate must agree with it"}
    return CriterionResult(8, "super-Brownian extinction", ok_main and ok_sweep and shrinking,
                           details=details)


@_timed
def criterion_martingales(seed=1, replicates=1000, n=2, dim=2, pairs=((1, 1), (2, 2), (5, 5)),
                          threads=None):
    """Mean-zero increments of the discounted mass and first moment."""
    mesh = sorted({float(x) for t, s in pairs for x in (t, t + s)})
    params = SBMParams(alpha=1.0, beta=1.0, n=n, dim=dim, horizon=mesh[-1], mesh=tuple(mesh),
                       scheme="direct")
    series = simulate_ensemble(params, seed, replicates, threads)
    reports = []
    for t, s in pairs:
        reports += martingale_check(series, float(t), float(s))
    details = {"n": n, "capped": int(sum(x.capped for x in series)),
               "mean_only_pass": all(r.passed for r in reports if r.name.startswith("mean_increment"))}
    return CriterionResult(9, "super-Brownian martingales", all(r.passed for r in reports),
                           details=details, reports=reports)


@_timed
def criterion_second_moment(seed=1, replicates=4000, n=100, dim=2, horizon=10.0, alpha=1.0, beta=1.0,
                            threads=None):
    """Plateau of ``E V_t**2`` per coordinate for the discounted process."""
    params = SBMParams(alpha=alpha, beta=beta, n=n, dim=dim, horizon=horizon, scheme="htransform")
    prof = second_moment_profile(simulate_ensemble(params, seed, replicates, threads), params)
    end = prof.mean[-1]
    se = prof.se[-1]
    ok = bool(np.all(np.abs(end - prof.plateau_limit) <= Z * se))
    details = {
        "times": prof.times, "mean": prof.mean, "se": prof.se,
        "reference": prof.reference, "scheme_exact": prof.scheme,
        "plateau": end.tolist(), "plateau_se": se.tolist(), "derived_limit": prof.plateau_limit,
        "erratum_check": {
            "erratum_1_plus_beta_over_alpha": prof.erratum_value,
            "flag": "1 + beta/alpha differs from 2 alpha / beta**2 unless alpha = beta; "
                    "the two coincide at the default alpha = beta = 1",
            "erratum_value_within_4se": bool(np.all(np.abs(end - prof.erratum_value) <= Z * se)),
        },
    }
    return CriterionResult(10, "discounted second moment plateau", ok, details=details)


@_timed
def criterion_stabilization(seed=1, survivors=1000, n=200, horizon=20.0, spacing=2.0**-6,
                            threads=None):
    """Cauchy behaviour and clock tails of the com among surviving replicates."""
    k = int(round(horizon / spacing))
    mesh = tuple(spacing * (i + 1) for i in range(k))
    params = SBMParams(alpha=1.0, beta=1.0, n=n, dim=1, horizon=horizon, mesh=mesh,
                       scheme="htransform")
    surv, n_run, n_capped = collect_survivors(params, seed, survivors, threads=threads)
    rep = com_stabilization(surv, windows=((5, 10), (15, 20)))
    early, late = rep.windows["[5,10]"], rep.windows["[15,20]"]
    tail = rep.clock_tail_medians["[15,20]"]
    ok = len(surv) >= survivors and late < early and tail < 0.1 * rep.clock_median
    details = {"survivors": len(surv), "replicates_run": n_run, "capped": n_capped,
               "median_tail_displacement": rep.windows, "tail_curve": dict(zip(rep.tail_starts, rep.tail_medians)),
               "clock_median": rep.clock_median, "clock_tail_medians": rep.clock_tail_medians,
               "clock_quantiles": rep.clock_quantiles, "scheme": params.scheme, "n": n}
    return CriterionResult(11, "com stabilization on survival", bool(ok), details=details)


# exploratory and calibration ---------------------------------------------------

@_timed
def criterion_conjecture(seed=1, replicates=100, epochs=14, gamma=1.0, threads=None):
    """Normalized local-mass report; only the quadrature self-check is a hard assertion."""
    ok, got, want = erf_self_check(1e-6)
    rep = conjecture_experiment(gamma, 1, TestFunction.box(-1.0, 1.0), epochs, replicates, seed,
                                threads=threads)
    details = {"erf_self_check": {"pass": ok, "quadrature": got, "closed_form": want},
               "summary": rep.summary, "notes": rep.notes}
    return CriterionResult(12, "local-mass conjecture lab", ok, exploratory=True, details=details)


def _calibration_cases(k):
    zlev = sps.norm.isf(LEVEL / 2)
    cdf = sps.norm.cdf
    return {
        "ks_one_sample": lambda r: stats.ks_one_sample(r.standard_normal(k), cdf, LEVEL).p_value,
        "ks_two_sample": lambda r: stats.ks_two_sample(r.standard_normal(k), r.standard_normal(k),
                                                       LEVEL).p_value,
        "anderson_darling": lambda r: stats.anderson_darling_normal(r.standard_normal(k), LEVEL).p_value,
        "mean_test": lambda r: stats.mean_test(r.standard_normal(k), 0.0, zlev).p_value,
        "variance_test": lambda r: stats.variance_test(r.standard_normal(k), 1.0, zlev).p_value,
        "correlation_test": lambda r: stats.correlation_test(r.standard_normal(k), r.standard_normal(k),
                                                             0.0, zlev).p_value,
    }


@_timed
def criterion_calibration(seed=1, runs=1000, k=10_000, lo=0.005, hi=0.02):
    """Level-0.01 rejection rates of every harness test under true nulls."""
    rows = {}
    ok = True
    for i, (name, fn) in enumerate(_calibration_cases(k).items()):
        p = [fn(rngmod.stream(seed, "calibration", i, r)) for r in range(runs)]
        rate = stats.rejection_rate(p, LEVEL)
        good = lo <= rate <= hi
        ok &= good
        rows[name] = {"rejection_rate": rate, "pass": good}
    return CriterionResult(13, "statistical calibration", ok,
                           details={"runs": runs, "samples_per_run": k, "band": [lo, hi], "tests": rows})


CRITERIA = {
    1: criterion_com_limit,
    2: criterion_gamma_coupling,
    3: criterion_exact_vs_euler,
    4: criterion_centering,
    5: criterion_subsystem_ou,
    6: criterion_residual_covariance,
    7: criterion_qv_clock,
    8: criterion_extinction,
    9: criterion_martingales,
    10: criterion_second_moment,
    11: criterion_stabilization,
    12: criterion_conjecture,
    13: criterion_calibration,
}

SUITES = {
    "bbm": (1, 2, 3, 4, 5, 6, 7, 13),
    "sbm": (8, 9, 10, 11),
    "conjecture": (12,),
    "all": tuple(CRITERIA),
}


def run_criterion(i, seed=1, threads=None, **overrides):
    """Run criterion ``i``; ``seed`` and ``threads`` are passed where accepted."""
    fn = CRITERIA[i]
    accepted = inspect.signature(fn).parameters
    kw = {k: v for k, v in (("seed", seed), ("threads", threads)) if k in accepted}
    kw.update(overrides)
    return fn(**kw)


def run_suite(name, seed=1, threads=None, echo=None):
    out = []
    for i in SUITES[name]:
        res = run_criterion(i, seed, threads)
        if echo:
            echo(res.line())
        out.append(res)
    return out
