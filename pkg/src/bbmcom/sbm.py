"""Branching-particle approximation of supercritical super-Brownian motion.

Level-``n`` particle system for the (½Δ, β, α)-superdiffusion: every particle
carries mass ``1/n``, moves as a Brownian motion and dies at rate ``2 α n``,
leaving two children with probability ``½ + β/(4 α n)`` and none otherwise.
The mass then drifts at rate β and has variance flux ``2 α`` per unit mass,
matching the Feller generator ``x (α d²/dx² + β d/dx)``.

Two schemes are available:

``"direct"``
    the system above; the particle count grows like ``n exp(β t)``.
``"htransform"``
    the ``exp(-β t)``-discounted process approximated directly: critical
    binary branching at the decaying rate ``2 α n exp(-β t)``.  Its particle
    count stays of order ``n``, which makes long horizons affordable.  The
    center of mass is the same functional of either process.

Between branching events positions are sampled lazily, only at death times
and at recording times, so there is no global time-stepping loop.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import rng as rngmod
from . import stats
from .com import estimate_qv
from .ensembles import map_replicates

SCHEMES = ("direct", "htransform")


@dataclass(frozen=True)
class SBMParams:
    alpha: float = 1.0
    beta: float = 1.0
    n: int = 200
    dim: int = 1
    horizon: float = 1.0
    mesh: tuple = ()
    scheme: str = "direct"
    population_cap: int = 10**6

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("invariant violated: alpha > 0")
        if not self.beta > 0:
            raise ValueError("invariant violated: beta > 0")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("invariant violated: n is a positive integer")
        if not self.n > self.beta / (2 * self.alpha):
            raise ValueError("invariant violated: n > beta/(2 alpha)")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("invariant violated: dim ≥ 1")
        if not self.horizon > 0:
            raise ValueError("invariant violated: horizon > 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        mesh = tuple(float(x) for x in self.mesh) or tuple(
            float(k) for k in range(1, int(math.floor(self.horizon)) + 1))
        if not mesh or not math.isclose(mesh[-1], self.horizon):
            mesh = mesh + (float(self.horizon),)
        if mesh[0] <= 0 or any(b <= a for a, b in zip(mesh, mesh[1:])) or mesh[-1] > self.horizon:
            raise ValueError("mesh must be strictly increasing within (0, horizon]")
        object.__setattr__(self, "mesh", mesh)

    @property
    def branch_rate(self):
        return 2.0 * self.alpha * self.n

    @property
    def split_prob(self):
        if self.scheme == "htransform":
            return 0.5
        return 0.5 + self.beta / (4.0 * self.alpha * self.n)

    def with_(self, **kw):
        d = dict(alpha=self.alpha, beta=self.beta, n=self.n, dim=self.dim,
                 horizon=self.horizon, mesh=self.mesh, scheme=self.scheme,
                 population_cap=self.population_cap)
        d.update(kw)
        if "horizon" in kw and "mesh" not in kw:
            d["mesh"] = ()
        return SBMParams(**d)


@dataclass
class SBMCloud:
    t: float
    positions: np.ndarray
    n: int
    replicate_id: int = 0
    capped: bool = False

    @property
    def count(self):
        return self.positions.shape[0]

    @property
    def mass(self):
        return self.count / self.n

    @property
    def survived_so_far(self):
        return self.count > 0

    @classmethod
    def start(cls, params, replicate_id=0):
        """Unit mass at the origin: ``n`` particles."""
        return cls(0.0, np.zeros((params.n, params.dim)), params.n, replicate_id)


@dataclass
class MartingaleSeries:
    """Per-replicate record on the mesh (time 0 included).

    ``N`` is the discounted total mass, ``V`` the discounted first moment
    ``<x, X>`` (a d-vector), ``com`` the center of mass (NaN once extinct).
    """

    times: np.ndarray
    N: np.ndarray
    V: np.ndarray
    com: np.ndarray
    counts: np.ndarray
    sums: np.ndarray  # undiscounted sum of positions
    n: int
    beta: float
    scheme: str = "direct"
    replicate_id: int = 0
    capped: bool = False

    @property
    def survived(self):
        return bool(self.counts[-1] > 0) and not self.capped

    def index(self, t):
        i = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[i], t, abs_tol=1e-9):
            raise KeyError(f"time {t} is not on the recording mesh")
        return i


# particle dynamics -------------------------------------------------------------

def _death_times(start, e, rate, beta):
    if beta is None:
        return start + e / rate
    # hazard rate * exp(-beta s): integrated hazard from start must reach e
    x = np.exp(-beta * start) - e * beta / rate
    ok = x > 0
    out = np.full(start.shape, np.inf)
    out[ok] = -np.log(x[ok]) / beta
    return out


def advance_particles(pos, t0, t1, rate, p_split, rng, beta=None, cap=None):
    """Move a particle population from ``t0`` to ``t1``.

    Each particle draws an exponential clock (constant ``rate``, or
    ``rate * exp(-beta s)`` when ``beta`` is given).  Particles outlasting
    ``t1`` are displaced by Brownian motion over their remaining time; the
    others are displaced to their death time and replaced by two children
    with probability ``p_split``.  Processing proceeds generation by
    generation, which visits every event exactly once.

    Returns ``(positions at t1, capped)``.
    """
    d = pos.shape[1]
    start = np.full(pos.shape[0], float(t0))
    done = []
    n_done = 0
    while pos.shape[0]:
        death = _death_times(start, rng.standard_exponential(pos.shape[0]), rate, beta)
        surv = death >= t1
        end = np.where(surv, t1, death)
        pos = pos + rng.standard_normal(pos.shape) * np.sqrt(end - start)[:, None]
        if surv.any():
            done.append(pos[surv])
            n_done += done[-1].shape[0]
        dying = ~surv
        split = rng.random(int(dying.sum())) < p_split
        pos = np.repeat(pos[dying][split], 2, axis=0)
        start = np.repeat(death[dying][split], 2)
        if cap is not None and n_done + pos.shape[0] > cap:
            return np.empty((0, d)), True
    if not done:
        return np.empty((0, d)), False
    return np.concatenate(done), False


def sbm_step(cloud, params, until, rng):
    """Advance ``cloud`` to time ``until``."""
    if not until > cloud.t:
        raise ValueError("until must exceed the current time")
    if cloud.capped or cloud.count == 0:
        return SBMCloud(until, cloud.positions, cloud.n, cloud.replicate_id, cloud.capped)
    beta = params.beta if params.scheme == "htransform" else None
    pos, capped = advance_particles(cloud.positions, cloud.t, until, params.branch_rate,
                                    params.split_prob, rng, beta, params.population_cap)
    return SBMCloud(until, pos, cloud.n, cloud.replicate_id, capped)


def discount(params, t):
    """Factor turning the simulated mass into the martingale ``exp(-β t) ||X_t||``."""
    return math.exp(-params.beta * t) if params.scheme == "direct" else 1.0


def simulate_sbm(params, seed, replicate=0):
    """Run one replicate over ``params.mesh`` and return its ``MartingaleSeries``."""
    rng = rngmod.stream(seed, "sbm", replicate)
    cloud = SBMCloud.start(params, replicate)
    times = (0.0,) + params.mesh
    T = len(times)
    N = np.zeros(T)
    V = np.zeros((T, params.dim))
    com = np.full((T, params.dim), np.nan)
    counts = np.zeros(T, dtype=np.int64)
    sums = np.zeros((T, params.dim))
    for i, t in enumerate(times):
        if i:
            cloud = sbm_step(cloud, params, t, rng)
            if cloud.capped:
                counts[i:] = -1
                N[i:] = V[i:] = sums[i:] = np.nan
                break
        if cloud.count == 0:
            break
        h = discount(params, t) / params.n
        counts[i] = cloud.count
        N[i] = h * cloud.count
        s = cloud.positions.sum(axis=0)
        sums[i] = s
        V[i] = h * s
        com[i] = s / cloud.count
    return MartingaleSeries(np.array(times), N, V, com, counts, sums, params.n, params.beta,
                            params.scheme, replicate, cloud.capped)


def simulate_ensemble(params, seed, replicates, threads=None, start=0):
    return map_replicates(lambda r: simulate_sbm(params, seed, r),
                          range(start, start + replicates), threads)


def collect_survivors(params, seed, target, max_replicates=None, threads=None, batch=256):
    """Run replicates ``0, 1, 2, ...`` until ``target`` of them survive.

    Returns ``(survivors, n_run, n_capped)``.  Deterministic in ``seed``.
    """
    survivors, n_run, n_capped = [], 0, 0
    limit = max_replicates if max_replicates is not None else 20 * target + 1000
    while len(survivors) < target and n_run < limit:
        k = min(batch, limit - n_run)
        for s in simulate_ensemble(params, seed, k, threads, start=n_run):
            n_capped += s.capped
            if s.survived and len(survivors) < target:
                survivors.append(s)
        n_run += k
    return survivors, n_run, n_capped


# total mass alone ----------------------------------------------------------------

def birth_death_marginals(h, rate, p_split):
    """Extinction and geometric parameters of a linear birth-death process.

    Birth rate ``rate * p_split`` and death rate ``rate * (1 - p_split)`` per
    particle.  Started from one particle, the count at time ``h`` is 0 with
    probability ``p0`` and otherwise geometric on ``{1, 2, ...}`` with
    ``P(N = j) = (1 - xi) xi**(j-1)``.  Returns ``(p0, xi)``.
    """
    lam = rate * p_split
    mu = rate * (1.0 - p_split)
    if h <= 0:
        return 0.0, 0.0
    if math.isclose(lam, mu, rel_tol=1e-12):
        a = lam * h
        return a / (1 + a), a / (1 + a)
    r = lam - mu
    em1 = math.expm1(r * h)
    denom = lam * em1 + r  # = lam * e^{rh} - mu
    return mu * em1 / denom, lam * em1 / denom


def critical_decaying_marginals(t0, t1, rate, beta):
    """Same as ``birth_death_marginals`` for the critical scheme with rate ``rate exp(-β s)``."""
    a = 0.5 * rate * (math.exp(-beta * t0) - math.exp(-beta * t1)) / beta
    return a / (1 + a), a / (1 + a)


def count_transition(k, p0, xi, rng):
    """Exact count after one step from ``k`` particles."""
    if k == 0:
        return 0
    j = int(rng.binomial(k, 1.0 - p0))
    if j == 0:
        return 0
    return j + int(rng.negative_binomial(j, 1.0 - xi)) if xi > 0 else j


def sample_counts(k0, times, rate, p_split, rng, beta=None):
    """Particle count at each of ``times`` (increasing, from ``t = 0``), exactly."""
    out = np.zeros(len(times), dtype=np.int64)
    k, t = int(k0), 0.0
    for i, t1 in enumerate(times):
        if beta is None:
            p0, xi = birth_death_marginals(t1 - t, rate, p_split)
        else:
            p0, xi = critical_decaying_marginals(t, t1, rate, beta)
        k = count_transition(k, p0, xi, rng)
        out[i] = k
        t = t1
    return out


def scheme_extinction_probability(params, horizon):
    """Exact probability that the level-``n`` scheme is extinct by ``horizon``."""
    if params.scheme == "direct":
        p0, _ = birth_death_marginals(horizon, params.branch_rate, params.split_prob)
    else:
        p0, _ = critical_decaying_marginals(0.0, horizon, params.branch_rate, params.beta)
    return p0**params.n


def limit_extinction_probability(alpha, beta):
    return math.exp(-beta / alpha)


@dataclass
class ExtinctionEstimate:
    fraction: float
    se: float
    replicates: int
    scheme_exact: float
    limit: float
    near_extinct: float = 0.0
    certified: int = 0
    params: dict = field(default_factory=dict)

    def within(self, z=stats.Z_DEFAULT, allowance=0.0):
        return abs(self.fraction - self.limit) <= z * self.se + allowance


def extinction_probability(params, horizon, replicates, seed, method="counts",
                           eps=1e-2, survival_tol=1e-12, threads=None):
    """Fraction of replicates whose particle count hits 0 by ``horizon``.

    ``method="counts"`` samples the count process exactly on the integer
    mesh (branching does not depend on positions).  ``method="particles"``
    runs the full spatial scheme and stops a replicate early once its count
    reaches the level at which eventual extinction has probability below
    ``survival_tol``; such replicates are counted as survivors and reported
    in ``certified``.  ``near_extinct`` is the fraction alive at the horizon
    with mass below ``eps``.
    """
    grid = [float(k) for k in range(1, int(math.floor(horizon)) + 1)]
    if not grid or grid[-1] < horizon:
        grid.append(float(horizon))
    beta = params.beta if params.scheme == "htransform" else None

    if method == "counts":
        def one(r):
            rng = rngmod.stream(seed, "mass", r)
            k = sample_counts(params.n, grid, params.branch_rate, params.split_prob, rng, beta)[-1]
            return k, False
    elif method == "particles":
        if params.scheme != "direct":
            raise ValueError("early survival certificates need the direct scheme")
        q = (1 - params.split_prob) / params.split_prob
        k_safe = math.ceil(math.log(survival_tol) / math.log(q)) if q > 0 else 1

        def one(r):
            rng = rngmod.stream(seed, "sbm", r)
            cloud = SBMCloud.start(params, r)
            for t in grid:
                if cloud.count >= k_safe:
                    return cloud.count, True
                cloud = sbm_step(cloud, params, t, rng)
                if cloud.count == 0:
                    break
            return cloud.count, False
    else:
        raise ValueError("method must be 'counts' or 'particles'")

    res = map_replicates(one, range(replicates), threads)
    k = np.array([c for c, _ in res], dtype=np.int64)
    cert = int(sum(c for _, c in res))
    frac = float(np.mean(k == 0))
    se = math.sqrt(max(frac * (1 - frac), 1.0 / replicates) / replicates)
    near = float(np.mean((k > 0) & (k < eps * params.n)))
    return ExtinctionEstimate(frac, se, replicates, scheme_extinction_probability(params, horizon),
                              limit_extinction_probability(params.alpha, params.beta), near, cert,
                              {"alpha": params.alpha, "beta": params.beta, "n": params.n,
                               "horizon": horizon, "method": method, "scheme": params.scheme})


def feller_moments(alpha, beta, times, m0=1.0):
    """Mean and variance of the Feller diffusion by integrating the moment ODEs.

    ``m' = β m`` and ``v' = 2 β v + 2 α m`` from ``(m0, 0)``.
    """
    times = np.asarray(times, dtype=float)
    sol = solve_ivp(lambda t, y: [beta * y[0], 2 * beta * y[1] + 2 * alpha * y[0]],
                    (0.0, float(times.max())), [m0, 0.0], t_eval=times,
                    rtol=1e-10, atol=1e-12)
    return sol.y[0], sol.y[1]


# checks on ensembles -----------------------------------------------------------

def _usable(series):
    return [s for s in series if not s.capped]


def martingale_check(series, t, s, z=stats.Z_DEFAULT, min_replicates=1000, discount_beta=None):
    """Mean-zero and orthogonality checks for ``N`` and every coordinate of ``V``.

    For ``M`` in ``{N, V_1, ..., V_d}`` tests that ``M_{t+s} - M_t`` and
    ``(M_{t+s} - M_t) M_t`` have mean 0, each within ``z`` standard errors.
    ``discount_beta`` re-discounts the direct scheme with a different rate
    (a deliberately wrong martingale, used as a negative control).
    """
    series = _usable(series)
    if len(series) < min_replicates:
        raise ValueError(f"need at least {min_replicates} replicates, got {len(series)}")
    i0 = series[0].index(t)
    i1 = series[0].index(t + s)
    if discount_beta is None:
        N = np.array([[x.N[i0], x.N[i1]] for x in series])
        V = np.array([[x.V[i0], x.V[i1]] for x in series])
    else:
        if series[0].scheme != "direct":
            raise ValueError("re-discounting applies to the direct scheme only")
        h = np.exp(-discount_beta * series[0].times[[i0, i1]]) / series[0].n
        N = np.array([x.counts[[i0, i1]] for x in series]) * h
        V = np.array([x.sums[[i0, i1]] for x in series]) * h[None, :, None]
    reports = []
    cols = [("N", N)] + [(f"V{j + 1}", V[:, :, j]) for j in range(V.shape[2])]
    for name, M in cols:
        inc = M[:, 1] - M[:, 0]
        reports.append(stats.mean_test(inc, 0.0, z, name=f"mean_increment[{name}, t={t}, s={s}]"))
        if np.ptp(M[:, 0]) > 0:
            # E[(M_{t+s} - M_t) M_t] = 0; a mean test on the product needs no normality
            reports.append(stats.mean_test(inc * M[:, 0], 0.0, z,
                                           name=f"orthogonal_increment[{name}, t={t}, s={s}]"))
    return reports


def second_moment_reference(alpha, beta, t):
    """``2 α ∫_0^t s exp(-β s) ds``, per coordinate, from a start at the origin."""
    t = np.asarray(t, dtype=float)
    return 2.0 * alpha * (1.0 - (1.0 + beta * t) * np.exp(-beta * t)) / beta**2


def second_moment_scheme(params, t):
    """Exact ``E V_t^2`` per coordinate for the level-``n`` scheme itself."""
    t = np.asarray(t, dtype=float)
    ref = second_moment_reference(params.alpha, params.beta, t)
    if params.scheme == "direct":
        return t * np.exp(-params.beta * t) / params.n + (1.0 + params.beta / (2 * params.alpha * params.n)) * ref
    return t / params.n + ref


@dataclass
class SecondMomentProfile:
    times: np.ndarray
    mean: np.ndarray  # (T, d)
    se: np.ndarray
    reference: np.ndarray
    scheme: np.ndarray
    plateau_limit: float
    erratum_value: float


def second_moment_profile(series, params):
    """Empirical ``E V_t^2`` per coordinate with standard errors and references."""
    series = _usable(series)
    V = np.array([s.V for s in series])  # (R, T, d)
    sq = V**2
    times = series[0].times
    return SecondMomentProfile(
        times,
        sq.mean(axis=0),
        sq.std(axis=0, ddof=1) / math.sqrt(len(series)),
        second_moment_reference(params.alpha, params.beta, times),
        second_moment_scheme(params, times),
        2.0 * params.alpha / params.beta**2,
        1.0 + params.beta / params.alpha,
    )


def tail_displacement(series, a, b):
    """Per replicate: ``max over mesh t in [a, b]`` of ``|com_t - com_b|``."""
    times = series[0].times
    sel = (times >= a - 1e-9) & (times <= b + 1e-9)
    ib = series[0].index(b)
    out = []
    for s in series:
        d = np.linalg.norm(s.com[sel] - s.com[ib], axis=1)
        out.append(float(d.max()))
    return np.array(out)


def com_clock(series):
    """Per-replicate quadratic-variation clock of the center of mass (averaged over coordinates)."""
    out = []
    for s in series:
        q = estimate_qv(s.times, s.com)
        out.append(q.qv.mean(axis=1))
    return np.array(out)  # (R, T)


@dataclass
class StabilizationReport:
    survivors: int
    tail_starts: list
    tail_medians: list
    windows: dict
    clock_median: float
    clock_tail_medians: dict
    clock_quantiles: dict


def com_stabilization(series, windows=((5, 10), (15, 20)), tail_starts=None):
    """Cauchy and clock diagnostics for surviving replicates."""
    series = [s for s in series if s.survived]
    if not series:
        raise ValueError("no surviving replicates")
    times = series[0].times
    horizon = float(times[-1])
    if tail_starts is None:
        tail_starts = [float(x) for x in np.arange(0, horizon, max(1.0, horizon / 10))]
    tail_medians = [float(np.median(tail_displacement(series, a, horizon))) for a in tail_starts]
    win = {f"[{a},{b}]": float(np.median(tail_displacement(series, a, b))) for a, b in windows}
    clock = com_clock(series)
    total = clock[:, -1]
    tails = {}
    for a, b in windows:
        ia, ib = series[0].index(a), series[0].index(b)
        tails[f"[{a},{b}]"] = float(np.median(clock[:, ib] - clock[:, ia]))
    return StabilizationReport(
        len(series), tail_starts, tail_medians, win, float(np.median(total)), tails,
        {q: float(np.quantile(total, q)) for q in (0.1, 0.5, 0.9)},
    )
