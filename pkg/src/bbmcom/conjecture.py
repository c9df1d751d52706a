"""Exploratory look at the normalized local mass ``2**-M <Z_M, g>``.

Nothing here asserts the limit law.  The experiment only records how the
observed normalized mass compares with the candidate limits; the quadrature
behind the predictions is deterministic and self-checked.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from . import rng as rngmod
from .com import theoretical_com_variance
from .ensembles import map_replicates
from .model import ModelParams, final_state, ou_variance

KINDS = ("box", "ball", "bump")
BUMP_WIDTH = 8.0
QUAD_OPTS = dict(epsabs=1e-14, epsrel=1e-11, limit=200)


@dataclass(frozen=True)
class TestFunction:
    """Nonnegative, compactly supported test function.

    ``box``: indicator of ``|x_j - center_j| <= half_widths_j``.
    ``ball``: indicator of ``|x - center| <= radius``.
    ``bump``: ``exp(-|x - center|**2 / (2 scale**2))`` cut off outside the
    box of half-width ``8 * scale``; peak value 1.
    """

    kind: str
    center: tuple
    half_widths: tuple = ()
    radius: float = 1.0
    scale: float = 1.0

    __test__ = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        c = tuple(float(x) for x in np.atleast_1d(self.center))
        object.__setattr__(self, "center", c)
        if self.kind == "box":
            hw = tuple(float(x) for x in np.broadcast_to(np.atleast_1d(self.half_widths or 1.0), (len(c),)))
            if any(h <= 0 for h in hw):
                raise ValueError("box half-widths must be positive")
            object.__setattr__(self, "half_widths", hw)
        if self.kind == "ball" and not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.kind == "bump" and not self.scale > 0:
            raise ValueError("scale must be positive")

    @classmethod
    def box(cls, lo, hi):
        lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
        return cls("box", tuple((lo + hi) / 2), tuple((hi - lo) / 2))

    @property
    def dim(self):
        return len(self.center)

    def shifted(self, offset):
        c = tuple(np.asarray(self.center) + np.atleast_1d(offset))
        return TestFunction(self.kind, c, self.half_widths, self.radius, self.scale)

    def bounds(self):
        """Per-coordinate support intervals (bounding box)."""
        c = np.asarray(self.center)
        if self.kind == "box":
            w = np.asarray(self.half_widths)
        elif self.kind == "ball":
            w = np.full(self.dim, self.radius)
        else:
            w = np.full(self.dim, BUMP_WIDTH * self.scale)
        return [(float(a), float(b)) for a, b in zip(c - w, c + w)]

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        dx = x - np.asarray(self.center)
        if self.kind == "box":
            return np.all(np.abs(dx) <= np.asarray(self.half_widths), axis=1).astype(float)
        if self.kind == "ball":
            return (np.einsum("ij,ij->i", dx, dx) <= self.radius**2).astype(float)
        inside = np.all(np.abs(dx) <= BUMP_WIDTH * self.scale, axis=1)
        return np.where(inside, np.exp(-np.einsum("ij,ij->i", dx, dx) / (2 * self.scale**2)), 0.0)


def local_mass(cloud, g):
    """``sum_i g(Z^i)``."""
    z = cloud.positions if hasattr(cloud, "positions") else np.asarray(cloud, float)
    return float(g(z).sum())


def _quad1(f, a, b, points=()):
    pts = [p for p in points if a < p < b]
    val, _ = integrate.quad(f, a, b, points=pts or None, **QUAD_OPTS)
    return val


def _density_1d(gamma, x0):
    k = math.sqrt(gamma / math.pi)
    return lambda x: k * math.exp(-gamma * (x - x0) ** 2)


def predicted_limit(g, gamma, x0=None):
    """Candidate limit of the normalized local mass.

    Attraction (``gamma > 0``): integral of ``g`` against the density
    ``(gamma/pi)**(d/2) exp(-gamma |x - x0|**2)``.  Repulsion
    (``gamma < 0``): Lebesgue integral of ``g``.
    """
    if gamma == 0:
        raise ValueError("gamma must be non-zero")
    d = g.dim
    x0 = np.zeros(d) if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (d,):
        raise ValueError("x0 must match the test function's dimension")
    bounds = g.bounds()

    if gamma < 0:
        if g.kind == "box":
            return float(np.prod([b - a for a, b in bounds]))
        if g.kind == "ball":
            return math.pi ** (d / 2) * g.radius**d / math.gamma(d / 2 + 1)
        s = g.scale
        return math.prod(_quad1(lambda x, c=c: math.exp(-(x - c) ** 2 / (2 * s * s)), a, b, (c,))
                         for (a, b), c in zip(bounds, g.center))

    if g.kind == "box":
        return math.prod(_quad1(_density_1d(gamma, x0[j]), a, b, (x0[j],))
                         for j, (a, b) in enumerate(bounds))
    if g.kind == "bump":
        s = g.scale
        out = 1.0
        for j, (a, b) in enumerate(bounds):
            rho = _density_1d(gamma, x0[j])
            c = g.center[j]
            out *= _quad1(lambda x: rho(x) * math.exp(-(x - c) ** 2 / (2 * s * s)), a, b, (c, x0[j]))
        return out
    # ball
    if d == 1:
        (a, b), = bounds
        return _quad1(_density_1d(gamma, x0[0]), a, b, (x0[0],))
    if d > 3:
        raise NotImplementedError("ball quadrature is implemented for d <= 3")
    c = np.asarray(g.center)
    r = g.radius
    norm = (gamma / math.pi) ** (d / 2)

    def f(*xs):
        return norm * math.exp(-gamma * sum((xi - x0[i]) ** 2 for i, xi in enumerate(xs)))

    def ranges(j):
        # nquad integrates the first argument innermost
        def rng_j(*outer):
            used = sum((outer[k] - c[j + 1 + k]) ** 2 for k in range(len(outer)))
            h = math.sqrt(max(r * r - used, 0.0))
            return (c[j] - h, c[j] + h)
        return rng_j

    val, _ = integrate.nquad(f, [ranges(j) for j in range(d)],
                             opts={"epsabs": 1e-13, "epsrel": 1e-10, "limit": 200})
    return val


def residual_variance(gamma, t):
    """Per-coordinate variance of ``Z^i - mean(Z)`` at integer time ``t``.

    Over each unit epoch the residual contracts by ``exp(-gamma)`` and gains
    centered noise of variance ``ou_variance(gamma, 1) * (1 - 2**-m)``.
    """
    r = 0.0
    for m in range(int(t)):
        r = math.exp(-2 * gamma) * r + ou_variance(gamma, 1.0) * (1 - 2.0**-m)
    return r


@dataclass
class ConjectureReport:
    gamma: float
    dim: int
    epochs: int
    replicates: int
    test_function: dict
    rows: list
    summary: dict
    exploratory: bool = True
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "exploratory": self.exploratory,
            "gamma": self.gamma, "dim": self.dim, "epochs": self.epochs,
            "replicates": self.replicates, "test_function": self.test_function,
            "summary": self.summary, "rows": self.rows, "notes": self.notes,
        }


def conjecture_experiment(gamma, dim, g, epochs, replicates, seed, shift_to_com=True,
                          sampler="exact", threads=None):
    """Record observed vs predicted normalized local mass at time ``epochs``.

    With ``shift_to_com`` the test function is translated by the replicate's
    center of mass, which stands in for its (unobservable) limit.
    """
    if epochs < 10:
        raise ValueError("use at least 10 epochs")
    if replicates < 100:
        raise ValueError("use at least 100 replicates")
    params = ModelParams(gamma=gamma, dim=dim, max_epoch=epochs, sampler=sampler)

    def one(r):
        z = final_state(params, seed, r, until=epochs).positions
        zbar = z.mean(axis=0)
        gr = g.shifted(zbar) if shift_to_com else g
        observed = local_mass(z, gr) / z.shape[0]
        predicted = predicted_limit(gr, gamma, zbar) if gamma != 0 else float("nan")
        pick = int(rngmod.stream(seed, "ensemble", r, epochs).integers(z.shape[0]))
        spread = ((z - zbar) ** 2).mean(axis=0).tolist()
        return {"replicate": r, "com": zbar.tolist(), "observed": observed,
                "predicted": predicted, "picked": z[pick].tolist(), "spread": spread}

    rows = map_replicates(one, range(replicates), threads)
    obs = np.array([row["observed"] for row in rows])
    pred = np.array([row["predicted"] for row in rows])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pred > 0, obs / pred, np.nan)
    for row, q in zip(rows, ratio):
        row["ratio"] = float(q)
    picked = np.array([row["picked"] for row in rows])
    finite = ratio[np.isfinite(ratio)]
    summary = {
        "observed_mean": float(obs.mean()),
        "predicted_mean": float(pred.mean()),
        "ratio_mean": float(finite.mean()) if finite.size else None,
        "ratio_median": float(np.median(finite)) if finite.size else None,
        "ratio_std": float(finite.std(ddof=1)) if finite.size > 1 else None,
        "ratio_quantiles": {str(q): float(np.quantile(finite, q)) for q in (0.05, 0.25, 0.75, 0.95)}
        if finite.size else {},
        "uniform_particle_variance": picked.var(axis=0, ddof=1).tolist(),
        "pooled_particle_variance": (np.array([row["com"] for row in rows]).var(axis=0, ddof=1)
                                     + np.mean([row["spread"] for row in rows], axis=0)).tolist(),
        "finite_time_reference": theoretical_com_variance(epochs) + residual_variance(gamma, epochs),
    }
    if gamma > 0:
        summary["candidate_2_plus_1_over_2gamma"] = 2 + 1 / (2 * gamma)
        summary["candidate_2_plus_1_over_4gamma2"] = 2 + 1 / (4 * gamma**2)
    notes = [
        "exploratory: no pass/fail is attached to the local-mass comparison",
        "the limiting center is replaced by the center of mass at the final time "
        "(error of order 2**(-epochs/2))",
    ]
    tf = {"kind": g.kind, "center": list(g.center), "half_widths": list(g.half_widths),
          "radius": g.radius, "scale": g.scale, "shift_to_com": shift_to_com}
    return ConjectureReport(gamma, dim, epochs, replicates, tf, rows, summary, True, notes)


def erf_self_check(tol=1e-6):
    """Quadrature against the closed form ``erf(1)`` for gamma=1, d=1, g=1[-1,1]."""
    got = predicted_limit(TestFunction.box(-1.0, 1.0), 1.0, [0.0])
    want = special.erf(1.0)
    return bool(abs(got - want) <= tol * want), float(got), float(want)
