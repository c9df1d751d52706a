"""Center of mass of the interacting system: law, limit and quadratic variation."""

import math
from dataclasses import dataclass

import numpy as np

from . import stats
from .ensembles import map_replicates
from .model import ModelParams, simulate

MAX_QV_SPACING = 2.0**-6


@dataclass
class ComRecord:
    t: float
    com: np.ndarray
    replicate_id: int = 0


@dataclass
class QuadraticVariationSeries:
    grid: np.ndarray
    qv: np.ndarray  # (len(grid), d), cumulative

    @property
    def total(self):
        return self.qv[-1]

    def increment(self, t0, t1):
        """Clock accumulated over ``[t0, t1]`` (grid points nearest to each end)."""
        i0 = int(np.argmin(np.abs(self.grid - t0)))
        i1 = int(np.argmin(np.abs(self.grid - t1)))
        return self.qv[i1] - self.qv[i0]


def com(cloud):
    """Coordinate-wise mean of the particle positions."""
    z = cloud.positions if hasattr(cloud, "positions") else np.asarray(cloud, float)
    return z.mean(axis=0)


def theoretical_com_variance(t):
    """Per-coordinate variance of the center of mass at time ``t``.

    Epoch ``k`` contributes ``2**-k`` (a unit-time Brownian motion averaged
    over ``2**k`` particles), the running epoch ``tau * 2**-m``.  Tends to 2.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if math.isinf(t):
        return 2.0
    m = int(math.floor(t))
    tau = t - m
    return (2.0 - 2.0 ** (1 - m)) + tau * 2.0**-m


def com_limit_test(samples, t, level=0.01, method="ks", min_replicates=1000):
    """Test each coordinate of the center-of-mass ensemble at time ``t``.

    Compares against ``N(0, theoretical_com_variance(t))`` with a one-sample
    KS test (``method="ks"``) or, with ``method="ad"``, adds an
    Anderson-Darling normality check.  Returns one report per coordinate.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < min_replicates:
        raise ValueError(f"need at least {min_replicates} replicates, got {x.shape[0]}")
    var = theoretical_com_variance(t)
    reports = []
    for j in range(x.shape[1]):
        rep = stats.ks_normal(x[:, j], 0.0, var, level, name=f"com_limit[coord {j}]")
        rep.params["t"] = t
        reports.append(rep)
        if method == "ad":
            reports.append(stats.anderson_darling_normal(x[:, j], level, f"com_ad[coord {j}]"))
    return reports


def estimate_qv(times, path, max_spacing=MAX_QV_SPACING):
    """Cumulative sum of squared increments of ``path`` sampled at ``times``."""
    times = np.asarray(times, dtype=float)
    path = np.asarray(path, dtype=float)
    if path.ndim == 1:
        path = path[:, None]
    if times.ndim != 1 or times.size != path.shape[0] or times.size < 2:
        raise ValueError("times and path must align and hold at least two points")
    dt = np.diff(times)
    if np.any(dt < 0):
        raise ValueError("mesh must be sorted")
    if max_spacing is not None and dt.max() > max_spacing * (1 + 1e-9):
        raise ValueError(f"mesh spacing exceeds {max_spacing}")
    inc = np.diff(path, axis=0) ** 2
    qv = np.vstack([np.zeros((1, path.shape[1])), np.cumsum(inc, axis=0)])
    return QuadraticVariationSeries(times, qv)


# ensemble helpers -----------------------------------------------------------

def com_at(params, seed, replicates, t, threads=None, start=0):
    """``(replicates, d)`` array of the center of mass at time ``t``."""
    p = ModelParams(params.gamma, params.dim, params.max_epoch, params.sampler,
                    params.dt, (), params.cell_budget)

    def one(r):
        snap = None
        for snap in simulate(p, seed, r, until=t):
            pass
        return snap.com

    return np.array(map_replicates(one, range(start, start + replicates), threads))


def com_path(params, seed, replicate, until):
    """Center-of-mass path at every emitted snapshot (duplicate times dropped)."""
    ts, zs = [], []
    for snap in simulate(params, seed, replicate, until=until):
        if snap.stage == "post":
            continue
        ts.append(snap.t)
        zs.append(snap.com)
    return np.array(ts), np.array(zs)


def uniform_mesh(spacing):
    """Intra-epoch mesh ``0, h, 2h, ... < 1``."""
    k = int(round(1.0 / spacing))
    if not math.isclose(k * spacing, 1.0):
        raise ValueError("spacing must divide 1")
    return tuple(i / k for i in range(k))


def qv_clock(params, seed, replicates, until, spacing=2.0**-8, threads=None):
    """Estimated center-of-mass clock at ``until`` for each replicate, ``(R, d)``."""
    p = ModelParams(params.gamma, params.dim, params.max_epoch, params.sampler,
                    params.dt, uniform_mesh(spacing), params.cell_budget)

    def one(r):
        ts, zs = com_path(p, seed, r, until)
        return estimate_qv(ts, zs).total

    return np.array(map_replicates(one, range(replicates), threads))
