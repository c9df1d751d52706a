"""Dyadic branching Brownian motion with mean-field attraction/repulsion.

In epoch ``m`` (time ``[m, m+1)``) there are ``n = 2**m`` particles in
``R^d``.  Particle ``i`` diffuses as a standard Brownian motion with drift
``gamma * (mean(Z) - Z^i)``; ``gamma > 0`` attracts towards the center of
mass, ``gamma < 0`` repels.  At every integer time each particle is replaced
by two children at its position.

Positions are stored as an ``(n, d)`` array.  Array-level updates accept any
leading batch axes, ``(..., n, d)``, so ensembles can be advanced in one call.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod

SAMPLERS = ("exact", "euler")
MESH_TOL = 1e-9
# |gamma*h| below this switches the variance function to its series
SERIES_CUTOFF = 1e-6


class ResourceCapError(RuntimeError):
    """Raised when a run would exceed the configured memory budget."""


@dataclass(frozen=True)
class ModelParams:
    gamma: float = 1.0
    dim: int = 1
    max_epoch: int = 0
    sampler: str = "exact"
    dt: float = 1e-3
    record_mesh: tuple = ()
    cell_budget: int = 1 << 18

    def __post_init__(self):
        if not math.isfinite(self.gamma):
            raise ValueError("gamma must be a finite real")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("invariant violated: dim ≥ 1")
        if int(self.max_epoch) != self.max_epoch or self.max_epoch < 0:
            raise ValueError("invariant violated: max_epoch ≥ 0")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")
        if not 0 < self.dt <= 1:
            raise ValueError("invariant violated: dt ∈ (0, 1]")
        mesh = tuple(float(x) for x in self.record_mesh)
        if any(not 0 <= x < 1 for x in mesh):
            raise ValueError("invariant violated: record_mesh within [0, 1)")
        if any(b <= a for a, b in zip(mesh, mesh[1:])):
            raise ValueError("invariant violated: record_mesh strictly increasing")
        object.__setattr__(self, "record_mesh", mesh)


@dataclass
class ParticleCloud:
    """Full state at one time: ``t = epoch + tau``.

    ``tau == 1`` is allowed only for the pre-branch state at the end of an
    epoch.
    """

    epoch: int
    tau: float
    positions: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 2:
            raise ValueError("positions must be an (n, d) array")
        if self.positions.shape[0] != 2**self.epoch:
            raise ValueError(
                f"epoch {self.epoch} needs {2**self.epoch} particles, "
                f"got {self.positions.shape[0]}"
            )
        if not 0 <= self.tau <= 1:
            raise ValueError("tau must lie in [0, 1]")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("non-finite particle coordinate")

    @classmethod
    def origin(cls, dim=1):
        return cls(0, 0.0, np.zeros((1, dim)))

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    @property
    def t(self):
        return self.epoch + self.tau


@dataclass
class Snapshot:
    """One emitted state of a run.

    ``stage`` is ``"start"``, ``"mesh"``, ``"pre"`` (integer time, before
    branching), ``"post"`` (after branching) or ``"final"``.
    """

    t: float
    epoch: int
    tau: float
    stage: str
    positions: np.ndarray = field(repr=False)

    @property
    def com(self):
        return self.positions.mean(axis=0)


def n_of_t(t):
    """Number of particles alive at time ``t``: ``2**floor(t)``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return 2 ** int(math.floor(t))


def _positions(cloud):
    return cloud.positions if isinstance(cloud, ParticleCloud) else np.asarray(cloud, float)


def net_drift(cloud, gamma):
    """Row ``i`` is ``gamma * (mean(Z) - Z^i)``."""
    z = _positions(cloud)
    return gamma * (z.mean(axis=-2, keepdims=True) - z)


def assemble_drift_flat(x, gamma, dim):
    """Drift of the stacked ``2**m * d`` vector, component by component.

    Component ``j`` is ``gamma * (2**-m * (x_c + x_{c+d} + ...) - x_j)`` where
    ``c = j mod d``.  Equals ``net_drift`` after reshaping to ``(n, d)``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or dim < 1 or x.size % dim:
        raise ValueError("vector length must be a multiple of dim")
    n = x.size // dim
    sums = np.array([x[c::dim].sum() for c in range(dim)])
    out = np.empty_like(x)
    for c in range(dim):
        out[c::dim] = sums[c] / n - x[c::dim]
    return gamma * out


def ou_variance(gamma, h):
    """Variance ``(1 - exp(-2 gamma h)) / (2 gamma)`` of the OU increment.

    Reduces to ``h`` at ``gamma = 0``; positive for either sign of gamma.
    """
    x = gamma * h
    if abs(x) < SERIES_CUTOFF:
        return h * (1.0 - x + (2.0 / 3.0) * x * x)
    return -math.expm1(-2.0 * x) / (2.0 * gamma)


def euler_update(z, gamma, dt, xi):
    """One Euler-Maruyama step for ``(..., n, d)`` positions and normals ``xi``."""
    return z + gamma * (z.mean(axis=-2, keepdims=True) - z) * dt + math.sqrt(dt) * xi


def exact_update(z, gamma, h, g, c):
    """Exact Gaussian transition over ``h`` from standard normals.

    ``g`` has the shape of ``z``; ``c`` has shape ``(..., 1, d)``.  The
    center of mass moves by an independent ``N(0, h/n)`` draw, the residuals
    contract by ``exp(-gamma h)`` and receive centered noise of variance
    ``ou_variance(gamma, h)``.  Never forms an ``n x n`` matrix.
    """
    n = z.shape[-2]
    zbar = z.mean(axis=-2, keepdims=True)
    g = g * math.sqrt(ou_variance(gamma, h))
    eps = g - g.mean(axis=-2, keepdims=True)
    return zbar + c * math.sqrt(h / n) + math.exp(-gamma * h) * (z - zbar) + eps


def _check_drift_balance(drift):
    # drifts sum to zero up to roundoff
    scale = 1.0 + float(np.abs(drift).max(initial=0.0))
    if np.any(np.abs(drift.mean(axis=0)) > 1e-12 * scale):
        raise RuntimeError("net drift rows do not average to zero")


def euler_step(cloud, params, noise, dt):
    """Advance by one Euler step of size ``dt`` using standard normals ``noise``."""
    if cloud.tau + dt > 1 + MESH_TOL:
        raise ValueError("Euler step would cross a branching time")
    noise = np.asarray(noise, dtype=float)
    if noise.shape != cloud.positions.shape:
        raise ValueError("noise block does not match the cloud")
    drift = net_drift(cloud, params.gamma)
    _check_drift_balance(drift)
    z = cloud.positions + drift * dt + math.sqrt(dt) * noise
    return ParticleCloud(cloud.epoch, min(cloud.tau + dt, 1.0), z)


def exact_epoch_step(cloud, params, tau_target, rng):
    """Sample the exact transition of the cloud from ``tau`` to ``tau_target``."""
    if not cloud.tau < tau_target <= 1:
        raise ValueError("need tau < tau_target ≤ 1")
    h = tau_target - cloud.tau
    g = rng.standard_normal(cloud.positions.shape)
    c = rng.standard_normal((1, cloud.dim))
    z = exact_update(cloud.positions, params.gamma, h, g, c)
    return ParticleCloud(cloud.epoch, tau_target, z)


def branch(cloud):
    """Replace every particle by two children at its position.

    Children ``2i`` and ``2i+1`` (0-based) descend from parent ``i``.
    """
    if abs(cloud.tau - 1.0) > MESH_TOL:
        raise ValueError("branching only happens at the end of an epoch")
    return ParticleCloud(cloud.epoch + 1, 0.0, np.repeat(cloud.positions, 2, axis=0))


def _advance(cloud, params, target, rng):
    if params.sampler == "exact":
        return exact_epoch_step(cloud, params, target, rng)
    while target - cloud.tau > MESH_TOL:
        h = min(params.dt, target - cloud.tau)
        cloud = euler_step(cloud, params, rng.standard_normal(cloud.positions.shape), h)
    cloud.tau = target
    return cloud


def simulate(params, seed, replicate=0, until=None):
    """Run one replicate and yield ``Snapshot`` objects in time order.

    The run starts with one particle at the origin and ends at ``until``
    (default ``max_epoch + 1``, the end of epoch ``max_epoch``).  Snapshots
    are emitted at ``t = 0``, at every ``record_mesh`` time of every epoch,
    and before and after each branching; the state at ``until`` is emitted
    with stage ``"final"`` and is not branched.  Epoch ``m`` draws from the
    stream keyed by ``(seed, "bbm", replicate, m)``.
    """
    t_end = params.max_epoch + 1 if until is None else until
    if t_end < 0:
        raise ValueError("until must be non-negative")
    last_epoch = max(math.ceil(t_end) - 1, 0)
    if 2**last_epoch * params.dim > params.cell_budget:
        raise ResourceCapError(
            f"2**{last_epoch} particles x {params.dim} dims exceeds the budget "
            f"of {params.cell_budget} cells"
        )
    cloud = ParticleCloud.origin(params.dim)
    if t_end == 0:
        yield Snapshot(0.0, 0, 0.0, "final", cloud.positions)
        return
    yield Snapshot(0.0, 0, 0.0, "start", cloud.positions)
    for m in range(last_epoch + 1):
        rng = rngmod.stream(seed, "bbm", replicate, m)
        stop = min(t_end - m, 1.0)
        for x in params.record_mesh:
            if x >= stop - MESH_TOL:
                break
            if x > cloud.tau + MESH_TOL:
                cloud = _advance(cloud, params, x, rng)
                yield Snapshot(m + x, m, x, "mesh", cloud.positions)
        if stop > cloud.tau + MESH_TOL:
            cloud = _advance(cloud, params, stop, rng)
        if m == last_epoch:
            yield Snapshot(m + stop, m, stop, "final", cloud.positions)
            return
        yield Snapshot(m + 1.0, m, 1.0, "pre", cloud.positions)
        cloud = branch(cloud)
        yield Snapshot(m + 1.0, m + 1, 0.0, "post", cloud.positions)


def final_state(params, seed, replicate=0, until=None):
    """Convenience: the last snapshot of ``simulate``."""
    snap = None
    for snap in simulate(params, seed, replicate, until):
        pass
    return snap
