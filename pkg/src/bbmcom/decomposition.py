"""Centering operator, its algebra, and translation-invariant subsystem functionals."""

import math

import numpy as np

MAX_MATERIALIZE = 64
WEIGHT_TOL = 1e-12


class CenteringOperator:
    """``A = I - J/n``, the orthogonal projector onto the complement of ``(1, ..., 1)``.

    Applied in O(n) along the particle axis; the dense matrix is only built
    on request and only for ``n <= 64``.
    """

    def __init__(self, n):
        if n < 1:
            raise ValueError("n must be at least 1")
        self.n = int(n)

    @classmethod
    def for_epoch(cls, m):
        return cls(2**m)

    def __call__(self, x, axis=0):
        return apply_centering(x, axis=axis)

    def project_line(self, x, axis=0):
        """Component along ``(1, ..., 1)``: every entry replaced by the mean."""
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(x.mean(axis=axis, keepdims=True), x.shape).copy()

    def matrix(self):
        if self.n > MAX_MATERIALIZE:
            raise ValueError(f"refusing to materialize a {self.n}x{self.n} centering matrix")
        return np.eye(self.n) - np.full((self.n, self.n), 1.0 / self.n)


def apply_centering(x, axis=0):
    """Subtract the mean along ``axis``."""
    x = np.asarray(x, dtype=float)
    if x.shape[axis] < 1:
        raise ValueError("empty vector")
    return x - x.mean(axis=axis, keepdims=True)


def centering_rank(m, rtol=1e-9):
    """Numerical rank of the materialized ``A^(m)``.

    Singular values at or below ``rtol`` times the largest one are treated as
    zero.  ``m = 0`` gives the 1x1 zero matrix, rank 0.
    """
    if m < 0:
        raise ValueError("m must be non-negative")
    if 2**m > MAX_MATERIALIZE:
        raise ValueError(f"m={m} is too large to materialize")
    s = np.linalg.svd(CenteringOperator.for_epoch(m).matrix(), compute_uv=False)
    if s.max() == 0:
        return 0
    return int(np.sum(s > rtol * s.max()))


class SubsystemWeights:
    """Weights ``c`` with ``sum(c) = 0`` and ``sum(c**2) = 1``."""

    def __init__(self, c):
        c = np.asarray(c, dtype=float).ravel()
        if c.size < 2:
            raise ValueError("need at least two weights")
        if abs(c.sum()) > WEIGHT_TOL:
            raise ValueError("weights must sum to zero")
        if abs((c * c).sum() - 1.0) > WEIGHT_TOL:
            raise ValueError("weights must have unit Euclidean norm")
        self.c = c

    @property
    def k(self):
        return self.c.size

    @classmethod
    def pair(cls):
        s = 1.0 / math.sqrt(2.0)
        return cls([s, -s])

    def __repr__(self):
        return f"SubsystemWeights({self.c.tolist()})"


def tagging_epoch(k):
    """First epoch at which ``k`` distinct particles are tagged: ``floor(log2 k) + 1``."""
    if k < 1:
        raise ValueError("k must be positive")
    return int(math.floor(math.log2(k))) + 1


def initial_tags(k):
    """Evenly spread particle indices at the tagging epoch."""
    m0 = tagging_epoch(k)
    step = 2**m0 // k
    return m0, np.arange(k) * step


def first_child_lineage(tags, m0, m):
    """Indices at epoch ``m`` of the tagged lines, always following the first child."""
    if m < m0:
        raise ValueError("lineage undefined before the tagging epoch")
    return np.asarray(tags, dtype=np.int64) << (m - m0)


def random_lineage(tags, m0, m, rng):
    """Follow a uniformly chosen child at each branching."""
    if m < m0:
        raise ValueError("lineage undefined before the tagging epoch")
    idx = np.asarray(tags, dtype=np.int64)
    for _ in range(m - m0):
        idx = 2 * idx + rng.integers(0, 2, size=idx.size)
    return idx


def psi_functional(cloud, w, lineage):
    """``sum_i c_i Z^{lineage[i]}``, a d-vector invariant under translations."""
    z = cloud.positions if hasattr(cloud, "positions") else np.asarray(cloud, float)
    lineage = np.asarray(lineage, dtype=np.int64)
    if lineage.shape != (w.k,):
        raise ValueError("need one lineage index per weight")
    if lineage.min() < 0 or lineage.max() >= z.shape[0]:
        raise IndexError("lineage index out of range")
    return w.c @ z[lineage]


def centered_increment_cov(m, tau):
    """Covariance of ``(B - mean B)`` for n = 2**m independent BMs over ``tau``.

    Bilinear expansion: diagonal ``(1 - 2**-m) tau``, off-diagonal
    ``-2**-m tau``.  Returned as ``(diag, offdiag)``.
    """
    n = 2**m
    # E[(B_i - Bbar)(B_j - Bbar)] = tau * (delta_ij - 1/n - 1/n + n/n**2)
    diag = tau * (1.0 - 2.0 / n + 1.0 / n)
    off = tau * (0.0 - 2.0 / n + 1.0 / n)
    return diag, off
