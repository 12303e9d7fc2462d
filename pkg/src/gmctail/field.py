"""
Exact-in-law sampling of regularised log-correlated Gaussian fields on grids.

A covariance matrix is factorised once (eigen-decomposition with clipping)
and reused for every replica.  Replica ``r`` always draws its standard
normals from the stream ``RngPolicy.generator(r)``, so a batch is the same
whichever way it is split into chunks or workers.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ResourceError
from .kernels import CovMatrix, KernelDescriptor, build_cov_matrix, yhat_cov_matrix
from .rng import RngPolicy, as_policy, chunked

MAX_POINTS = 8192
BLOCK = 256


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Cell-centred grid.

    Parameters
    ----------
    d : int
    lo, hi : tuple of float
        Bounding box.
    spacing : float
        Cell side; every cell has volume ``spacing**d``.
    points : ndarray, shape (m, d)
        Cell centres, possibly a subset of the full box lattice.
    """

    d: int
    lo: tuple
    hi: tuple
    spacing: float
    points: np.ndarray

    def __post_init__(self):
        if not self.spacing > 0:
            raise DomainError("grid spacing must be positive")
        if self.points.ndim != 2 or self.points.shape[1] != self.d:
            raise DomainError("points must have shape (m, d)")

    @classmethod
    def box(cls, lo, hi, spacing):
        """Regular lattice of cell centres covering ``[lo, hi]``.

        The number of cells per axis is ``round((hi - lo) / spacing)`` and the
        spacing is adjusted so the cells tile the box exactly.
        """
        if not spacing > 0:
            raise DomainError("grid spacing must be positive")
        lo = tuple(float(v) for v in np.atleast_1d(lo))
        hi = tuple(float(v) for v in np.atleast_1d(hi))
        if len(lo) != len(hi):
            raise DomainError("box corners have different dimensions")
        widths = np.subtract(hi, lo)
        if np.any(widths <= 0):
            raise DomainError("empty box")
        counts = np.maximum(1, np.rint(widths / spacing).astype(int))
        steps = widths / counts
        if not np.allclose(steps, steps[0], rtol=1e-9):
            raise DomainError("box sides are not commensurate with a common spacing")
        axes = [lo[i] + (np.arange(counts[i]) + 0.5) * steps[i] for i in range(len(lo))]
        pts = np.array(list(itertools.product(*axes)), dtype=float)
        return cls(len(lo), lo, hi, float(steps[0]), pts)

    @classmethod
    def punctured_ball(cls, d, radius, spacing, inner=0.0):
        """Lattice cells of ``box(-radius, radius)`` whose centres satisfy ``inner < |x| <= radius``."""
        full = cls.box([-radius] * d, [radius] * d, spacing)
        r = np.linalg.norm(full.points, axis=1)
        keep = (r > inner) & (r <= radius) & (r > 0)
        return cls(d, full.lo, full.hi, full.spacing, full.points[keep])

    @property
    def n_points(self):
        return self.points.shape[0]

    @property
    def cell_volume(self):
        return self.spacing ** self.d

    def to_dict(self):
        return {"d": self.d, "lo": list(self.lo), "hi": list(self.hi),
                "spacing": self.spacing, "n_points": self.n_points}


@dataclass(eq=False)
class FieldSample:
    """One replica of ``X_ε`` on a grid."""

    grid: GridSpec
    epsilon: float
    values: np.ndarray
    variance: np.ndarray
    kernel_id: str
    seed: int
    replica: int

    def __post_init__(self):
        if self.values.shape != (self.grid.n_points,):
            raise DomainError("values length does not match the grid")


@dataclass(eq=False)
class FieldBatch:
    """Several replicas stored row-wise; ``values[k]`` is replica ``replicas[k]``."""

    grid: GridSpec
    epsilon: float
    values: np.ndarray
    variance: np.ndarray
    kernel_id: str
    seed: int
    replicas: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.n_points:
            raise DomainError("batch values must have shape (n, n_points)")
        if self.replicas is None:
            self.replicas = np.arange(self.values.shape[0])

    def __len__(self):
        return self.values.shape[0]

    def samples(self):
        return [FieldSample(self.grid, self.epsilon, self.values[k], self.variance,
                            self.kernel_id, self.seed, int(self.replicas[k]))
                for k in range(len(self))]

    @classmethod
    def from_samples(cls, samples):
        if not samples:
            raise DomainError("no field samples")
        s0 = samples[0]
        return cls(s0.grid, s0.epsilon, np.stack([s.values for s in samples]), s0.variance,
                   s0.kernel_id, s0.seed, np.array([s.replica for s in samples]))


def as_batch(fs):
    """Coerce a FieldSample, a list of them, or a FieldBatch into a FieldBatch."""
    if isinstance(fs, FieldBatch):
        return fs
    if isinstance(fs, FieldSample):
        return FieldBatch.from_samples([fs])
    return FieldBatch.from_samples(list(fs))


# --------------------------------------------------------------------------

def standard_normals(policy: RngPolicy, replicas, m):
    """Rows of i.i.d. N(0, 1); row ``k`` comes from the stream of ``replicas[k]``."""
    out = np.empty((len(replicas), m))
    for k, r in enumerate(replicas):
        out[k] = policy.generator(int(r)).standard_normal(m)
    return out


def _check_grid(grid, epsilon):
    if grid.n_points > MAX_POINTS:
        raise ResourceError(f"grid has {grid.n_points} points; dense factorisation is capped at {MAX_POINTS}")
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    if grid.spacing > 2.0 * epsilon * 1.05:  # slack for box tiling
        warnings.warn(f"grid spacing {grid.spacing:.3g} is coarser than 2*epsilon; "
                      "the field is under-resolved", RuntimeWarning)


class FieldSampler:
    """Factor a covariance once and draw replicas from it.

    Parameters
    ----------
    cov : CovMatrix
    grid : GridSpec
    rng : RngPolicy or int
    """

    def __init__(self, cov: CovMatrix, grid: GridSpec, rng):
        self.cov = cov
        self.grid = grid
        self.policy = as_policy(rng)
        self._factor_t = np.ascontiguousarray(cov.factor.T)

    def batch(self, replicas) -> FieldBatch:
        replicas = np.asarray(replicas, dtype=np.int64)
        m = self._factor_t.shape[0]
        z = standard_normals(self.policy, replicas, m)
        # The product is formed in fixed blocks of BLOCK consecutive replica
        # indices, so a replica's row always sees the same matrix shape and
        # position and its bits do not depend on how the request was split.
        out = np.empty((replicas.size, self._factor_t.shape[1]))
        blocks = replicas // BLOCK
        for blk in np.unique(blocks):
            sel = np.flatnonzero(blocks == blk)
            buf = np.zeros((BLOCK, m))
            buf[replicas[sel] % BLOCK] = z[sel]
            out[sel] = (buf @ self._factor_t)[replicas[sel] % BLOCK]
        return FieldBatch(self.grid, self.cov.epsilon, out,
                          self.cov.variance, self.cov.kernel_id, self.policy.seed, replicas)

    def batches(self, n, chunk=4096, start=0):
        """Iterate over fixed-size chunks covering replicas ``start .. start + n - 1``."""
        for _, a, b in chunked(n, chunk):
            yield self.batch(np.arange(start + a, start + b))


def field_sampler(k: KernelDescriptor, grid: GridSpec, epsilon, rng) -> FieldSampler:
    _check_grid(grid, epsilon)
    return FieldSampler(build_cov_matrix(k, grid.points, epsilon), grid, rng)


def sample_field(k: KernelDescriptor, grid: GridSpec, epsilon, rng, n):
    """
    Draw ``n`` replicas of the regularised field ``X_ε``.

    Parameters
    ----------
    k : KernelDescriptor
    grid : GridSpec
    epsilon : float
        Regularisation scale in ``-log(|x - y| ∨ ε) + f``.
    rng : RngPolicy or int
    n : int

    Returns
    -------
    list of FieldSample
        Replicas ``0 .. n - 1``.
    """
    return field_sampler(k, grid, epsilon, rng).batch(np.arange(n)).samples()


# --------------------------------------------------------------------------
# radial plus lateral decomposition of the reference field

def radial_brownian(policy, replicas, s_nodes):
    """Brownian motion ``B_s`` at the sorted nonnegative times ``s_nodes``, one row per replica."""
    s_nodes = np.asarray(s_nodes, dtype=float)
    ds = np.diff(np.concatenate([[0.0], s_nodes]))
    z = standard_normals(policy, replicas, len(s_nodes))
    return np.cumsum(z * np.sqrt(ds), axis=1)


def sample_reference_radial(d, grid: GridSpec, epsilon, rng, n, return_parts=False):
    """
    Reference field as radial Brownian motion plus an independent lateral field.

    ``values = B_{-log|x|} + Ŷ(x)`` where ``B`` is a single Brownian path in
    the log-radius variable (shared by all points and linearly interpolated
    between grid radii) and ``Ŷ`` has the regularised lateral covariance.
    Grid points must satisfy ``0 < |x| <= 1``.

    Returns
    -------
    list of FieldSample, or (samples, radial, lateral) arrays if ``return_parts``.
    """
    if d < 2:
        raise DomainError("radial decomposition needs d >= 2")
    pts = grid.points
    r = np.linalg.norm(pts, axis=1)
    if np.any(r == 0):
        raise DomainError("grid contains the origin")
    if np.any(r > 1 + 1e-12):
        raise DomainError("radial decomposition needs |x| <= 1")
    _check_grid(grid, epsilon)
    policy = as_policy(rng)
    s = -np.log(r)
    nodes = np.unique(s)
    replicas = np.arange(n)
    bm = radial_brownian(policy.child("radial"), replicas, nodes)
    radial = np.stack([np.interp(s, nodes, row) for row in bm]) if n else np.zeros((0, len(s)))
    cov = yhat_cov_matrix(d, pts, epsilon)
    lateral = FieldSampler(cov, grid, policy.child("lateral")).batch(replicas).values
    values = radial + lateral
    variance = s + cov.variance
    samples = [FieldSample(grid, float(epsilon), values[k], variance, f"reference_radial(d={d})",
                           policy.seed, k) for k in range(n)]
    if return_parts:
        return samples, radial, lateral
    return samples


def shift_field(sample, sigma2, rng, replica=None):
    """
    Add one shared independent ``N(0, sigma2)`` draw to every grid value.

    Works on a FieldSample (one draw) or a FieldBatch (one draw per row, taken
    from the stream of that row's replica index).
    """
    if sigma2 < 0:
        raise DomainError("sigma2 must be nonnegative")
    policy = as_policy(rng).child("shift")
    if isinstance(sample, FieldBatch):
        reps = sample.replicas
        shift = np.array([policy.generator(int(r)).standard_normal() for r in reps]) * np.sqrt(sigma2)
        return FieldBatch(sample.grid, sample.epsilon, sample.values + shift[:, None],
                          sample.variance + sigma2, sample.kernel_id, sample.seed, reps.copy())
    rep = sample.replica if replica is None else replica
    shift = policy.generator(int(rep)).standard_normal() * np.sqrt(sigma2)
    return FieldSample(sample.grid, sample.epsilon, sample.values + shift, sample.variance + sigma2,
                       sample.kernel_id, sample.seed, sample.replica)
