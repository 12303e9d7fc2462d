"""
Subcritical and critical chaos masses built from field samples, and the
closed-form tail constants.

Masses are Riemann sums at cell centres::

    critical     sqrt(log 1/ε) Σ g(x_i) exp(√(2d) X_ε(x_i) - d Var X_ε(x_i)) h^d
    subcritical               Σ g(x_i) exp(γ X_ε(x_i) - γ²/2 Var X_ε(x_i)) h^d
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

from .errors import DomainError, EmptySetError, RegimeError, UnsupportedError
from .field import FieldBatch, FieldSample, as_batch


# --------------------------------------------------------------------------
# sets and densities
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SetSpec:
    """Finite union of closed boxes ``("box", lo, hi)`` and balls ``("ball", centre, radius)``.

    Cells are assigned to the set by their centre.
    """

    pieces: tuple

    @classmethod
    def box(cls, lo, hi):
        return cls((("box", tuple(np.atleast_1d(lo).astype(float)), tuple(np.atleast_1d(hi).astype(float))),))

    @classmethod
    def ball(cls, center, radius):
        return cls((("ball", tuple(np.atleast_1d(center).astype(float)), float(radius)),))

    def union(self, other):
        return SetSpec(self.pieces + other.pieces)

    @property
    def d(self):
        return len(self.pieces[0][1])

    def contains(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.zeros(len(pts), dtype=bool)
        tol = 1e-12
        for kind, a, b in self.pieces:
            if kind == "box":
                inside |= np.all((pts >= np.asarray(a) - tol) & (pts <= np.asarray(b) + tol), axis=1)
            elif kind == "ball":
                inside |= np.linalg.norm(pts - np.asarray(a), axis=1) <= b + tol
            else:
                raise DomainError(f"unknown set piece {kind!r}")
        return inside

    def volume(self):
        """Lebesgue measure, exact when pieces do not overlap."""
        vol = 0.0
        for kind, a, b in self.pieces:
            if kind == "box":
                vol += float(np.prod(np.subtract(b, a)))
            else:
                d = len(a)
                vol += math.pi ** (d / 2) / math.gamma(d / 2 + 1) * b ** d
        return vol

    def to_dict(self):
        return {"pieces": [[k, list(a), (list(b) if isinstance(b, tuple) else b)] for k, a, b in self.pieces]}

    @classmethod
    def from_dict(cls, obj):
        pieces = []
        for k, a, b in obj["pieces"]:
            pieces.append((k, tuple(a), tuple(b) if k == "box" else float(b)))
        return cls(tuple(pieces))


@dataclass(frozen=True, eq=False)
class DensitySpec:
    """Nonnegative continuous weight ``g``.

    ``tag`` is ``"constant"`` (``value``), ``"affine"`` (``value + slope·x``)
    or ``"function"`` (``func`` acting on point arrays of shape (m, d)).
    """

    tag: str = "constant"
    value: float = 1.0
    slope: tuple = ()
    func: Callable | None = None

    @classmethod
    def constant(cls, c=1.0):
        if c < 0:
            raise DomainError("density must be nonnegative")
        return cls("constant", float(c))

    @classmethod
    def affine(cls, intercept, slope):
        return cls("affine", float(intercept), tuple(np.atleast_1d(slope).astype(float)))

    @classmethod
    def function(cls, func):
        return cls("function", func=func)

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.tag == "constant":
            out = np.full(len(pts), self.value)
        elif self.tag == "affine":
            out = self.value + pts @ np.asarray(self.slope)
        else:
            out = np.asarray(self.func(pts), dtype=float).reshape(len(pts))
        if np.any(out < 0):
            raise DomainError("density is negative on the set")
        return out

    def to_dict(self):
        if self.tag == "function":
            raise TypeError("function densities are not serialisable")
        return {"tag": self.tag, "value": self.value, "slope": list(self.slope)}


@dataclass(eq=False)
class GmcMassSample:
    value: float
    regime: str
    gamma: float | None
    epsilon: float
    A: SetSpec
    g: DensitySpec
    seed: int
    replica: int
    normalisation: float = 1.0
    meta: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# masses
# --------------------------------------------------------------------------

def _weights(batch: FieldBatch, A: SetSpec, g: DensitySpec):
    inside = A.contains(batch.grid.points)
    if not inside.any():
        raise EmptySetError("set contains no grid cell")
    w = g(batch.grid.points[inside]) * batch.grid.cell_volume
    return inside, w


def chaos_values(batch: FieldBatch, gamma, A: SetSpec, g: DensitySpec):
    """``Σ g exp(γX - γ²/2 Var) h^d`` for every replica in the batch (no normalisation)."""
    inside, w = _weights(batch, A, g)
    if gamma == 0:
        return np.full(len(batch), float(w.sum()))
    x = batch.values[:, inside]
    expo = gamma * x - 0.5 * gamma * gamma * batch.variance[inside]
    return np.exp(expo) @ w


def critical_normalisation(epsilon):
    if not epsilon < 1:
        raise DomainError("critical normalisation needs epsilon < 1")
    return math.sqrt(math.log(1.0 / epsilon))


def critical_values(fs, A: SetSpec, g: DensitySpec):
    """Seneta-Heyde critical masses of every replica, as an array."""
    batch = as_batch(fs)
    norm = critical_normalisation(batch.epsilon)
    return norm * chaos_values(batch, math.sqrt(2 * batch.grid.d), A, g)


def subcritical_values(fs, gamma, A: SetSpec, g: DensitySpec):
    batch = as_batch(fs)
    _check_gamma(gamma, batch.grid.d, allow_zero=True)
    return chaos_values(batch, gamma, A, g)


def _wrap(batch, values, regime, gamma, A, g, norm):
    out = [GmcMassSample(float(v), regime, gamma, batch.epsilon, A, g, batch.seed, int(r), norm)
           for v, r in zip(values, batch.replicas)]
    return out


def critical_mass(fs, A: SetSpec, g: DensitySpec):
    """
    Critical chaos mass ``∫_A g dμ`` with Seneta-Heyde norming.

    Parameters
    ----------
    fs : FieldSample or FieldBatch
    A : SetSpec
    g : DensitySpec

    Returns
    -------
    GmcMassSample, or a list of them for a batch.
    """
    batch = as_batch(fs)
    vals = critical_values(batch, A, g)
    out = _wrap(batch, vals, "critical", None, A, g, critical_normalisation(batch.epsilon))
    return out[0] if isinstance(fs, FieldSample) else out


def subcritical_mass(fs, gamma, A: SetSpec, g: DensitySpec):
    """Subcritical chaos mass ``∫_A g dM_γ`` for ``0 <= γ < √(2d)``."""
    batch = as_batch(fs)
    vals = subcritical_values(batch, gamma, A, g)
    out = _wrap(batch, vals, "subcritical", float(gamma), A, g, 1.0)
    return out[0] if isinstance(fs, FieldSample) else out


def mass_table(sampler, pieces, n, gamma=None, chunk=2048, start=0):
    """
    Masses of several ``(A, g)`` pairs on shared field replicas.

    Parameters
    ----------
    sampler : FieldSampler
    pieces : sequence of (SetSpec, DensitySpec)
    n : int
        Number of replicas, drawn in chunks so memory stays bounded.
    gamma : float, optional
        Subcritical parameter; ``None`` gives critical masses.

    Returns
    -------
    ndarray of shape (n, len(pieces))
    """
    out = np.empty((n, len(pieces)))
    row = 0
    for batch in sampler.batches(n, chunk, start):
        for j, (A, g) in enumerate(pieces):
            if gamma is None:
                vals = critical_values(batch, A, g)
            else:
                vals = subcritical_values(batch, gamma, A, g)
            out[row:row + len(batch), j] = vals
        row += len(batch)
    return out


# --------------------------------------------------------------------------
# constants
# --------------------------------------------------------------------------

def _check_gamma(gamma, d, allow_zero=False):
    lo_ok = gamma >= 0 if allow_zero else gamma > 0
    if not (lo_ok and gamma * gamma < 2 * d):
        raise RegimeError(f"gamma = {gamma} is outside the subcritical range for d = {d}")


def q_param(gamma, d):
    """``Q = γ/2 + d/γ``."""
    return gamma / 2 + d / gamma


def cbar_subcritical(gamma, d):
    """
    Closed-form subcritical tail constant ``C̄_{γ,d}`` for ``d ∈ {1, 2}``.

    Evaluated through log-Gamma so that ``γ`` close to ``√(2d)`` (where the
    Gamma arguments approach 0) stays accurate.
    """
    if d not in (1, 2):
        raise UnsupportedError("closed form is only available for d = 1, 2")
    _check_gamma(gamma, d)
    Q = q_param(gamma, d)
    a = 0.5 * gamma * (Q - gamma)        # (γ/2)(Q-γ)
    b = (2.0 / gamma) * (Q - gamma)      # (2/γ)(Q-γ)
    if d == 1:
        log_c = b * math.log(2 * math.pi) - math.log(a) - (2 / gamma ** 2) * special.gammaln(a)
        return math.exp(log_c)
    g4 = gamma * gamma / 4
    base = math.pi * math.exp(special.gammaln(g4) - special.gammaln(1 - g4))
    # -Γ(-a) = Γ(1-a)/a > 0 for 0 < a < 1
    log_c = (b * math.log(base) - math.log(b) + special.gammaln(1 - a) - math.log(a)
             - special.gammaln(a) - special.gammaln(b))
    return math.exp(log_c)


def _integrate_over(A: SetSpec, func, quad_tol=1e-10):
    """Integral of a point function over ``A`` (d = 1 boxes by adaptive quadrature,
    otherwise a fine cell-centre rule)."""
    total = 0.0
    for kind, a, b in A.pieces:
        if kind == "box" and len(a) == 1:
            val, _ = integrate.quad(lambda v: float(func(np.array([[v]]))[0]), a[0], b[0],
                                    epsabs=quad_tol, epsrel=quad_tol, limit=200)
            total += val
        elif kind == "box":
            n = 400 if len(a) == 2 else 80
            axes = [np.linspace(a[i], b[i], n + 1) for i in range(len(a))]
            mids = [0.5 * (ax[1:] + ax[:-1]) for ax in axes]
            mesh = np.stack(np.meshgrid(*mids, indexing="ij"), axis=-1).reshape(-1, len(a))
            total += float(np.sum(func(mesh))) * float(np.prod(np.subtract(b, a))) / n ** len(a)
        else:
            c, r = np.asarray(a), b
            d = len(c)
            n = 400 if d <= 2 else 80
            axes = [np.linspace(c[i] - r, c[i] + r, n + 1) for i in range(d)]
            mids = [0.5 * (ax[1:] + ax[:-1]) for ax in axes]
            mesh = np.stack(np.meshgrid(*mids, indexing="ij"), axis=-1).reshape(-1, d)
            keep = np.linalg.norm(mesh - c, axis=1) <= r
            total += float(np.sum(func(mesh[keep]))) * (2 * r / n) ** d
    return total


def subcritical_tail_coeff(gamma, d, f_diag, g: DensitySpec, A: SetSpec):
    """
    Leading coefficient and exponent of the subcritical tail.

    Returns
    -------
    coefficient : float
        ``∫_A e^{(2d/γ)(Q-γ) f(v,v)} g(v)^{2d/γ²} dv · b/(b+1) · C̄_{γ,d}``
        with ``b = (2/γ)(Q-γ)``.
    exponent : float
        ``2d/γ²``.
    """
    c = cbar_subcritical(gamma, d)
    Q = q_param(gamma, d)
    b = (2.0 / gamma) * (Q - gamma)
    p = 2 * d / gamma ** 2
    kappa = (2 * d / gamma) * (Q - gamma)

    def integrand(v):
        return np.exp(kappa * np.asarray(f_diag(v), dtype=float).reshape(len(v))) * g(v) ** p

    weight = _integrate_over(A, integrand)
    return weight * b / (b + 1) * c, p


def critical_tail_coeff(d, g: DensitySpec, A: SetSpec):
    """``∫_A g / √(πd)``, the universal critical tail coefficient."""
    return _integrate_over(A, g) / math.sqrt(math.pi * d)


# --------------------------------------------------------------------------

@dataclass
class DerivativeReport:
    gamma: float
    quantiles: np.ndarray
    q_sub: np.ndarray
    q_crit: np.ndarray
    median_ratio: float
    max_log_discrepancy: float
    flagged: bool


def derivative_approx_check(batches, gamma, A: SetSpec, g: DensitySpec | None = None,
                            quantiles=(0.1, 0.25, 0.5, 0.75, 0.9), flag_at=0.5):
    """
    Compare ``M_γ(A)/(√(2d) - γ)`` with ``√(2π) μ(A)`` on the same fields.

    Returns quantile-by-quantile values and the largest absolute log-ratio;
    ``flagged`` is set when that exceeds ``flag_at``.
    """
    g = g or DensitySpec.constant(1.0)
    if isinstance(batches, (FieldBatch, FieldSample)):
        batches = [batches]
    batches = list(batches)
    if not batches or sum(len(as_batch(b)) for b in batches) == 0:
        raise EmptySetError("no field samples supplied")
    d = as_batch(batches[0]).grid.d
    crit = math.sqrt(2 * d)
    if not (crit - 0.2 < gamma < crit):
        raise RegimeError("gamma must lie within 0.2 below the critical value")
    sub = np.concatenate([subcritical_values(b, gamma, A, g) for b in batches]) / (crit - gamma)
    cri = np.concatenate([critical_values(b, A, g) for b in batches]) * math.sqrt(2 * math.pi)
    qs = np.asarray(quantiles)
    q_sub = np.quantile(sub, qs)
    q_cri = np.quantile(cri, qs)
    disc = np.abs(np.log(q_sub / q_cri))
    med = float(np.median(sub) / np.median(cri))
    return DerivativeReport(gamma, qs, q_sub, q_cri, med, float(disc.max()), bool(disc.max() > flag_at))
