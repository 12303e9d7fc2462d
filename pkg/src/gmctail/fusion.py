"""
Toy model for the fusion estimate.

Left side, for a Brownian motion ``B`` and ``c = √(2d)``::

    √t · E[exp(-λ(U_t + e^{c B_t} V + W))],    U_t = ∫_0^t e^{c B_s} ds.

Right side::

    √(2/π) ∫_0^∞ E[exp(-λ(e^{cx} I_x + W))] dx,
    I_x = ∫_0^{L_x} e^{-c β'_s} ds + ∫_0^∞ e^{-c β_s} ds,

with ``β, β'`` independent BES(3) processes from 0 and ``L_x`` the last
passage of ``β'`` at ``x``.  By time reversal the first piece has the law of
``e^{-cx} ∫_0^{T_x} e^{c B_u} du`` with ``T_x`` the first passage of a
Brownian motion at ``x``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, special

from . import _paths
from .bessel import bes3_exit_profile, bm_hit_profile, generator
from .errors import DomainError, TruncationError
from .rng import as_policy, chunked

LAWS = ("zero", "const", "lognormal")


def _law(spec):
    spec = dict(spec or {"type": "zero"})
    if spec.get("type") not in LAWS:
        raise DomainError(f"unknown law {spec!r}")
    return spec


def sample_law(spec, g, n):
    """Draw ``n`` values of a nonnegative law descriptor."""
    spec = _law(spec)
    if spec["type"] == "zero":
        return np.zeros(n)
    if spec["type"] == "const":
        return np.full(n, float(spec["value"]))
    return np.exp(spec.get("mu", 0.0) + spec.get("sigma", 1.0) * g.standard_normal(n))


def law_laplace(spec, lam):
    """``E[e^{-λW}]`` by quadrature (lognormal) or directly."""
    spec = _law(spec)
    if spec["type"] == "zero":
        return 1.0
    if spec["type"] == "const":
        return math.exp(-lam * spec["value"])
    mu, sig = spec.get("mu", 0.0), spec.get("sigma", 1.0)
    f = lambda z: math.exp(-lam * math.exp(mu + sig * z) - 0.5 * z * z)
    val, _ = integrate.quad(f, -40, 40, limit=200, epsabs=1e-13)
    return val / math.sqrt(2 * math.pi)


@dataclass(frozen=True)
class ToyConfig:
    """Parameters of the toy model.

    ``x_max`` defaults to ``(log(1/λ) + 12)/√(2d)`` which makes the neglected
    part of the ``x`` integral of order ``e^{-12}``.
    """

    d: int = 1
    lam: float = 1.0
    t: float = 100.0
    h: float = 1e-2
    V: dict = field(default_factory=lambda: {"type": "zero"})
    W: dict = field(default_factory=lambda: {"type": "zero"})
    x_max: float | None = None
    ptol: float = 1e-4
    dx: float = 0.02

    def __post_init__(self):
        if self.d < 1:
            raise DomainError("d must be a positive integer")
        if not self.lam >= 0:
            raise DomainError("lambda must be nonnegative")
        if not self.t > 0:
            raise DomainError("t must be positive")
        if self.h > self.t / 100:
            raise DomainError("h must be at most t/100")
        _law(self.V), _law(self.W)

    @property
    def c(self):
        return math.sqrt(2 * self.d)

    def resolved_x_max(self, lam=None):
        if self.x_max is not None:
            return float(self.x_max)
        lam = self.lam if lam is None else lam
        return (math.log(1.0 / min(lam, 0.5)) + 12.0) / self.c


@dataclass
class IxSample:
    x: float
    value: float
    method: str


# --------------------------------------------------------------------------
# left side
# --------------------------------------------------------------------------

def exp_functional_bm(t, h, d, rng=0, zero_noise=False):
    """Trapezoidal ``∫_0^t e^{√(2d) B_s} ds`` along one Brownian path."""
    n = max(1, int(round(t / h)))
    c = math.sqrt(2 * d)
    z = np.zeros(n) if zero_noise else generator(rng).standard_normal(n)
    b = np.concatenate([[0.0], np.cumsum(z) * math.sqrt(h)])
    e = np.exp(c * b)
    return float(np.sum(0.5 * h * (e[1:] + e[:-1])))


def exp_functional_batch(ts, h, d, n, rng, chunk=4096, block=512):
    """
    ``(B_t, U_t)`` at each time in ``ts`` for ``n`` Brownian paths.

    Returns two arrays of shape (n, len(ts)).  Paths of chunk ``k`` use
    ``policy.generator(k)``.
    """
    policy = as_policy(rng)
    c = math.sqrt(2 * d)
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    rec = np.rint(ts / h).astype(np.int64)
    total = int(rec.max())
    outB = np.empty((n, ts.size))
    outU = np.empty((n, ts.size))
    for k, a, b in chunked(n, chunk):
        g = policy.generator(k)
        m = b - a
        B, U = np.zeros(m), np.zeros(m)
        rB, rU = np.empty((m, ts.size)), np.empty((m, ts.size))
        done = 0
        while done < total:
            s = min(block, total - done)
            Z = g.standard_normal((m, s))
            _paths.exp_functional_block(B, U, Z, h, c, rec, rB, rU, done)
            done += s
        outB[a:b], outU[a:b] = rB, rU
    return outB, outU


@dataclass
class LhsTable:
    lambdas: np.ndarray
    ts: np.ndarray
    mean: np.ndarray      # (len(lambdas), len(ts))
    stderr: np.ndarray


def lhs_table(d, lambdas, ts, h, n, rng, V=None, W=None):
    """``√t E[exp(-λ(U_t + e^{cB_t}V + W))]`` on a (λ, t) grid from shared paths."""
    policy = as_policy(rng)
    c = math.sqrt(2 * d)
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=float))
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    Bt, Ut = exp_functional_batch(ts, h, d, n, policy.child("bm"))
    gv = policy.child("VW").generator(0)
    v = sample_law(V, gv, n)
    w = sample_law(W, gv, n)
    mean = np.empty((lambdas.size, ts.size))
    err = np.empty_like(mean)
    for i, lam in enumerate(lambdas):
        for j, t in enumerate(ts):
            arg = Ut[:, j] + np.where(v > 0, np.exp(c * Bt[:, j]) * v, 0.0) + w
            vals = np.exp(-lam * arg) * math.sqrt(t)
            mean[i, j] = vals.mean()
            err[i, j] = vals.std(ddof=1) / math.sqrt(n)
    return LhsTable(lambdas, ts, mean, err)


def lhs_estimate(cfg: ToyConfig, n, rng=0):
    """Monte Carlo left side; returns ``(mean, stderr)``."""
    if n < 1000:
        raise DomainError("lhs_estimate needs n >= 1000")
    tab = lhs_table(cfg.d, [cfg.lam], [cfg.t], cfg.h, n, rng, cfg.V, cfg.W)
    return float(tab.mean[0, 0]), float(tab.stderr[0, 0])


# --------------------------------------------------------------------------
# right side
# --------------------------------------------------------------------------

def forward_level(c, ptol):
    """Level above which the forward integral is dropped once the path has left for good.

    The neglected part has mean at most ``2 e^{-cy}(y/c + 1/c²)``, about
    ``ptol·e^{-3}·(log(1/ptol) + 4)/c²`` at ``y = (log(1/ptol) + 3)/c``.
    """
    return (math.log(1.0 / ptol) + 3.0) / c


def forward_integral(c, h, n, rng, ptol=1e-4):
    """``∫_0^∞ e^{-cβ_s} ds`` for BES(3) from 0, up to its final escape above :func:`forward_level`."""
    return bes3_exit_profile([forward_level(c, ptol)], c, h, n, rng).total


def negative_side(x_grid, c, h, n, rng, method="direct", ptol=1e-4, z=None):
    """
    ``∫_0^{L_x} e^{-cβ}`` for every ``x`` (``method="direct"``) or its
    time-reversed twin ``e^{-cx} ∫_0^{T_x} e^{cB}`` (``"reversal"``).
    """
    if method == "direct":
        return bes3_exit_profile(x_grid, c, h, n, rng, z=z).J
    if method == "reversal":
        return bm_hit_profile(x_grid, c, h, n, rng)
    raise DomainError(f"unknown method {method!r}")


def sample_Ix(x, method="direct", h=1e-2, ptol=1e-4, rng=0, d=1, n=1):
    """``I_x`` samples by the direct (last-exit) or reversal (first-passage) route."""
    if x < 0:
        raise DomainError("x must be nonnegative")
    policy = as_policy(rng)
    c = math.sqrt(2 * d)
    if x == 0:
        neg = np.zeros(n)
    else:
        neg = negative_side([x], c, h, n, policy.child("neg"), method, ptol)[:, 0]
    pos = forward_integral(c, h, n, policy.child("pos"), ptol)
    return [IxSample(float(x), float(v), method) for v in neg + pos]


@dataclass
class RhsSamples:
    """Shared ingredients of the right side for a given x grid."""

    x: np.ndarray
    neg: np.ndarray       # (n, len(x))
    pos: np.ndarray       # (n,)
    w: np.ndarray         # (n,)
    c: float

    def exponent(self):
        """``e^{cx} I_x`` per path and grid point."""
        return np.exp(self.c * self.x)[None, :] * (self.neg + self.pos[:, None])

    def inner(self, lam):
        return np.exp(-lam * (self.exponent() + self.w[:, None]))

    def tail_bound(self, lam):
        """Per-path bound on ``∫_{x_max}^∞ exp(-λ e^{cx} I_x) dx`` using ``I_x ≥ I_{x_max}`` in law."""
        top = self.exponent()[:, -1]
        return special.exp1(lam * top) / self.c


def rhs_samples(cfg: ToyConfig, n, x_grid=None, rng=0, method="direct", lam_min=None):
    policy = as_policy(rng)
    c = cfg.c
    if x_grid is None:
        x_max = cfg.resolved_x_max(lam_min)
        x_grid = np.linspace(0.0, x_max, int(math.ceil(x_max / cfg.dx)) + 1)
    x_grid = np.asarray(x_grid, dtype=float)
    if x_grid[0] != 0.0:
        raise DomainError("x grid must start at 0")
    neg = negative_side(x_grid, c, cfg.h, n, policy.child("neg"), method, cfg.ptol)
    pos = forward_integral(c, cfg.h, n, policy.child("pos"), cfg.ptol)
    w = sample_law(cfg.W, policy.child("W").generator(0), n)
    return RhsSamples(x_grid, neg, pos, w, c)


def rhs_from_samples(rs: RhsSamples, lam, tol=1e-3):
    vals = integrate.trapezoid(rs.inner(lam), rs.x, axis=1)
    bound = float(np.mean(rs.tail_bound(lam) * np.exp(-lam * rs.w)))
    k = math.sqrt(2 / math.pi)
    mean = k * vals.mean()
    if k * bound > tol * max(mean, 1e-300):
        raise TruncationError(f"x_max = {rs.x[-1]:.3g} too small for lambda = {lam}; enlarge x_max",
                              k * bound)
    return mean, k * vals.std(ddof=1) / math.sqrt(vals.size), k * bound


def rhs_estimate(cfg: ToyConfig, n_inner, x_grid=None, rng=0, method="direct"):
    """
    Monte Carlo right side; returns ``(mean, stderr)``.

    The same ``n_inner`` path pairs serve every ``x`` of the grid, the
    ``x``-integral is a trapezoid rule, and the neglected range beyond the
    grid is bounded per path by ``E_1(λ e^{c x_max} I_{x_max})/c``.

    Raises
    ------
    TruncationError
        If that bound exceeds ``1e-3`` of the estimate.
    """
    if cfg.lam == 0:
        raise DomainError("the right side diverges at lambda = 0")
    rs = rhs_samples(cfg, n_inner, x_grid, rng, method)
    mean, err, _ = rhs_from_samples(rs, cfg.lam)
    return mean, err


@dataclass
class LimitRow:
    lam: float
    value: float
    stderr: float
    truncation: float


def limit_result_check(lambda_grid, cfg: ToyConfig, n, rng=0):
    """
    ``(-log λ)^{-1} ∫_0^{x_max} E[exp(-λ(e^{cx} I_x + W))] dx`` for each λ,
    from one shared sample; the target is ``1/√(2d)``.
    """
    lams = np.asarray(lambda_grid, dtype=float)
    if np.any((lams <= 0) | (lams >= 0.5)):
        raise DomainError("lambda must lie in (0, 1/2)")
    rs = rhs_samples(cfg, n, None, rng, lam_min=float(lams.min()))
    rows = []
    for lam in lams:
        vals = integrate.trapezoid(rs.inner(lam), rs.x, axis=1) / (-math.log(lam))
        bound = float(np.mean(rs.tail_bound(lam))) / (-math.log(lam))
        rows.append(LimitRow(float(lam), float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n)), bound))
    return rows


def limit_target(d):
    return 1.0 / math.sqrt(2 * d)


def chi3_laplace(s, d, quad_tol=1e-12):
    """
    ``E[e^{-√(2d) β_s}]`` for BES(3) from 0, i.e.
    ``√(2/π) ∫_0^∞ e^{-a x} x² e^{-x²/2} dx`` with ``a = √(2ds)``.
    """
    if not s > 0:
        raise DomainError("s must be positive")
    a = math.sqrt(2 * d * s)
    f = lambda x: math.exp(-a * x - 0.5 * x * x) * x * x
    # the mass sits at x ~ 2/a for large a
    brk = min(2.0 / a, 1.0)
    v1, _ = integrate.quad(f, 0, brk, epsabs=0, epsrel=quad_tol, limit=200)
    v2, _ = integrate.quad(f, brk, np.inf, epsabs=0, epsrel=quad_tol, limit=200)
    return math.sqrt(2 / math.pi) * (v1 + v2)


def chi3_asymptote(d):
    """``lim_{s→∞} s^{3/2} E[e^{-√(2d) β_s}] = 2√(2/π)/(2d)^{3/2}``."""
    return 2 * math.sqrt(2 / math.pi) / (2 * d) ** 1.5
