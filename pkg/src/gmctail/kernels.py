"""
Covariance kernels of log-correlated Gaussian fields.

Every kernel has the form ``-log|x - y| + f(x, y)``.  Three families are
supported:

* ``l_exact``   : ``f = L`` (constant),
* ``reference`` : ``f = -S_d(x, y)``, the spherical-average correction, which
  vanishes identically in ``d = 2`` and is skipped in ``d = 1``,
* ``composite`` : a user ``f = f_plus - f_minus`` built from continuous
  covariance kernels.

The correction ``S_d`` only depends on the radius ratio
``c = (|x|/|y|) ∧ (|y|/|x|)`` and is written here in angular form

    S_d(c) = -|S^{d-2}| / (2 |S^{d-1}|) * ∫_0^π sin^{d-2}(θ) log(1 - 2c cos θ + c²) dθ,

i.e. minus the average of ``log|u - c e_1|`` over the unit sphere.  At ``c = 1``
the integrand has an integrable logarithmic singularity at ``θ = 0``.
"""
from __future__ import annotations

import functools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, interpolate, special

from .errors import DomainError, QuadratureError, SingularityError


# --------------------------------------------------------------------------
# domains
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned box ``[lo_1, hi_1] x ... x [lo_d, hi_d]``."""

    lo: tuple
    hi: tuple

    @property
    def d(self):
        return len(self.lo)

    def contains(self, x, tol=1e-12):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(np.all(x >= np.asarray(self.lo) - tol) and np.all(x <= np.asarray(self.hi) + tol))

    def to_dict(self):
        return {"type": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class DomainBall:
    """Closed Euclidean ball."""

    center: tuple
    radius: float

    @property
    def d(self):
        return len(self.center)

    def contains(self, x, tol=1e-12):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(np.linalg.norm(x - np.asarray(self.center)) <= self.radius + tol)

    def to_dict(self):
        return {"type": "ball", "center": list(self.center), "radius": self.radius}


def domain_from_dict(obj):
    if obj is None:
        return None
    if obj["type"] == "box":
        return DomainBox(tuple(obj["lo"]), tuple(obj["hi"]))
    if obj["type"] == "ball":
        return DomainBall(tuple(obj["center"]), float(obj["radius"]))
    raise DomainError(f"unknown domain type {obj['type']!r}")


# --------------------------------------------------------------------------
# quadrature for S_d
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureConfig:
    """How to evaluate the ``S_d`` integral.

    ``method`` is ``"adaptive"`` (adaptive Gauss-Kronrod) or ``"simpson"``
    (composite Simpson with ``panels`` panels per half-interval).
    ``substitute`` switches on the exponential substitution near the
    singular endpoint.
    """

    method: str = "adaptive"
    tol: float = 1e-13
    panels: int = 20000
    substitute: bool = True

    def __post_init__(self):
        if self.method not in ("adaptive", "simpson"):
            raise ValueError(f"unknown quadrature method {self.method!r}")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.panels < 2:
            raise ValueError("panel count must be at least 2")


DEFAULT_QUAD = QuadratureConfig()


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere in ``R^n`` (``|S^{n-1}|``)."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def _sd_prefactor(d):
    return sphere_area(d - 1) / (2.0 * sphere_area(d))


def _log_term(theta, c):
    # log(1 - 2c cos θ + c²) written as log((1-c)² + 4c sin²(θ/2)) to avoid cancellation
    s = np.sin(0.5 * theta)
    return np.log((1.0 - c) ** 2 + 4.0 * c * s * s)


def _simpson(fun, a, b, panels):
    if panels % 2:
        panels += 1
    x = np.linspace(a, b, panels + 1)
    return integrate.simpson(fun(x), x=x)


def eval_Sd(d: int, c: float, quad: QuadratureConfig = DEFAULT_QUAD) -> float:
    """
    Spherical-average correction ``S_d`` at radius ratio ``c``.

    Parameters
    ----------
    d : int
        Dimension, at least 2.
    c : float
        Radius ratio in ``[0, 1]``.
    quad : QuadratureConfig

    Returns
    -------
    float

    Raises
    ------
    DomainError
        If ``d < 2`` or ``c`` lies outside ``[0, 1]``.
    QuadratureError
        If the adaptive rule does not reach ``quad.tol``.
    """
    d = int(d)
    if d < 2:
        raise DomainError("S_d is only defined for d >= 2; d = 1 uses the exact kernel")
    c = float(c)
    if not 0.0 <= c <= 1.0:
        raise DomainError(f"radius ratio c must lie in [0, 1], got {c}")
    if c == 0.0:
        return 0.0
    w = d - 2

    def integrand(theta):
        return np.sin(theta) ** w * _log_term(theta, c)

    if quad.method == "adaptive":
        # the near-singular bump sits at θ ~ (1 - c); give QUADPACK geometric breakpoints around it
        brk = [b for b in (1.0 - c) * 4.0 ** np.arange(-1, 16) if 0.0 < b < math.pi / 2]
        val, err, info = _quad(integrand, 0.0, math.pi, quad.tol, brk)
        if err > max(100 * quad.tol, 1e-10):
            raise QuadratureError(f"S_{d}({c}) did not converge", err)
    else:
        half = 0.5 * math.pi
        if quad.substitute:
            s_max = 45.0  # θ = (π/2) e^{-s}; neglected piece is O(e^{-s_max} s_max)

            def sub(s):
                th = half * np.exp(-s)
                return integrand(th) * th

            left = _simpson(sub, 0.0, s_max, quad.panels)
        else:
            left = _simpson(integrand, 1e-300, half, quad.panels)
        right = _simpson(integrand, half, math.pi, quad.panels)
        val = left + right
    return -_sd_prefactor(d) * val


def _quad(fun, a, b, tol, points):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        out = integrate.quad(fun, a, b, epsabs=tol, epsrel=tol, limit=500,
                             points=points or None, full_output=1)
    return out[0], out[1], out[2]


@functools.lru_cache(maxsize=8)
def sd_interpolant(d: int):
    """Cubic spline of ``c -> S_d(c)`` on ``[0, 1]`` for bulk matrix assembly.

    Nodes are dense near ``c = 1`` where the second derivative is log-singular;
    the interpolation error is below ``1e-9`` (checked in the test suite).
    """
    if d < 2:
        return lambda c: np.zeros_like(np.asarray(c, dtype=float))
    nodes = np.unique(np.concatenate([
        np.linspace(0.0, 0.9, 181),
        1.0 - np.geomspace(0.1, 1e-9, 400),
        [1.0],
    ]))
    vals = np.array([eval_Sd(d, c) for c in nodes])
    return interpolate.CubicSpline(nodes, vals)


def sd_of_ratio(d: int, c):
    """Vectorised ``S_d(c)`` via :func:`sd_interpolant`."""
    c = np.clip(np.asarray(c, dtype=float), 0.0, 1.0)
    if d < 2:
        return np.zeros_like(c)
    return sd_interpolant(d)(c)


def radius_ratio(x, y):
    """``(|x|/|y|) ∧ (|y|/|x|)``, with ratio 0 when exactly one point is the origin."""
    rx, ry = float(np.linalg.norm(x)), float(np.linalg.norm(y))
    hi = max(rx, ry)
    if hi == 0.0:
        raise SingularityError("radius ratio undefined at (0, 0)")
    return min(rx, ry) / hi


# --------------------------------------------------------------------------
# kernel descriptors
# --------------------------------------------------------------------------

def _const_kernel(value):
    def f(x, y):
        return np.full(np.broadcast(np.asarray(x)[..., 0], np.asarray(y)[..., 0]).shape, float(value))
    return f


def _gaussian_kernel(amp, scale):
    def f(x, y):
        diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        return amp * np.exp(-0.5 * np.sum(diff * diff, axis=-1) / scale ** 2)
    return f


_F_LIBRARY = {
    "constant": lambda spec: _const_kernel(spec["value"]),
    "gaussian": lambda spec: _gaussian_kernel(spec["amp"], spec["scale"]),
}


def _named_f(spec):
    if spec is None:
        return None
    try:
        return _F_LIBRARY[spec["type"]](spec)
    except KeyError as exc:
        raise DomainError(f"unknown f specification {spec!r}") from exc


@dataclass(frozen=True, eq=False)
class KernelDescriptor:
    """
    Covariance specification ``-log|x-y| + f(x, y)``.

    Use the constructors :meth:`l_exact`, :meth:`reference` and
    :meth:`composite` rather than the raw initialiser.  Composite ``f`` parts
    are callables ``f(x, y)`` acting on arrays of points with coordinates in
    the last axis; named parts (``{"type": "constant", "value": 1.0}`` or
    ``{"type": "gaussian", "amp": a, "scale": s}``) survive JSON round trips.
    """

    variant: str
    d: int
    L: float = 0.0
    f_plus: Callable | None = None
    f_minus: Callable | None = None
    f_plus_spec: dict | None = None
    f_minus_spec: dict | None = None
    log_part: bool = True
    domain: DomainBox | DomainBall | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in ("l_exact", "reference", "composite"):
            raise DomainError(f"unknown kernel variant {self.variant!r}")
        if int(self.d) < 1:
            raise DomainError("dimension must be a positive integer")
        if self.domain is not None and self.domain.d != self.d:
            raise DomainError("domain dimension does not match kernel dimension")

    # constructors -------------------------------------------------------
    @classmethod
    def l_exact(cls, L=0.0, d=1, domain=None):
        return cls("l_exact", int(d), L=float(L), domain=domain)

    @classmethod
    def reference(cls, d, domain=None):
        return cls("reference", int(d), domain=domain)

    @classmethod
    def composite(cls, d, f_plus=None, f_minus=None, log_part=True, domain=None):
        """Composite kernel; each part is a callable or a named spec dict."""
        kw = {}
        for name, part in (("plus", f_plus), ("minus", f_minus)):
            if isinstance(part, dict):
                kw[f"f_{name}_spec"] = part
                kw[f"f_{name}"] = _named_f(part)
            else:
                kw[f"f_{name}"] = part
        return cls("composite", int(d), log_part=log_part, domain=domain, **kw)

    # identification -----------------------------------------------------
    @property
    def kernel_id(self):
        if self.variant == "l_exact":
            return f"l_exact(L={self.L:g},d={self.d})"
        if self.variant == "reference":
            return f"reference(d={self.d})"
        parts = json.dumps([self.f_plus_spec, self.f_minus_spec], sort_keys=True)
        return f"composite(d={self.d},log={int(self.log_part)},f={parts})"

    # the smooth part ------------------------------------------------------
    def f_pairs(self, x, y):
        """Non-logarithmic part ``f(x, y)`` on broadcast point arrays (..., d)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x[..., 0], y[..., 0]).shape
        if self.variant == "l_exact":
            return np.full(shape, self.L)
        if self.variant == "reference":
            if self.d == 1:
                return np.zeros(shape)
            rx = np.linalg.norm(x, axis=-1)
            ry = np.linalg.norm(y, axis=-1)
            hi = np.maximum(rx, ry)
            if np.any(hi == 0):
                raise SingularityError("reference kernel undefined at (0, 0)")
            return -sd_of_ratio(self.d, np.minimum(rx, ry) / hi)
        out = np.zeros(shape)
        if self.f_plus is not None:
            out = out + self.f_plus(x, y)
        if self.f_minus is not None:
            out = out - self.f_minus(x, y)
        return out

    def f_scalar(self, x, y, quad=DEFAULT_QUAD):
        """``f(x, y)`` for a single pair; the reference case uses direct quadrature."""
        if self.variant == "reference" and self.d >= 2:
            return -eval_Sd(self.d, radius_ratio(x, y), quad)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return float(self.f_pairs(x, y))

    # serialisation --------------------------------------------------------
    def to_dict(self):
        out = {"variant": self.variant, "d": self.d}
        if self.variant == "l_exact":
            out["L"] = self.L
        if self.variant == "composite":
            if (self.f_plus is not None and self.f_plus_spec is None) or (
                    self.f_minus is not None and self.f_minus_spec is None):
                raise TypeError("composite kernel with an anonymous callable is not serialisable")
            out["f_plus"] = self.f_plus_spec
            out["f_minus"] = self.f_minus_spec
            out["log_part"] = self.log_part
        if self.domain is not None:
            out["domain"] = self.domain.to_dict()
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj):
        variant = obj.get("variant")
        d = int(obj.get("d", 1))
        domain = domain_from_dict(obj.get("domain"))
        if variant == "l_exact":
            return cls.l_exact(obj.get("L", 0.0), d, domain)
        if variant == "reference":
            return cls.reference(d, domain)
        if variant == "composite":
            return cls.composite(d, obj.get("f_plus"), obj.get("f_minus"),
                                 obj.get("log_part", True), domain)
        raise DomainError(f"unknown kernel variant {variant!r}")

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _check_in_domain(k, *pts):
    if k.domain is None:
        return
    for p in pts:
        if not k.domain.contains(p):
            raise DomainError(f"point {p} outside kernel domain")


def _point(x, d):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (d,):
        raise DomainError(f"expected a point in R^{d}, got shape {x.shape}")
    return x


def eval_kernel(k: KernelDescriptor, x, y, quad: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Covariance ``-log|x-y| + f(x, y)`` between two distinct points."""
    x, y = _point(x, k.d), _point(y, k.d)
    _check_in_domain(k, x, y)
    r = float(np.linalg.norm(x - y))
    if r == 0.0:
        raise SingularityError("kernel is singular on the diagonal; use build_cov_matrix")
    logpart = -math.log(r) if k.log_part else 0.0
    return logpart + k.f_scalar(x, y, quad)


def eval_ybar_cov(d, L, x, y, quad: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Covariance of spherical averages: ``-log(|x| ∨ |y|) + L + S_d``."""
    x, y = _point(x, d), _point(y, d)
    rx, ry = float(np.linalg.norm(x)), float(np.linalg.norm(y))
    if rx == 0.0 or ry == 0.0:
        raise SingularityError("spherical averages are undefined at the origin")
    sd = eval_Sd(d, min(rx, ry) / max(rx, ry), quad) if d >= 2 else 0.0
    return -math.log(max(rx, ry)) + L + sd


def eval_yhat_cov(d, x, y, quad: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Covariance of the lateral field: ``log((|x| ∨ |y|)/|x-y|) - S_d``. Scale invariant."""
    x, y = _point(x, d), _point(y, d)
    rx, ry = float(np.linalg.norm(x)), float(np.linalg.norm(y))
    r = float(np.linalg.norm(x - y))
    if rx == 0.0 or ry == 0.0 or r == 0.0:
        raise SingularityError("lateral covariance needs distinct nonzero points")
    sd = eval_Sd(d, min(rx, ry) / max(rx, ry), quad) if d >= 2 else 0.0
    return math.log(max(rx, ry) / r) - sd


# --------------------------------------------------------------------------
# covariance matrices
# --------------------------------------------------------------------------

@dataclass(eq=False)
class CovMatrix:
    """
    Regularised covariance on a point set, with its PSD repair.

    ``entries`` holds the raw matrix ``-log(|x_i-x_j| ∨ ε) + f(x_i, x_j)``;
    ``factor`` is ``V diag(sqrt(max(λ, 0)))`` so that ``factor @ z`` with
    standard normal ``z`` has the repaired covariance.
    """

    points: np.ndarray
    epsilon: float
    entries: np.ndarray
    clipped_mass: float
    factor: np.ndarray
    eigenvalues: np.ndarray
    kernel_id: str = ""

    @property
    def n(self):
        return self.entries.shape[0]

    @property
    def trace(self):
        return float(np.trace(self.entries))

    @property
    def psd_warning(self):
        """True when more than 1% of the trace had to be clipped."""
        return self.clipped_mass > 0.01 * self.trace

    @property
    def variance(self):
        return np.diag(self.entries).copy()

    def repaired(self):
        return self.factor @ self.factor.T


def pairwise_distances(points):
    pts = np.asarray(points, dtype=float)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _as_points(points, d):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[1] != d:
        raise DomainError(f"points must have shape (n, {d})")
    return pts


def repair_psd(matrix):
    """Eigenvalue clipping at zero. Returns ``(factor, eigenvalues, clipped_mass)``."""
    lam, vec = np.linalg.eigh(matrix)
    clipped = float(-lam[lam < 0].sum())
    lam_c = np.clip(lam, 0.0, None)
    factor = vec * np.sqrt(lam_c)[None, :]
    return factor, lam, clipped


def _finish(points, epsilon, entries, kernel_id):
    from .errors import FactorizationError

    entries = 0.5 * (entries + entries.T)
    try:
        factor, lam, clipped = repair_psd(entries)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"eigendecomposition failed for {entries.shape} matrix") from exc
    if not np.all(np.isfinite(factor)):
        raise FactorizationError("non-finite factor after PSD repair")
    return CovMatrix(points, float(epsilon), entries, clipped, factor, lam, kernel_id)


def build_cov_matrix(k: KernelDescriptor, points, epsilon: float) -> CovMatrix:
    """
    Regularised covariance ``-log(|x_i - x_j| ∨ ε) + f(x_i, x_j)``.

    The diagonal uses ``f(x_i, x_i)``.  Negative eigenvalues are clipped to
    zero and their total magnitude is reported as ``clipped_mass``; when that
    exceeds 1% of the trace a ``RuntimeWarning`` is emitted and
    ``psd_warning`` is set (the kernel is being used outside its PSD radius).
    """
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    pts = _as_points(points, k.d)
    for p in pts:
        _check_in_domain(k, p)
    dist = pairwise_distances(pts)
    off = dist[~np.eye(len(pts), dtype=bool)]
    if off.size and off.min() == 0.0:
        raise DomainError("duplicate points in covariance request")
    logpart = -np.log(np.maximum(dist, epsilon)) if k.log_part else np.zeros_like(dist)
    entries = logpart + k.f_pairs(pts[:, None, :], pts[None, :, :])
    cov = _finish(pts, epsilon, entries, k.kernel_id)
    if cov.psd_warning:
        warnings.warn(f"{k.kernel_id}: clipped {cov.clipped_mass:.3g} of trace "
                      f"{cov.trace:.3g}; kernel used outside its PSD radius", RuntimeWarning)
    return cov


def yhat_cov_matrix(d, points, epsilon) -> CovMatrix:
    """Regularised lateral covariance ``log((|x| ∨ |y|)/(|x-y| ∨ ε)) - S_d``."""
    pts = _as_points(points, d)
    r = np.linalg.norm(pts, axis=1)
    if np.any(r == 0):
        raise DomainError("lateral field is undefined at the origin")
    dist = pairwise_distances(pts)
    hi = np.maximum(r[:, None], r[None, :])
    lo = np.minimum(r[:, None], r[None, :])
    entries = np.log(hi / np.maximum(dist, epsilon)) - sd_of_ratio(d, lo / hi)
    return _finish(pts, epsilon, entries, f"yhat(d={d})")


def empirical_psd_radius(k: KernelDescriptor, radii, n_points=50, epsilon=1e-3, seed=0, rel_tol=1e-6):
    """
    Largest radius in ``radii`` whose random point cloud (centred ball) needs
    clipping below ``rel_tol * trace``.  An empirical stand-in for the
    (unknown) PSD radius of the kernel.
    """
    rng = np.random.default_rng(seed)
    best = None
    for rad in sorted(radii):
        v = rng.standard_normal((n_points, k.d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        pts = v * rad * rng.uniform(0, 1, (n_points, 1)) ** (1.0 / k.d)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            cov = build_cov_matrix(KernelDescriptor(**{**k.__dict__, "domain": None}), pts, epsilon)
        if cov.clipped_mass < rel_tol * cov.trace:
            best = rad
    return best


def chi3_closed_form(a):
    """``E[exp(-a χ_3)]`` in closed form (helper for tests and bounds)."""
    a = np.asarray(a, dtype=float)
    return (1 + a * a) * special.erfcx(a / math.sqrt(2)) - a * math.sqrt(2 / math.pi)
