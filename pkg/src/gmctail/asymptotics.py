"""
Tail and Laplace-functional estimators, power-law fits and deterministic
Tauberian checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special
from statsmodels.stats.proportion import proportion_confint

from .errors import ContractError, DomainError, EmptySetError, QuadratureError
from .gmc import GmcMassSample


def _values(samples):
    if isinstance(samples, np.ndarray):
        vals = samples.astype(float).ravel()
    else:
        samples = list(samples)
        if samples and isinstance(samples[0], GmcMassSample):
            vals = np.array([s.value for s in samples], dtype=float)
        else:
            vals = np.asarray(samples, dtype=float).ravel()
    if vals.size == 0:
        raise EmptySetError("no samples")
    return vals


# --------------------------------------------------------------------------
# survival functions
# --------------------------------------------------------------------------

@dataclass
class TailScan:
    t: np.ndarray
    p_hat: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    counts: np.ndarray
    n: int

    @property
    def t_p(self):
        return self.t * self.p_hat

    def rows(self):
        return [("survival", float(t), float(p), float(lo), float(hi))
                for t, p, lo, hi in zip(self.t, self.p_hat, self.ci_lo, self.ci_hi)]


MIN_SAMPLES = 1000


def estimate_tail(samples, t_grid, alpha=0.05):
    """
    Empirical survival ``#{U > t}/n`` with Wilson score intervals.

    Parameters
    ----------
    samples : array_like or list of GmcMassSample
        At least 1000 values.
    t_grid : array_like
        Increasing thresholds.
    alpha : float
        One minus the confidence level.
    """
    vals = np.sort(_values(samples))
    if vals.size < MIN_SAMPLES:
        raise ContractError(f"tail estimation needs at least {MIN_SAMPLES} samples")
    t = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t) < 0):
        raise DomainError("t grid must be increasing")
    n = vals.size
    counts = n - np.searchsorted(vals, t, side="right")
    lo, hi = proportion_confint(counts, n, alpha=alpha, method="wilson")
    return TailScan(t, counts / n, np.asarray(lo, dtype=float), np.asarray(hi, dtype=float), counts, n)


@dataclass
class CoefficientFit:
    c_hat: float
    stderr: float
    window: tuple
    exponent: float
    slope: float | None = None
    slope_stderr: float | None = None
    flatness: float = float("nan")
    diagnostics: dict = field(default_factory=dict)


def _windows(ok):
    """Maximal runs of True in a boolean array, as (start, stop) pairs."""
    runs, start = [], None
    for i, flag in enumerate(list(ok) + [False]):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i))
            start = None
    return runs


def select_window(scan: TailScan, exponent=1.0, min_count=10, max_flatness=1.5, min_points=5):
    """
    Largest contiguous stretch of the grid where every count is at least
    ``min_count`` and ``max/min`` of ``t^q p̂`` stays below ``max_flatness``.
    Ties go to the stretch at larger ``t``.
    """
    ok = scan.counts >= min_count
    best = None
    prod = scan.t ** exponent * scan.p_hat
    for a, b in _windows(ok):
        for i in range(a, b):
            for j in range(b, i, -1):
                seg = prod[i:j]
                if seg.min() > 0 and seg.max() / seg.min() <= max_flatness:
                    cand = (j - i, i, j)
                    if best is None or cand[0] > best[0] or (cand[0] == best[0] and i > best[1]):
                        best = cand
                    break
    if best is None or best[0] < min_points:
        return None
    return best[1], best[2]


def fit_power_law(scan: TailScan, exponent=1.0, window=None, min_count=10, max_flatness=1.5,
                  tail_fraction=0.01):
    """
    Fit ``P(U > t) ≈ c / t^q``.

    With a fixed ``exponent`` the coefficient is the plateau average of
    ``t^q p̂`` over the selected window.  With ``exponent=None`` a weighted
    least-squares line is fitted to ``log p̂`` against ``log t`` over the grid
    points in the upper tail (``p̂ <= tail_fraction``) with at least
    ``min_count`` exceedances, the weights being the inverse binomial
    variances of ``log p̂``.  Restricting to the upper tail keeps the body of
    the distribution out of the slope.

    Raises
    ------
    EmptySetError
        When fewer than five grid points carry enough exceedances.
    """
    ok = scan.counts >= min_count
    if ok.sum() < 5:
        raise EmptySetError("fewer than five grid points with enough exceedances")
    if exponent is None:
        if window is None:
            runs = _windows(ok & (scan.p_hat <= tail_fraction))
            if not runs or max(b - a for a, b in runs) < 3:
                raise EmptySetError("fewer than three tail points with enough exceedances")
            window = max(runs, key=lambda r: r[1] - r[0])
        i, j = window
        x = np.log(scan.t[i:j])
        y = np.log(scan.p_hat[i:j])
        p = scan.p_hat[i:j]
        w = scan.counts[i:j] / (1 - p + 1e-300)
        A = np.vstack([np.ones_like(x), x]).T
        Wm = np.diag(w)
        cov = np.linalg.inv(A.T @ Wm @ A)
        beta = cov @ A.T @ Wm @ y
        resid = y - A @ beta
        dof = max(len(x) - 2, 1)
        scale = max(float(resid @ Wm @ resid) / dof, 1.0)
        se = np.sqrt(np.diag(cov) * scale)
        return CoefficientFit(float(math.exp(beta[0])), float(math.exp(beta[0]) * se[0]),
                              (float(scan.t[i]), float(scan.t[j - 1])), float(-beta[1]),
                              float(beta[1]), float(se[1]),
                              diagnostics={"points": int(j - i)})
    if window is None:
        window = select_window(scan, exponent, min_count, max_flatness)
        if window is None:
            raise EmptySetError("no window with flat plateau and enough exceedances")
    i, j = window
    prod = scan.t[i:j] ** exponent * scan.p_hat[i:j]
    se_each = scan.t[i:j] ** exponent * np.sqrt(scan.p_hat[i:j] * (1 - scan.p_hat[i:j]) / scan.n)
    return CoefficientFit(float(prod.mean()), float(se_each.mean()),
                          (float(scan.t[i]), float(scan.t[j - 1])), float(exponent),
                          flatness=float(prod.max() / prod.min()),
                          diagnostics={"points": int(j - i), "decades": float(math.log10(scan.t[j - 1] / scan.t[i]))})


# --------------------------------------------------------------------------
# Laplace functionals
# --------------------------------------------------------------------------

@dataclass
class LaplaceScan:
    lam: np.ndarray
    tag: str
    estimate: np.ndarray
    stderr: np.ndarray

    def rows(self):
        return [(f"laplace_{self.tag}", float(l), float(e), float(s), "")
                for l, e, s in zip(self.lam, self.estimate, self.stderr)]


def _mean_se(x):
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


def laplace_sq(samples, lambda_grid):
    """``λ^{-1/2} E[1 - e^{-λU²}]`` for each λ."""
    u = _values(samples)
    lams = np.asarray(lambda_grid, dtype=float)
    if np.any(lams <= 0):
        raise DomainError("lambda must be positive")
    est, err = [], []
    for lam in lams:
        m, s = _mean_se(-np.expm1(-lam * u * u) / math.sqrt(lam))
        est.append(m)
        err.append(s)
    return LaplaceScan(lams, "sq", np.array(est), np.array(err))


def laplace_log(samples, lambda_grid):
    """``E[U e^{-λU}] / (-log λ)`` for each ``0 < λ < 1``."""
    u = _values(samples)
    lams = np.asarray(lambda_grid, dtype=float)
    if np.any((lams <= 0) | (lams >= 1)):
        raise DomainError("lambda must lie in (0, 1)")
    est, err = [], []
    for lam in lams:
        m, s = _mean_se(u * np.exp(-lam * u) / (-math.log(lam)))
        est.append(m)
        err.append(s)
    return LaplaceScan(lams, "log", np.array(est), np.array(err))


def pareto_laplace_sq_limit(C=1.0):
    """``lim λ^{-1/2} E[1 - e^{-λU²}]`` when ``P(U > t) ~ C/t``: ``C √π``."""
    return C * math.sqrt(math.pi)


# --------------------------------------------------------------------------
# the counterexample
# --------------------------------------------------------------------------

@dataclass
class TauberianReport:
    a: float
    lam: np.ndarray
    value: np.ndarray          # E[U e^{-λU}]
    ratio: np.ndarray          # value / (-log λ)
    t: np.ndarray
    t_survival: np.ndarray     # t P(U > t)
    band: float                # max_t |t P(U>t) - 1|
    quad_error: np.ndarray


def _counterexample_value(a, lam, tol=1e-12):
    # E[U e^{-λU}] = ∫_0^∞ e^{-λu}(1 - λu) P(U > u) du; u < 1 gives e^{-λ},
    # u = e^v on [1, ∞) turns the rest into a smooth integral in v.
    f = lambda v: math.exp(-lam * math.exp(v)) * (1 - lam * math.exp(v)) * (1 + a * math.sin(v))
    top = math.log(1.0 / lam) + math.log(60.0)
    pieces = np.unique(np.concatenate([np.arange(0.0, top, 2 * math.pi), [top]]))
    total, err = 0.0, 0.0
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        v, e = integrate.quad(f, lo, hi, epsabs=tol, epsrel=tol, limit=200)
        total += v
        err += e
    if err > 1e-8 * max(1.0, abs(total)):
        raise QuadratureError(f"counterexample quadrature at lambda = {lam}", err)
    return math.exp(-lam) + total, err


def tauberian_counterexample(a, lambda_grid, t_grid=None, quad_tol=1e-12):
    """
    Deterministic evaluation for the law ``P(U > t) = (1 + a sin log t)/t``, ``t >= 1``.

    Returns ``E[U e^{-λU}]``, its ratio to ``-log λ`` and the oscillating
    profile ``t P(U > t) = 1 + a sin log t`` on ``t_grid`` (default: the
    points ``exp(π/2 + kπ)``, where the band is attained, plus a log grid).
    """
    if not abs(a) < 1:
        raise DomainError("|a| must be below 1")
    lams = np.asarray(lambda_grid, dtype=float)
    if np.any((lams <= 0) | (lams >= 1)):
        raise DomainError("lambda must lie in (0, 1)")
    if t_grid is None:
        t_grid = np.sort(np.concatenate([np.exp(math.pi / 2 + math.pi * np.arange(0, 12)),
                                         np.logspace(0, 16, 65)]))
    t = np.asarray(t_grid, dtype=float)
    if np.any(t < 1):
        raise DomainError("the law lives on [1, ∞)")
    vals, errs = zip(*(_counterexample_value(a, lam, quad_tol) for lam in lams))
    vals = np.array(vals)
    tp = 1 + a * np.sin(np.log(t))
    return TauberianReport(a, lams, vals, vals / (-np.log(lams)), t, tp,
                           float(np.max(np.abs(tp - 1))), np.array(errs))


# --------------------------------------------------------------------------
# products, splitting, cross moments
# --------------------------------------------------------------------------

def _sample_spec(spec, g, n):
    kind = spec["type"]
    if kind == "const":
        return np.full(n, float(spec["value"]))
    if kind == "lognormal":
        return np.exp(spec.get("mu", 0.0) + spec.get("sigma", 1.0) * g.standard_normal(n))
    if kind == "uniform":
        return g.uniform(spec.get("lo", 0.0), spec["hi"], n)
    raise DomainError(f"unknown law {spec!r}")


def moment(spec, q):
    """``E[V^q]`` for the supported law descriptors."""
    kind = spec["type"]
    if kind == "const":
        return float(spec["value"]) ** q
    if kind == "lognormal":
        mu, s = spec.get("mu", 0.0), spec.get("sigma", 1.0)
        return math.exp(q * mu + 0.5 * q * q * s * s)
    if kind == "uniform":
        lo, hi = spec.get("lo", 0.0), spec["hi"]
        return (hi ** (q + 1) - lo ** (q + 1)) / ((q + 1) * (hi - lo))
    raise DomainError(f"unknown law {spec!r}")


@dataclass
class ProductTailReport:
    t: np.ndarray
    p_hat: np.ndarray
    ci_hi: np.ndarray
    predicted: np.ndarray      # C E[V^q] / t^q
    ratio: np.ndarray
    EVq: float


def aux_product_tail(U_spec, V_spec, q, t_grid, n, rng):
    """
    Survival of ``UV`` for ``U`` with exact tail ``C/t^q`` (``U_spec =
    {"C": C}``, sampled by inversion) against ``C E[V^q]/t^q``.
    """
    from .bessel import generator

    g = generator(rng)
    C = float(U_spec.get("C", 1.0))
    u = (C / g.random(n)) ** (1.0 / q)
    v = _sample_spec(V_spec, g, n)
    scan = estimate_tail(u * v, t_grid)
    evq = moment(V_spec, q)
    pred = C * evq / scan.t ** q
    return ProductTailReport(scan.t, scan.p_hat, scan.ci_hi, pred, scan.p_hat / pred, evq)


def _paired(*arrays):
    out = []
    reps = None
    for arr in arrays:
        if not isinstance(arr, np.ndarray) and len(arr) and isinstance(arr[0], GmcMassSample):
            r = [s.replica for s in arr]
            if reps is not None and r != reps:
                raise ContractError("mass samples are not paired by replica")
            reps = r
        out.append(_values(arr))
    if len({a.size for a in out}) != 1:
        raise ContractError("paired samples differ in length")
    return out


@dataclass
class SplitReport:
    lam: np.ndarray
    residual: np.ndarray
    residual_se: np.ndarray
    cross: np.ndarray
    cross_se: np.ndarray
    main: np.ndarray


def splitting_check(mu_A, mu_plus, mu_minus, lambda_grid):
    """
    Residual of the splitting identity and its cross term on paired masses.

    ``residual = λ^{-1/2}[E(1-e^{-λμ(A)²}) - E(1-e^{-λμ(A+)²}) - E(1-e^{-λμ(A-)²})]``,
    ``cross = λ^{-1/2} E[1 - e^{-2λ μ(A+) μ(A-)}]``, and ``main`` is the sum
    of the two half-set terms.
    """
    a, p, m = _paired(mu_A, mu_plus, mu_minus)
    lams = np.asarray(lambda_grid, dtype=float)
    res, rse, cr, cse, main = [], [], [], [], []
    for lam in lams:
        k = 1 / math.sqrt(lam)
        fa, fp, fm = (-np.expm1(-lam * x * x) for x in (a, p, m))
        r = k * (fa - fp - fm)
        c = k * -np.expm1(-2 * lam * p * m)
        res.append(r.mean())
        rse.append(r.std(ddof=1) / math.sqrt(r.size))
        cr.append(c.mean())
        cse.append(c.std(ddof=1) / math.sqrt(c.size))
        main.append(k * (fp.mean() + fm.mean()))
    return SplitReport(lams, *(np.array(v) for v in (res, rse, cr, cse, main)))


def cross_moment_estimate(m1, m2, h):
    """``E[μ(B1)^h μ(B2)^h]`` with its standard error."""
    if not 0 <= h < 1:
        raise DomainError("h must lie in [0, 1)")  # h = 0 is the trivial case
    a, b = _paired(m1, m2)
    if h == 0:
        return 1.0, 0.0
    x = (a * b) ** h
    return _mean_se(x)


def fit_summary(fit: CoefficientFit, target):
    """JSON-ready summary of a coefficient fit against a target value."""
    return {"coefficient": fit.c_hat, "stderr": fit.stderr, "exponent": fit.exponent,
            "slope": fit.slope, "window": list(fit.window), "flatness": fit.flatness,
            "target": target, "ratio_to_target": fit.c_hat / target if target else None}
