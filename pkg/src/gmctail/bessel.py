"""
Brownian motion and three-dimensional Bessel processes.

Single-path samplers return :class:`Path` objects and mirror the textbook
constructions.  The ``*_profile`` functions are vectorised over many paths
and are what the heavier checks use; they draw path ``j`` of chunk ``k`` from
the stream ``policy.generator(k)``, so results depend on the chunk size but
not on how chunks are distributed.

Level crossings between grid points are detected with the Brownian-bridge
extremum, whose law given the two endpoints is explicit::

    P(max_{[0, Δ]} ≥ m | a, b) = exp(-2 (m - a)(m - b) / Δ),   m ≥ a ∨ b.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _paths
from .errors import ContractError, DomainError, TruncationError
from .rng import RngPolicy, as_policy, chunked

CHUNK = 2048


@dataclass(eq=False)
class Path:
    """Discretised trajectory.

    ``values[i]`` is the position at ``times[i]``; when ``times`` is not
    given the grid is ``i * h``.
    """

    h: float
    values: np.ndarray
    kind: str = "bm"
    start: float = 0.0
    times: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.h > 0:
            raise DomainError("step must be positive")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.size < 1:
            raise DomainError("a path has at least one point")
        if self.kind == "bes3" and np.any(self.values < 0):
            raise ContractError("BES(3) path with negative values")
        if self.times is not None:
            self.times = np.asarray(self.times, dtype=float)
            if self.times.shape != self.values.shape:
                raise DomainError("times and values differ in length")

    @property
    def t(self):
        if self.times is not None:
            return self.times
        return np.arange(self.values.size) * self.h

    @property
    def duration(self):
        return float(self.t[-1])

    def integral(self, func):
        """Trapezoidal ``∫ func(path)``."""
        vals = func(self.values)
        return float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(self.t)))


@dataclass
class HittingRecord:
    x: float
    first_hit: int | None = None
    last_hit: int | None = None
    ptol: float | None = None
    first_time: float | None = None
    last_time: float | None = None

    def __post_init__(self):
        if self.first_hit is not None and self.last_hit is not None and self.first_hit > self.last_hit:
            raise ContractError("first hit after last hit")


def generator(rng, replica=0):
    """A numpy Generator from a Generator, an int seed or an RngPolicy."""
    if isinstance(rng, np.random.Generator):
        return rng
    return as_policy(rng).generator(replica)


def bridge_max(a, b, dt, u):
    """Maximum of a Brownian bridge from ``a`` to ``b`` over time ``dt``, by inversion of ``u``."""
    return 0.5 * (a + b + np.sqrt((a - b) ** 2 - 2.0 * dt * np.log(u)))


def bridge_min(a, b, dt, u):
    return 0.5 * (a + b - np.sqrt((a - b) ** 2 - 2.0 * dt * np.log(u)))


def bridge_survival(level, a, b, dt):
    """P(bridge from a to b stays strictly below ``level``); zero if an endpoint is above."""
    gap = np.maximum(level - a, 0.0) * np.maximum(level - b, 0.0)
    return -np.expm1(-2.0 * gap / dt)


# --------------------------------------------------------------------------
# single paths
# --------------------------------------------------------------------------

def _nsteps(T, h):
    if not (T > 0 and h > 0):
        raise DomainError("T and h must be positive")
    return max(1, int(round(T / h)))


def sample_bm(T, h, start=0.0, rng=0):
    """Brownian path on ``[0, T]`` with i.i.d. ``N(0, h)`` increments."""
    n = _nsteps(T, h)
    g = generator(rng)
    incr = g.standard_normal(n) * math.sqrt(h)
    return Path(h, np.concatenate([[start], start + np.cumsum(incr)]), "bm", float(start))


def sample_bes3(start, T, h, rng=0):
    """BES(3) path as the Euclidean norm of ``(start, 0, 0) + W`` with ``W`` a 3-D Brownian motion."""
    if start < 0:
        raise DomainError("BES(3) starts at a nonnegative point")
    n = _nsteps(T, h)
    g = generator(rng)
    w = np.cumsum(g.standard_normal((n, 3)) * math.sqrt(h), axis=0)
    w[:, 0] += start
    return Path(h, np.concatenate([[start], np.linalg.norm(w, axis=1)]), "bes3", float(start))


def run_to_first_hit(x, h, rng=0, max_T=1e4, bridge=True, block=4096):
    """
    Brownian path from 0 stopped at its first passage above ``x``.

    The crossing step is located by the bridge maximum (``bridge=True``) or by
    the grid values alone; the crossing time inside the step is the linear
    interpolation point when the grid jumps over ``x`` and the step midpoint
    when only the bridge crosses.  The returned path ends exactly at ``x``.

    Raises
    ------
    TruncationError
        When ``max_T`` is reached first; carries ``P(T_x > max_T)``.
    """
    if not x > 0:
        raise DomainError("level must be positive")
    g = generator(rng)
    sqh = math.sqrt(h)
    chunks = []
    pos, steps = 0.0, 0
    limit = _nsteps(max_T, h)
    while steps < limit:
        m = min(block, limit - steps)
        seg = pos + np.cumsum(g.standard_normal(m) * sqh)
        prev = np.concatenate([[pos], seg[:-1]])
        hit = seg >= x
        if bridge:
            u = g.random(m)
            hit |= bridge_max(prev, seg, h, u) >= x
        if hit.any():
            i = int(np.argmax(hit))
            a, b = prev[i], seg[i]
            frac = (x - a) / (b - a) if b >= x else 0.5
            chunks.append(seg[:i])
            vals = np.concatenate([[0.0], *chunks, [x]])
            times = np.concatenate([np.arange(steps + i + 1) * h, [(steps + i + frac) * h]])
            tx = float(times[-1])
            p = Path(h, vals, "bm", 0.0, times, {"stopped_at": float(x)})
            return p, HittingRecord(float(x), first_hit=len(vals) - 1, first_time=tx)
        chunks.append(seg)
        pos = float(seg[-1])
        steps += m
    # P(T_x > max_T) = P(|N(0, max_T)| < x)
    prob = 2.0 * stats.norm.cdf(x / math.sqrt(max_T)) - 1.0
    raise TruncationError(f"level {x} not reached before T = {max_T}", prob)


def williams_reverse(p: Path) -> Path:
    """
    Time reversal ``t -> x - B_{T_x - t}`` of a path stopped at level ``x``.

    The result is (in law) a BES(3) path from 0 run up to its last passage at
    ``x``.  Applying the map twice returns the original path.
    """
    x = p.meta.get("stopped_at", p.meta.get("last_passage"))
    if x is None:
        raise ContractError("path is not stopped at a hitting time")
    if not math.isclose(p.values[-1], x, abs_tol=1e-12) and not math.isclose(p.values[0], 0.0, abs_tol=1e-12):
        raise ContractError("path does not terminate at its level")
    t = p.t
    vals = x - p.values[::-1]
    times = t[-1] - t[::-1]
    if "stopped_at" in p.meta:
        return Path(p.h, vals, "bes3" if np.all(vals >= -1e-12) else "bm", float(vals[0]),
                    times, {"last_passage": float(x)})
    return Path(p.h, vals, "bm", float(vals[0]), times, {"stopped_at": float(x)})


def last_hit_bes3(x, h, ptol=1e-4, rng=0, z=None, c=math.sqrt(2), kappa=0.125):
    """
    BES(3) from 0 run until it exceeds ``x / ptol``; the last passage at ``x``
    is then known up to a return probability ``ptol``.

    Steps are ``h`` while the process is below ``z`` (default ``x + 6/c``)
    and ``(κ(β - x))²`` above it, so the escape level is reached in a number
    of steps logarithmic in ``1/ptol``; a return to ``x`` within one step is
    detected through the bridge minimum.
    """
    if not x > 0:
        raise DomainError("level must be positive")
    if not 0 < ptol <= 0.01:
        raise DomainError("ptol must lie in (0, 0.01]")
    g = generator(rng)
    z = x + 6.0 / c if z is None else max(z, x)
    top = x / ptol
    w = np.zeros(3)
    t = 0.0
    ts, vs = [0.0], [0.0]
    last_t, last_i = 0.0, 0
    while vs[-1] <= top:
        beta = vs[-1]
        dt = h if beta < z else max(h, (kappa * (beta - x)) ** 2)
        w = w + g.standard_normal(3) * math.sqrt(dt)
        nb = float(np.linalg.norm(w))
        u = g.random()
        if nb <= x or bridge_min(beta, nb, dt, u) <= x:
            frac = (x - beta) / (nb - beta) if (nb > x >= beta) else 0.5
            last_t, last_i = t + frac * dt, len(vs)
        t += dt
        ts.append(t)
        vs.append(nb)
    path = Path(h, np.array(vs), "bes3", 0.0, np.array(ts), {"escape": top})
    return path, HittingRecord(float(x), first_hit=None, last_hit=last_i, ptol=ptol, last_time=last_t)


def path_decomposition_sample(x, h, T, rng=0, U=None):
    """
    BES(3) from ``x`` built as: Brownian motion from ``x`` until it first
    hits ``xU`` (``U`` uniform), then ``xU`` plus an independent BES(3) from 0.
    """
    if not x > 0:
        raise DomainError("start must be positive")
    g = generator(rng)
    U = g.random() if U is None else float(U)
    n = _nsteps(T, h)
    low = x * U
    vals = np.empty(n + 1)
    vals[0] = x
    sqh = math.sqrt(h)
    i = 0
    pos = x
    switch = 0 if U >= 1.0 else None
    while switch is None and i < n:
        nxt = pos + g.standard_normal() * sqh
        if nxt <= low or bridge_min(pos, nxt, h, g.random()) <= low:
            switch = i + 1
            vals[i + 1] = low
            break
        vals[i + 1] = nxt
        pos = nxt
        i += 1
    if switch is not None:
        k = n - switch
        if k > 0:
            w = np.cumsum(g.standard_normal((k, 3)) * sqh, axis=0)
            vals[switch + 1:] = low + np.linalg.norm(w, axis=1)
    return Path(h, vals, "bes3", float(x), meta={"U": U, "switch": switch})


def radnik_weight(p: Path, x, t_index, bridge=False):
    """
    ``(1/x) 1{max_{s<=t} B_s <= x} (x - B_t)`` for a Brownian path from 0.

    With ``bridge=True`` the indicator is replaced by its conditional
    expectation given the grid values, the product of bridge survival
    probabilities; the expectation is unchanged and the result carries no
    discrete-monitoring bias.
    """
    if not x > 0:
        raise DomainError("level must be positive")
    v = p.values[: t_index + 1]
    if np.any(v > x):
        return 0.0
    w = (x - v[-1]) / x
    if bridge and t_index > 0:
        dt = np.diff(p.t[: t_index + 1])
        w *= float(np.prod(bridge_survival(x, v[:-1], v[1:], dt)))
    return float(w)


# --------------------------------------------------------------------------
# vectorised profiles
# --------------------------------------------------------------------------

def _check_grid(x_grid):
    xg = np.asarray(x_grid, dtype=float)
    if xg.ndim != 1 or xg.size == 0 or np.any(np.diff(xg) <= 0) or xg[0] < 0:
        raise DomainError("x grid must be increasing and nonnegative")
    return xg


def bm_hit_profile(x_grid, c, h, n, rng, drawdown=None, chunk=CHUNK, block=256, max_steps=50_000_000):
    """
    ``A(x) = ∫_0^{T_x} e^{c(B_u - x)} du`` for every ``x`` in ``x_grid``,
    one row per Brownian path.

    Excursions reaching ``drawdown`` below the running maximum are excised
    (the path is reflected there).  Their expected contribution is of order
    ``e^{-c·drawdown}`` and removing them keeps the heavy-tailed ``T_x`` from
    dominating the cost.  Default ``drawdown`` is ``8/c``.
    """
    xg = _check_grid(x_grid)
    policy = as_policy(rng)
    K = 8.0 / c if drawdown is None else float(drawdown)
    out = np.empty((n, xg.size))
    for k, a, b in chunked(n, chunk):
        g = policy.generator(k)
        m = b - a
        best = np.full((m, xg.size), np.inf)
        if xg[0] == 0:
            best[:, 0] = 0.0
        B, M, C = np.zeros(m), np.zeros(m), np.zeros(m)
        done = np.zeros(m, dtype=bool)
        steps = 0
        while not done.all():
            rows = np.flatnonzero(~done)
            Z = g.standard_normal((rows.size, block))
            U = g.random((rows.size, block))
            _paths.bm_hit_block(rows, B, M, C, best, done, Z, U, h, c, K, xg)
            steps += block
            if steps > max_steps:
                raise TruncationError("hit profile exceeded the step budget", float((~done).mean()))
        prof = np.minimum.accumulate(best[:, ::-1], axis=1)[:, ::-1]
        out[a:b] = prof * np.exp(-c * xg)[None, :]
    return out


@dataclass
class ExitProfile:
    """Per-path last-exit integrals of a BES(3) path from 0."""

    x: np.ndarray
    J: np.ndarray          # ∫_0^{L_x} e^{-cβ}, shape (n, len(x))
    L: np.ndarray          # last-exit times, shape (n, len(x))
    total: np.ndarray      # ∫_0^{escape} e^{-cβ}, shape (n,)


def bes3_exit_profile(x_grid, c, h, n, rng, z=None, chunk=CHUNK, block=256,
                      max_steps=50_000_000, kappa=0.125, ptol=None):
    """
    Last-exit functionals ``∫_0^{L_x} e^{-cβ_s} ds`` of BES(3) paths from 0
    for all ``x`` in ``x_grid`` at once, plus the integral up to the final
    escape above ``y = x_grid[-1]``.

    The 3-D walk uses step ``h`` until its norm reaches ``z`` (default
    ``y + 2/c``).  There the path returns to ``y`` with probability ``y/β``,
    decided exactly; a returning leg is a Brownian motion from ``β`` killed
    at ``y`` and is stepped on a logarithmic scale.  No escape-level
    truncation is involved, so ``ptol`` is accepted for interface symmetry
    only.

    The last-exit step for level ``x`` is the last step whose bridge minimum
    is ``<= x``; inside that step the exit is placed at the midpoint.
    """
    xg = _check_grid(x_grid)
    policy = as_policy(rng)
    y = float(xg[-1])
    z = y + 2.0 / c if z is None else max(float(z), y + math.sqrt(h))
    J = np.empty((n, xg.size))
    L = np.empty((n, xg.size))
    total = np.empty(n)
    for k, a, b in chunked(n, chunk):
        g = policy.generator(k)
        m = b - a
        bestC = np.zeros((m, xg.size))
        bestT = np.zeros((m, xg.size))
        W = np.zeros((m, 3))
        beta, side, C, T = np.zeros(m), np.zeros(m), np.zeros(m), np.zeros(m)
        phase = np.zeros(m, dtype=np.int64)
        done = np.zeros(m, dtype=bool)
        steps = 0
        while not done.all():
            rows = np.flatnonzero(~done)
            Z = g.standard_normal((rows.size, block, 3))
            U = g.random((rows.size, block, 2))
            _paths.bes3_exit_block(rows, W, beta, side, phase, C, T, bestC, bestT, done,
                                   Z, U, h, c, y, z, kappa, xg)
            steps += block
            if steps > max_steps:
                raise TruncationError("exit profile exceeded the step budget", float((~done).mean()))
        J[a:b] = np.maximum.accumulate(bestC, axis=1)
        L[a:b] = np.maximum.accumulate(bestT, axis=1)
        if xg[0] == 0:
            J[a:b, 0] = L[a:b, 0] = 0.0
        total[a:b] = C
    return ExitProfile(xg, J, L, total)


def bes3_marginal(start, t, n, rng):
    """Exact BES(3) marginal at time ``t`` from ``start``."""
    g = generator(rng)
    w = g.standard_normal((n, 3)) * math.sqrt(t)
    w[:, 0] += start
    return np.linalg.norm(w, axis=1)


def decomposition_marginals(x, h, T, n, rng, chunk=CHUNK):
    """Vectorised :func:`path_decomposition_sample`, returning ``R_T`` only."""
    policy = as_policy(rng)
    steps = _nsteps(T, h)
    sqh = math.sqrt(h)
    out = np.empty(n)
    for k, a, b in chunked(n, chunk):
        g = policy.generator(k)
        m = b - a
        low = x * g.random(m)
        pos = np.full(m, float(x))
        switch = np.full(m, -1.0)
        for i in range(steps):
            z = g.standard_normal(m)
            u = g.random(m)
            nxt = pos + z * sqh
            live = switch < 0
            hit = live & ((nxt <= low) | (bridge_min(pos, nxt, h, u) <= low))
            switch[hit] = (i + 1) * h
            pos = np.where(live & ~hit, nxt, pos)
        done = switch >= 0
        rem = np.where(done, T - switch, 0.0)
        w = g.standard_normal((m, 3)) * np.sqrt(rem)[:, None]
        out[a:b] = np.where(done, low + np.linalg.norm(w, axis=1), pos)
    return out


def radnik_batch(x, t, h, n, rng, chunk=CHUNK, bridge=True):
    """Weights ``(1/x) 1{max B <= x}(x - B_t)`` and endpoints ``x - B_t`` for ``n`` paths."""
    policy = as_policy(rng)
    steps = _nsteps(t, h)
    sqh = math.sqrt(h)
    weights = np.empty(n)
    ends = np.empty(n)
    for k, a, b in chunked(n, chunk):
        g = policy.generator(k)
        m = b - a
        B = np.zeros(m)
        w = np.ones(m)
        for _ in range(steps):
            nb = B + g.standard_normal(m) * sqh
            if bridge:
                w *= bridge_survival(x, B, nb, h)
            else:
                w *= nb <= x
            B = nb
        weights[a:b] = w * np.maximum(x - B, 0.0) / x
        ends[a:b] = x - B
    return weights, ends


def bm_nested_weights(x, s, t, h, n, rng, chunk=CHUNK):
    """Bridge-corrected weights at times ``s < t`` on the same paths (for the tower check)."""
    policy = as_policy(rng)
    ns, nt = _nsteps(s, h), _nsteps(t, h)
    sqh = math.sqrt(h)
    ws = np.empty(n)
    wt = np.empty(n)
    for k, a, b in chunked(n, chunk):
        g = policy.generator(k)
        m = b - a
        B = np.zeros(m)
        surv = np.ones(m)
        for i in range(nt):
            nb = B + g.standard_normal(m) * sqh
            surv *= bridge_survival(x, B, nb, h)
            B = nb
            if i + 1 == ns:
                ws[a:b] = surv * np.maximum(x - B, 0) / x
        wt[a:b] = surv * np.maximum(x - B, 0) / x
    return ws, wt


def bes3_return_fraction(x, a, h, n, rng, escape=1e-3, kappa=0.125):
    """Fraction of BES(3) paths started at ``a`` that come back below ``x``.

    The exact answer is ``x/a`` (scale function ``1/r``).  Paths are followed
    until they fall below ``x`` or exceed ``a / escape``, with steps
    ``max(h, (κ(β - x))²)`` as in :func:`last_hit_bes3`; escaped paths would
    still return with probability ``escape·x/a``.
    """
    g = generator(rng)
    W = np.zeros((n, 3))
    W[:, 0] = a
    beta = np.full(n, float(a))
    state = np.zeros(n, dtype=int)  # 0 running, 1 returned, 2 escaped
    top = a / escape
    while np.any(state == 0):
        live = np.flatnonzero(state == 0)
        bi = beta[live]
        dt = np.maximum(h, (kappa * (bi - x)) ** 2)
        Wn = W[live] + g.standard_normal((live.size, 3)) * np.sqrt(dt)[:, None]
        nb = np.linalg.norm(Wn, axis=1)
        low = bridge_min(bi, nb, dt, g.random(live.size))
        W[live], beta[live] = Wn, nb
        state[live[low <= x]] = 1
        state[live[(low > x) & (nb > top)]] = 2
    return float(np.mean(state == 1))
