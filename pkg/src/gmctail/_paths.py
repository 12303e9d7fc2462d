"""Compiled inner loops for the path profiles.

Random numbers are never drawn here: the callers pass blocks of normals and
uniforms taken from the counter-based streams, one row per path, so the
compiled code is a deterministic function of its inputs.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def _bmax(a, b, dt, u):
    return 0.5 * (a + b + math.sqrt((a - b) ** 2 - 2.0 * dt * math.log(u)))


@njit(cache=True)
def _bmin(a, b, dt, u):
    return 0.5 * (a + b - math.sqrt((a - b) ** 2 - 2.0 * dt * math.log(u)))


@njit(cache=True)
def bm_hit_block(rows, B, M, C, best, done, Z, U, h, c, K, xg):
    sqh = math.sqrt(h)
    top_level = xg[-1]
    nx = xg.size
    for r in range(rows.size):
        i = rows[r]
        b, mx, acc = B[i], M[i], C[i]
        eb = math.exp(c * b)
        for j in range(Z.shape[1]):
            nb = b + Z[r, j] * sqh
            floor = mx - K
            if nb < floor:
                nb = 2.0 * floor - nb
            peak = _bmax(b, nb, h, U[r, j])
            enb = math.exp(c * nb)
            incr = 0.5 * h * (eb + enb)
            if peak > mx:
                k = np.searchsorted(xg, peak, side="right") - 1
                if k >= 0:
                    mid = acc + 0.5 * incr
                    if mid < best[i, k]:
                        best[i, k] = mid
                mx = peak
            acc += incr
            b, eb = nb, enb
            if mx >= top_level:
                done[i] = True
                break
        B[i], M[i], C[i] = b, mx, acc
    return 0


@njit(cache=True)
def bes3_exit_block(rows, W, beta, side, phase, C, T, bestC, bestT, done, Z, U, h, c, y, z, kappa, xg):
    """BES(3) from 0 with an exact escape decision.

    phase 0: the 3-D Brownian motion is stepped with ``h`` until its norm
    reaches ``z``.  There the path returns to ``y`` with probability ``y/β``;
    otherwise it is finished.  phase 1: a returning path is, by the
    h-transform with ``1/r``, a 1-D Brownian motion killed at ``y``; it is
    stepped with ``max(h, (κ(b - y))²)`` and exact bridge minima.
    """
    last = xg.size - 1
    for r in range(rows.size):
        i = rows[r]
        w0, w1, w2 = W[i, 0], W[i, 1], W[i, 2]
        bi, acc, t, ph, b1 = beta[i], C[i], T[i], phase[i], side[i]
        for j in range(Z.shape[1]):
            if ph == 0:
                s = math.sqrt(h)
                w0 += Z[r, j, 0] * s
                w1 += Z[r, j, 1] * s
                w2 += Z[r, j, 2] * s
                nb = math.sqrt(w0 * w0 + w1 * w1 + w2 * w2)
                low = _bmin(bi, nb, h, U[r, j, 0])
                incr = 0.5 * h * (math.exp(-c * bi) + math.exp(-c * nb))
                if low <= xg[last]:
                    k = np.searchsorted(xg, low, side="left")
                    v = acc + 0.5 * incr
                    if v > bestC[i, k]:
                        bestC[i, k] = v
                    tt = t + 0.5 * h
                    if tt > bestT[i, k]:
                        bestT[i, k] = tt
                acc += incr
                t += h
                bi = nb
                if bi >= z:
                    if U[r, j, 1] < y / bi:
                        ph = 1
                        b1 = bi
                    else:
                        done[i] = True
                        break
            else:
                dt = max(h, (kappa * (b1 - y)) ** 2)
                nb = b1 + Z[r, j, 0] * math.sqrt(dt)
                low = _bmin(b1, nb, dt, U[r, j, 0])
                if low <= y:
                    # crosses y inside this step; resume the 3-D walk at radius y
                    incr = 0.25 * dt * (math.exp(-c * b1) + math.exp(-c * y))
                    v = acc + incr
                    if v > bestC[i, last]:
                        bestC[i, last] = v
                    if t + 0.5 * dt > bestT[i, last]:
                        bestT[i, last] = t + 0.5 * dt
                    acc += incr
                    t += 0.5 * dt
                    w0, w1, w2 = y, 0.0, 0.0
                    bi = y
                    ph = 0
                else:
                    acc += 0.5 * dt * (math.exp(-c * b1) + math.exp(-c * nb))
                    t += dt
                    b1 = nb
        W[i, 0], W[i, 1], W[i, 2] = w0, w1, w2
        beta[i], C[i], T[i], phase[i], side[i] = bi, acc, t, ph, b1
    return 0


@njit(cache=True)
def exp_functional_block(B, U, Z, h, c, record_at, rec_B, rec_U, offset):
    """Advance fixed-length BM paths by Z.shape[1] steps accumulating the
    trapezoid of exp(c B); snapshot (B, U) at the global step indices in
    ``record_at``."""
    sqh = math.sqrt(h)
    n = B.size
    for i in range(n):
        b, acc = B[i], U[i]
        eb = math.exp(c * b)
        for j in range(Z.shape[1]):
            nb = b + Z[i, j] * sqh
            enb = math.exp(c * nb)
            acc += 0.5 * h * (eb + enb)
            b, eb = nb, enb
            step = offset + j + 1
            for q in range(record_at.size):
                if record_at[q] == step:
                    rec_B[i, q] = b
                    rec_U[i, q] = acc
        B[i], U[i] = b, acc
    return 0
