"""Euclidean projections used by the VI machinery.

Y_q splits into two independent blocks: the power set
{0 <= p <= p_max, sum(p) <= P} and the (tau_hat, gamma_hat) set cut out by
the threshold bounds, the miss bounds and the tau_hat box.  Both have exact
finite-step projections, implemented here vectorized over players.  A generic
Dykstra projection over an explicit half-space list is kept as an independent
route for cross-checking.
"""

from __future__ import annotations

import numpy as np


class InfeasibleSetError(ValueError):
    """The set to project on is empty."""


class ProjectionNotConverged(RuntimeError):
    pass


def project_capped_simplex(v, upper, budget):
    """Project each row of ``v`` onto {0 <= p <= upper, sum(p) <= budget}.

    The solution is clip(v - nu, 0, upper) with nu >= 0 the smallest shift
    meeting the budget; the sum is piecewise linear in nu, so nu is found
    exactly between consecutive breakpoints.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), v.shape)
    budget = np.broadcast_to(np.asarray(budget, dtype=float), v.shape[:1])
    out = np.clip(v, 0.0, upper)
    over = out.sum(axis=1) > budget
    if not np.any(over):
        return out
    for i in np.flatnonzero(over):
        vi, ui, bi = v[i], upper[i], budget[i]
        bps = np.unique(np.concatenate((vi - ui, vi)))
        bps = bps[bps > 0.0]
        sums = np.clip(vi[None, :] - bps[:, None], 0.0, ui[None, :]).sum(axis=1)
        # sums is nonincreasing in the breakpoint; bracket the budget.
        j = np.searchsorted(-sums, -bi, side="left")
        lo = 0.0 if j == 0 else bps[j - 1]
        hi = bps[min(j, len(bps) - 1)]
        s_lo = np.clip(vi - lo, 0.0, ui).sum()
        s_hi = np.clip(vi - hi, 0.0, ui).sum()
        if s_lo == s_hi:
            nu = lo
        else:
            nu = lo + (s_lo - bi) * (hi - lo) / (s_lo - s_hi)
        out[i] = np.clip(vi - nu, 0.0, ui)
    return out


def project_sensing_block(t0, g0, t_low, t_high, g_low, u_offset, u_slope):
    """Project (t0, g0) onto {t_low <= t <= t_high, g_low <= g <= u_offset + u_slope t}.

    Rows are players, columns carriers.  ``u_slope`` must be positive.  For a
    fixed t the optimal g is clip(g0, g_low, u(t)), leaving the convex 1-D
    problem min (t - t0)^2 + sum_k [g0_k - u_k(t)]_+^2 whose piecewise-linear
    derivative is zeroed exactly.  The admissible t range also requires
    u(t) >= g_low on every carrier.
    """
    t0 = np.asarray(t0, dtype=float)
    g0 = np.atleast_2d(np.asarray(g0, dtype=float))
    a = np.asarray(u_offset, dtype=float)
    c = np.asarray(u_slope, dtype=float)
    lift = g0 >= g_low
    t_need = np.max((g_low - a) / c, axis=1)
    lo = np.maximum(t_low, t_need)
    if np.any(lo > t_high):
        raise InfeasibleSetError("sensing block is empty: tau_hat_max below the feasibility bound")
    # Breakpoints where carrier k stops pulling t upward.
    bp = np.where(lift, (g0 - a) / c, -np.inf)
    order = np.argsort(-bp, axis=1)
    bp_s = np.take_along_axis(bp, order, axis=1)
    c_s = np.take_along_axis(c * np.ones_like(g0), order, axis=1)
    num_s = np.take_along_axis(np.where(lift, c * (g0 - a), 0.0), order, axis=1)
    Q, N = g0.shape
    num = t0[:, None] + np.concatenate((np.zeros((Q, 1)), np.cumsum(num_s, axis=1)), axis=1)
    den = 1.0 + np.concatenate((np.zeros((Q, 1)), np.cumsum(c_s**2, axis=1)), axis=1)
    cand = num / den  # j carriers active, j = 0..N
    upper_ok = np.concatenate((np.full((Q, 1), np.inf), bp_s), axis=1)
    lower_ok = np.concatenate((bp_s, np.full((Q, 1), -np.inf)), axis=1)
    slack = np.where(np.isfinite(upper_ok), 1e-12 * (1.0 + np.abs(upper_ok)), 0.0)
    valid = (cand <= upper_ok + slack) & (cand >= lower_ok)
    j = np.argmax(valid, axis=1)
    t = cand[np.arange(Q), j]
    t = np.clip(t, lo, t_high)
    g = np.clip(g0, g_low, a + c * t[:, None])
    return t, g


def dykstra(x0, A, b, tol=1e-10, max_cycles=100_000):
    """Project ``x0`` onto {x : A x <= b} by Dykstra's cyclic projections.

    Stops when one full cycle changes neither the iterate nor the correction
    increments by more than ``tol`` and the iterate satisfies every half-space
    to within ``tol``.  The iterate alone can sit still for a cycle while the
    increments are still being redistributed, so both are checked.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.array(x0, dtype=float)
    norms = np.einsum("ij,ij->i", A, A)
    if np.any(norms == 0):
        raise ValueError("dykstra: zero normal")
    incr = np.zeros_like(A)
    for _ in range(max_cycles):
        x_prev = x.copy()
        incr_prev = incr.copy()
        for i in range(A.shape[0]):
            y = x + incr[i]
            viol = A[i] @ y - b[i]
            x = y - (viol / norms[i]) * A[i] if viol > 0 else y
            incr[i] = y - x
        if (np.linalg.norm(x - x_prev) < tol and np.linalg.norm(incr - incr_prev) < tol
                and np.all(A @ x - b <= tol)):
            return x
    raise ProjectionNotConverged(f"dykstra: no convergence in {max_cycles} cycles")
