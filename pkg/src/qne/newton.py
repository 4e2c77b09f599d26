"""Semismooth Newton refinement of a VI over a polyhedron.

Given VI(S, Psi) with S = {z : A z <= b} (some coordinates frozen), a point z
solves the VI iff there are multipliers mu with

    Psi(z) + A^T mu = 0,    0 <= mu  _|_  b - A z >= 0.

The complementarity pairs are written with the Fischer-Burmeister function
phi(a, c) = sqrt(a^2 + c^2) - a - c and the square system is solved by a
Gauss-Newton iteration with a finite-difference Jacobian of Psi and a
backtracking line search on the squared residual.  The method is local; the
solvers call it from iterates that are already close to a solution.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import nnls


def _fb(a, c):
    rho = np.hypot(a, c)
    val = rho - a - c
    safe = np.where(rho > 0, rho, 1.0)
    da = np.where(rho > 0, a / safe, 1.0 / np.sqrt(2.0)) - 1.0
    dc = np.where(rho > 0, c / safe, 1.0 / np.sqrt(2.0)) - 1.0
    return val, da, dc


def jacobian_fd(fun, v, cols, h_rel=1e-7):
    """Central-difference Jacobian of ``fun`` at ``v`` w.r.t. coordinates ``cols``."""
    f0 = fun(v)
    J = np.empty((f0.size, len(cols)))
    for j, i in enumerate(cols):
        h = h_rel * max(1.0, abs(v[i]))
        vp = v.copy()
        vp[i] += h
        vm = v.copy()
        vm[i] -= h
        J[:, j] = (fun(vp) - fun(vm)) / (2.0 * h)
    return J


def estimate_multipliers(psi_f, A_f, slack, active_tol):
    """Nonnegative least-squares multipliers on the (nearly) active rows."""
    mu = np.zeros(A_f.shape[0])
    act = np.flatnonzero(slack <= active_tol)
    if act.size:
        mu[act], _ = nnls(A_f[act].T, -psi_f, maxiter=50 * max(1, act.size))
    return mu


def newton_polish(psi, A, b, v0, free, max_iter=100, target=1e-13, active_tol=None,
                  stall_window=25, stall_ratio=0.5):
    """Refine ``v0`` on the free coordinates; returns (v, merit history).

    ``psi`` maps a full vector to the full Psi vector.  Rows of A with no
    free coefficient are dropped (their slack is constant).
    """
    cols = np.flatnonzero(free)
    v = np.array(v0, dtype=float)
    A_f = A[:, cols]
    keep = np.any(A_f != 0.0, axis=1)
    A_f = A_f[keep]
    b_f = b[keep] - A[keep][:, ~free] @ v[~free]
    n, m = cols.size, A_f.shape[0]

    def system(u, mu):
        w = v.copy()
        w[cols] = u
        slack = b_f - A_f @ u
        phi, da, dc = _fb(mu, slack)
        return w, slack, np.concatenate((psi(w)[cols] + A_f.T @ mu, phi)), da, dc

    u = v[cols].copy()
    w, slack, _, _, _ = system(u, np.zeros(m))
    psi_f = psi(w)[cols]
    if active_tol is None:
        active_tol = 1e-6 * (1.0 + np.abs(b_f))
    mu = estimate_multipliers(psi_f, A_f, slack, active_tol)
    w, slack, F, da, dc = system(u, mu)
    merit = 0.5 * F @ F
    history = [merit]
    for _ in range(max_iter):
        if merit <= 0.5 * target**2:
            break
        Jpsi = jacobian_fd(lambda x: psi(x)[cols], w, cols)
        J = np.block([[Jpsi, A_f.T], [-dc[:, None] * A_f, np.diag(da)]])
        if not np.all(np.isfinite(J)):
            break
        d, *_ = np.linalg.lstsq(J, -F, rcond=None)
        step = 1.0
        accepted = False
        while step > 1e-10:
            u_new = u + step * d[:n]
            mu_new = mu + step * d[n:]
            w_new, slack_new, F_new, da_new, dc_new = system(u_new, mu_new)
            m_new = 0.5 * F_new @ F_new
            if np.isfinite(m_new) and m_new <= (1.0 - 1e-4 * step) * merit:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        u, mu, w, slack, F, da, dc, merit = u_new, mu_new, w_new, slack_new, F_new, da_new, \
            dc_new, m_new
        history.append(merit)
        # Give up on slow, globally-damped progress; the caller resumes its own iteration.
        if len(history) > stall_window and merit > stall_ratio * history[-stall_window]:
            break
    return w, history
