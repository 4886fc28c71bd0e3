"""Primal active-set method for small dense QPs, started from a feasible point.

Used to finish problems whose optimal multipliers are too large for the
first-order iteration to resolve: a nearby feasible point and working set
are usually a handful of active-set changes from the optimum.  Steps are
computed in the null space of the working rows, so a vertex gives an exact
zero step rather than round-off motion.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import qr

from .problem import QpProblem

_RANK_RTOL = 1e-10


def _one_sided(problem: QpProblem):
    """Rows ``a @ z <= r`` with a map back to the original rows and signs."""
    fin_u = np.flatnonzero(np.isfinite(problem.u))
    fin_l = np.flatnonzero(np.isfinite(problem.l) & (problem.l < problem.u))
    a = np.vstack([problem.c[fin_u], -problem.c[fin_l]])
    r = np.concatenate([problem.u[fin_u], -problem.l[fin_l]])
    origin = np.concatenate([fin_u, fin_l])
    sign = np.concatenate([np.ones(fin_u.size), -np.ones(fin_l.size)])
    equality = np.concatenate([problem.l[fin_u] == problem.u[fin_u], np.zeros(fin_l.size, dtype=bool)])
    return a, r, origin, sign, equality


def _independent(a: np.ndarray, rows: np.ndarray) -> list[int]:
    if rows.size == 0:
        return []
    _, rr, piv = qr(a[rows].T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(rr))
    keep = int(np.sum(diag > _RANK_RTOL * max(1.0, diag[0]))) if diag.size else 0
    return sorted(int(rows[i]) for i in piv[:keep])


def _null_space(aw: np.ndarray, n: int) -> np.ndarray:
    if aw.shape[0] == 0:
        return np.eye(n)
    _, sv, vt = np.linalg.svd(aw)
    rank = int(np.sum(sv > _RANK_RTOL * max(1.0, sv[0])))
    return vt[rank:].T


def primal_active_set(problem: QpProblem, z0, active_rows=(), max_iter: int = 1000, feas_tol: float = 1e-9):
    """Refine a feasible ``z0`` to a KKT point of ``problem``.

    Parameters
    ----------
    problem : QpProblem
    z0 : array_like
        Primal point satisfying the constraints to ``feas_tol`` (relative).
    active_rows : sequence of int
        Original row indices to seed the working set with; rows not tight at
        ``z0`` and rows dependent on earlier ones are skipped.
    max_iter : int
        Cap on working-set changes.

    Returns
    -------
    (z, y, converged, iterations)
        ``y`` follows the solver convention ``Pz + q + C'y = 0``.
    """
    p, q = problem.p, problem.q
    a, r, origin, sign, equality = _one_sided(problem)
    n = q.shape[0]
    z = np.array(z0, dtype=np.float64)
    scale = max(1.0, float(np.max(np.abs(r[np.isfinite(r)]), initial=0.0)))
    tol = feas_tol * scale

    slack = r - a @ z
    if np.any(slack < -10 * tol):
        raise ValueError("starting point is infeasible")
    seed = (np.isin(origin, np.asarray(active_rows, dtype=int)) & (slack <= 10 * tol) & (sign > 0)) | equality
    working = _independent(a, np.flatnonzero(seed))

    for it in range(max_iter):
        g = p @ z + q
        aw = a[working]
        basis = _null_space(aw, n)
        step = np.zeros(n)
        unbounded = False
        if basis.shape[1]:
            gz = basis.T @ g
            evals, evecs = np.linalg.eigh(basis.T @ p @ basis)
            flat = evals <= _RANK_RTOL * max(1.0, float(np.max(np.abs(evals))))
            g_flat = evecs[:, flat].T @ gz
            if np.max(np.abs(g_flat), initial=0.0) > 1e-12 * max(1.0, float(np.max(np.abs(g)))):
                # linear descent along a direction of zero curvature
                step = -basis @ (evecs[:, flat] @ g_flat)
                unbounded = True
            else:
                curved = ~flat
                coef = (evecs[:, curved].T @ gz) / evals[curved]
                step = -basis @ (evecs[:, curved] @ coef)

        step_norm = float(np.max(np.abs(step), initial=0.0))
        if not unbounded and step_norm <= 1e-12 * max(1.0, float(np.max(np.abs(z), initial=0.0))):
            lam = np.linalg.lstsq(aw.T, -g, rcond=None)[0] if working else np.zeros(0)
            droppable = [(lam[i], i) for i in range(len(working)) if not equality[working[i]]]
            worst = min(droppable, default=(0.0, -1))
            if worst[0] >= -1e-12 * max(1.0, float(np.max(np.abs(lam), initial=0.0))):
                return z, _expand(problem, origin, sign, working, lam), True, it
            working.pop(worst[1])
            continue

        ap = a @ step
        slack = np.maximum(r - a @ z, 0.0)
        blocking = ap > 1e-14 * step_norm
        blocking[working] = False
        ratios = np.full(a.shape[0], np.inf)
        ratios[blocking] = slack[blocking] / ap[blocking]
        j = int(np.argmin(ratios)) if ratios.size else -1
        alpha = float(ratios[j]) if j >= 0 else np.inf
        if unbounded and not np.isfinite(alpha):
            return z, np.zeros(problem.n_cons), False, it  # unbounded below
        if unbounded or alpha < 1.0:
            z = z + alpha * step
            working = sorted(working + [j])
        else:
            z = z + step
    return z, np.zeros(problem.n_cons), False, max_iter


def _expand(problem, origin, sign, working, lam):
    y = np.zeros(problem.n_cons)
    for i, w in enumerate(working):
        y[origin[w]] += sign[w] * lam[i]
    return y
