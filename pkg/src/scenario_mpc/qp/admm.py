"""Operator-splitting (ADMM) QP solver with equilibration and solution polishing.

The iteration is the over-relaxed splitting

    x~ = (P + sigma I + C' R C)^{-1} (sigma x - q + C'(R z - y))
    x  = alpha x~ + (1 - alpha) x
    z  = clip(alpha C x~ + (1 - alpha) z + y / rho, l, u)
    y  = y + rho (alpha C x~ + (1 - alpha) z_old - z)

run on a Ruiz-equilibrated copy of the problem.  The linear system is small
(one unknown per decision variable) so it is factored densely, and the step
penalty ``rho`` is re-balanced from the residual ratio.  Once the residuals
meet tolerance the active set is read off the iterate and the reduced KKT
system is solved directly to sharpen the answer.
"""

from __future__ import annotations

import math

import numpy as np

from . import backends
from .problem import QpProblem, QpSettings, QpSolution, Status

_SCALE_MIN, _SCALE_MAX = 1e-4, 1e4
_RHO_MIN, _RHO_MAX = 1e-6, 1e6
_RHO_EQ_FACTOR = 1e3
_RHO_ADAPT_TOL = 5.0
_POLISH_ROUNDS = 10


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v), initial=0.0))


def _limit(norms: np.ndarray) -> np.ndarray:
    out = norms.copy()
    out[out < _SCALE_MIN] = 1.0
    return np.minimum(out, _SCALE_MAX)


class _Scaled:
    """Ruiz-equilibrated problem data: ``P~ = s D P D``, ``C~ = E C D``."""

    def __init__(self, problem: QpProblem, iterations: int):
        p, q, c = problem.p.copy(), problem.q.copy(), problem.c.copy()
        n, m = problem.n_vars, problem.n_cons
        d = np.ones(n)
        e = np.ones(m)
        s = 1.0
        for _ in range(iterations):
            col = np.abs(p).max(axis=0, initial=0.0)
            if m:
                col = np.maximum(col, np.abs(c).max(axis=0))
            dd = 1.0 / np.sqrt(_limit(col))
            ee = 1.0 / np.sqrt(_limit(np.abs(c).max(axis=1, initial=0.0))) if m else e[:0].copy()
            p = dd[:, None] * p * dd[None, :]
            c = ee[:, None] * c * dd[None, :]
            q = dd * q
            d *= dd
            e *= ee
            cost = max(float(np.mean(np.abs(p).max(axis=0, initial=0.0))) if n else 0.0, _inf_norm(q))
            gamma = 1.0 / float(_limit(np.array([cost]))[0])
            p *= gamma
            q *= gamma
            s *= gamma
        self.p = 0.5 * (p + p.T)
        self.q = q
        self.c = np.ascontiguousarray(c)
        self.l = e * problem.l
        self.u = e * problem.u
        self.d = d
        self.e = e
        self.s = s

    def unscale(self, x, y):
        return self.d * x, self.e * y / self.s


class AdmmSolver:
    """Callable QP backend; ``backend`` selects the inner-loop kernel
    (``"compiled"``, ``"python"`` or ``None`` for the import-time default)."""

    def __init__(self, backend: str | None = None):
        self.backend = backends.resolve(backend)
        self._kernel = backends.kernel(self.backend)

    def __call__(self, problem, settings=None, warm_start=None):
        return self.solve(problem, settings, warm_start)

    def solve(self, problem: QpProblem, settings: QpSettings | None = None, warm_start=None) -> QpSolution:
        settings = settings or QpSettings()
        sc = _Scaled(problem, settings.scaling_iter)
        n, m = problem.n_vars, problem.n_cons

        eq = (sc.u - sc.l) < 1e-12 if m else np.zeros(0, dtype=bool)
        loose = np.isinf(sc.l) & np.isinf(sc.u)
        rho_scalar = settings.rho

        def rho_vector(r):
            vec = np.full(m, r)
            vec[eq] = min(r * _RHO_EQ_FACTOR, _RHO_MAX)
            vec[loose] = _RHO_MIN
            return vec

        rho = rho_vector(rho_scalar)
        chol = self._factor(sc, rho, settings.sigma)

        x = np.zeros(n)
        z = np.zeros(m)
        y = np.zeros(m)
        if warm_start is not None:
            wz, wy = warm_start
            wz = np.asarray(wz, dtype=np.float64)
            x = wz / sc.d
            z = np.clip(sc.c @ x, sc.l, sc.u)
            y = sc.s * np.asarray(wy, dtype=np.float64) / sc.e if m else y
        dx = np.zeros(n)
        dy = np.zeros(m)
        lo = np.maximum(sc.l, -1e30)
        hi = np.minimum(sc.u, 1e30)

        status = Status.MAX_ITERATIONS
        iterations = 0
        rho_updates = 0
        polished = False
        zu = yu = None

        def converged(res):
            nonlocal zu, yu, polished
            if settings.polish:
                candidate = self._polish(sc, x, z, y, settings)
                if candidate is not None:
                    pz, py = sc.unscale(*candidate)
                    if problem.is_kkt_point(pz, py, settings.abs_tol, settings.rel_tol):
                        zu, yu, polished = pz, py, True
                        return True
            return res["converged"]

        if warm_start is not None and converged(self._residuals(sc, x, z, y, settings)):
            status = Status.OPTIMAL

        while status is Status.MAX_ITERATIONS and iterations < settings.max_iter:
            steps = min(settings.check_interval, settings.max_iter - iterations)
            self._kernel(sc.c, chol, sc.q, lo, hi, rho, settings.sigma, settings.alpha,
                         x, z, y, steps, dx, dy)
            iterations += steps
            res = self._residuals(sc, x, z, y, settings)
            if converged(res):
                status = Status.OPTIMAL
                break
            if m and self._primal_infeasible(sc, dy, settings.prim_inf_tol):
                status = Status.PRIMAL_INFEASIBLE
                break
            if settings.adaptive_rho and m:
                new_rho = self._balanced_rho(rho_scalar, res)
                if new_rho > rho_scalar * _RHO_ADAPT_TOL or new_rho < rho_scalar / _RHO_ADAPT_TOL:
                    rho_scalar = new_rho
                    rho = rho_vector(rho_scalar)
                    chol = self._factor(sc, rho, settings.sigma)
                    rho_updates += 1

        if status is Status.PRIMAL_INFEASIBLE:
            zu, yu = sc.unscale(x, dy)
            nrm = _inf_norm(yu)
            yu = yu / nrm if nrm > 0 else yu
        elif not polished:
            zu, yu = sc.unscale(x, y)

        return QpSolution(
            z=zu,
            y=yu,
            status=status,
            iterations=iterations,
            primal_residual=problem.primal_residual(zu),
            dual_residual=problem.dual_residual(zu, yu) if status is not Status.PRIMAL_INFEASIBLE else math.nan,
            objective=problem.objective(zu),
            polished=polished,
            info={"backend": self.backend, "rho": rho_scalar, "rho_updates": rho_updates},
        )

    @staticmethod
    def _factor(sc: _Scaled, rho: np.ndarray, sigma: float) -> np.ndarray:
        k = sc.p + sigma * np.eye(sc.p.shape[0]) + (sc.c.T * rho) @ sc.c
        return np.ascontiguousarray(np.linalg.cholesky(0.5 * (k + k.T)))

    @staticmethod
    def _residuals(sc: _Scaled, x, z, y, settings) -> dict:
        cx = sc.c @ x
        px = sc.p @ x
        cty = sc.c.T @ y
        einv = 1.0 / sc.e
        dinv = 1.0 / sc.d
        prim = _inf_norm(einv * (cx - z))
        dual = _inf_norm(dinv * (px + sc.q + cty)) / sc.s
        eps_p = settings.abs_tol + settings.rel_tol * max(_inf_norm(einv * cx), _inf_norm(einv * z))
        eps_d = settings.abs_tol + settings.rel_tol * max(
            _inf_norm(dinv * px), _inf_norm(dinv * cty), _inf_norm(dinv * sc.q)
        ) / sc.s
        # scaled quantities drive the rho balance
        prim_s = _inf_norm(cx - z) / max(_inf_norm(cx), _inf_norm(z), 1e-30)
        dual_s = _inf_norm(px + sc.q + cty) / max(_inf_norm(px), _inf_norm(cty), _inf_norm(sc.q), 1e-30)
        return {
            "prim": prim,
            "dual": dual,
            "converged": prim <= eps_p and dual <= eps_d,
            "prim_s": prim_s,
            "dual_s": dual_s,
        }

    @staticmethod
    def _balanced_rho(rho: float, res: dict) -> float:
        if res["dual_s"] <= 0.0:
            return min(rho * 10.0, _RHO_MAX)
        ratio = math.sqrt(max(res["prim_s"], 1e-30) / res["dual_s"])
        return float(np.clip(rho * ratio, _RHO_MIN, _RHO_MAX))

    @staticmethod
    def _primal_infeasible(sc: _Scaled, dy, tol) -> bool:
        dy = dy.copy()
        dy[np.isinf(sc.u) & (dy > 0)] = 0.0
        dy[np.isinf(sc.l) & (dy < 0)] = 0.0
        norm_dy = _inf_norm(sc.e * dy)
        if norm_dy <= tol:
            return False
        if _inf_norm((sc.c.T @ dy) / sc.d) > tol * norm_dy:
            return False
        pos = dy > 0
        neg = dy < 0
        support = float(sc.u[pos] @ dy[pos] + sc.l[neg] @ dy[neg])
        return support < -tol * norm_dy

    @staticmethod
    def _polish(sc: _Scaled, x, z, y, settings):
        """Solve the equality-constrained problem on the guessed active set.

        At degenerate points the guess may hold redundant rows whose
        multipliers come out with the wrong sign, or miss rows the reduced
        solution then violates; both are corrected over a few rounds.
        """
        # rows sitting on a bound count as active even with a zero multiplier
        lower = (z - sc.l) <= -y
        upper = (sc.u - z) <= y
        eq = np.isclose(sc.l, sc.u, rtol=0.0, atol=1e-12)
        upper |= eq
        lower &= ~upper
        delta = settings.polish_delta
        for _ in range(_POLISH_ROUNDS):
            candidate = AdmmSolver._polish_once(sc, x, y, lower, upper, delta, settings.polish_refine_iter)
            if candidate is None:
                return None
            xp, yp = candidate
            tol = 1e-9 * max(1.0, _inf_norm(yp))
            bad_lower = lower & (yp > tol)
            bad_upper = upper & ~eq & (yp < -tol)
            cx = sc.c @ xp
            feas_tol = 1e-9 * max(1.0, _inf_norm(cx))
            over = ~upper & ~lower & (cx > sc.u + feas_tol)
            under = ~upper & ~lower & (cx < sc.l - feas_tol)
            if not (bad_lower.any() or bad_upper.any() or over.any() or under.any()):
                return xp, yp
            lower = (lower & ~bad_lower) | under
            upper = (upper & ~bad_upper) | over
        return None

    @staticmethod
    def _polish_once(sc: _Scaled, x, y, lower, upper, delta, refine_iter):
        # the regularization is centered at the iterate, so directions the
        # reduced system leaves free (non-unique optima) stay where they are
        active = np.flatnonzero(lower | upper)
        target = np.where(lower, sc.l, sc.u)[active]
        ca = sc.c[active]
        n = x.shape[0]
        schur = sc.p + delta * np.eye(n) + (ca.T @ ca) / delta
        try:
            chol = np.linalg.cholesky(0.5 * (schur + schur.T))
        except np.linalg.LinAlgError:
            return None

        def reg_solve(r1, r2):
            rhs = r1 + ca.T @ r2 / delta
            dxp = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
            return dxp, (ca @ dxp - r2) / delta

        xp, ya = reg_solve(delta * x - sc.q, target - delta * y[active])
        for _ in range(refine_iter):
            r1 = -sc.q - sc.p @ xp - ca.T @ ya
            r2 = target - ca @ xp
            ddx, ddy = reg_solve(r1, r2)
            xp = xp + ddx
            ya = ya + ddy
        yp = np.zeros(sc.c.shape[0])
        yp[active] = ya
        return xp, yp


def solve(problem: QpProblem, settings: QpSettings | None = None, warm_start=None,
          backend: str | None = None) -> QpSolution:
    """Solve ``problem`` with the ADMM solver on the selected kernel."""
    return AdmmSolver(backend).solve(problem, settings, warm_start)
