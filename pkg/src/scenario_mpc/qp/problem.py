"""Data types for convex QPs ``min 1/2 z'Pz + q'z  s.t.  l <= Cz <= u``."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..errors import DimensionError


class Status(str, Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True, eq=False)
class QpProblem:
    p: np.ndarray
    q: np.ndarray
    c: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=np.float64)
        q = np.array(self.q, dtype=np.float64).ravel()
        c = np.array(self.c, dtype=np.float64)
        nz = q.shape[0]
        if p.shape != (nz, nz):
            raise DimensionError(f"p must be {nz} x {nz}, got {p.shape}")
        if c.ndim == 1 and c.size == 0:
            c = c.reshape(0, nz)
        if c.ndim != 2 or c.shape[1] != nz:
            raise DimensionError(f"c must have {nz} columns, got shape {c.shape}")
        l = np.array(self.l, dtype=np.float64).ravel()
        u = np.array(self.u, dtype=np.float64).ravel()
        if l.shape != (c.shape[0],) or u.shape != (c.shape[0],):
            raise DimensionError(f"l and u must have {c.shape[0]} entries")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q)) and np.all(np.isfinite(c))):
            raise ValueError("p, q and c must be finite")
        if np.any(np.isnan(l)) or np.any(np.isnan(u)):
            raise ValueError("bounds must not be NaN")
        if np.any(l > u):
            raise ValueError("lower bounds must not exceed upper bounds")
        if np.max(np.abs(p - p.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(p), initial=0.0)):
            raise ValueError("p must be symmetric")
        p = 0.5 * (p + p.T)
        if nz and np.linalg.eigvalsh(p)[0] < -1e-8 * max(1.0, np.max(np.abs(p))):
            raise ValueError("p must be positive semidefinite")
        c = np.ascontiguousarray(c)
        for arr in (p, q, c, l, u):
            arr.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "u", u)

    @property
    def n_vars(self) -> int:
        return self.q.shape[0]

    @property
    def n_cons(self) -> int:
        return self.c.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=np.float64)
        return float(0.5 * z @ self.p @ z + self.q @ z)

    def primal_residual(self, z) -> float:
        cz = self.c @ z
        return float(np.max(np.abs(cz - np.clip(cz, self.l, self.u)), initial=0.0))

    def dual_residual(self, z, y) -> float:
        return float(np.max(np.abs(self.p @ z + self.q + self.c.T @ y), initial=0.0))

    def complementarity_residual(self, z, y) -> float:
        """``||Cz - clip(Cz + y, l, u)||``: zero iff ``y`` lies in the normal cone at ``Cz``.

        Covers primal feasibility, dual sign and complementary slackness at once.
        """
        cz = self.c @ z
        return float(np.max(np.abs(cz - np.clip(cz + y, self.l, self.u)), initial=0.0))

    def is_kkt_point(self, z, y, abs_tol: float, rel_tol: float) -> bool:
        """KKT test with the same absolute/relative tolerance rule as the solver."""
        cz = self.c @ z
        pz = self.p @ z
        cty = self.c.T @ y
        inf = lambda v: float(np.max(np.abs(v), initial=0.0))  # noqa: E731
        eps_p = abs_tol + rel_tol * inf(cz)
        eps_d = abs_tol + rel_tol * max(inf(pz), inf(cty), inf(self.q))
        return self.complementarity_residual(z, y) <= eps_p and inf(pz + self.q + cty) <= eps_d


@dataclass(frozen=True)
class QpSettings:
    """Solver settings.  ``abs_tol``/``rel_tol`` follow the usual ADMM
    stopping rule, so the absolute residuals of a non-polished iterate may
    exceed ``abs_tol`` by up to ``rel_tol`` times the problem scale."""

    abs_tol: float = 1e-6
    rel_tol: float = 1e-6
    max_iter: int = 50000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iter: int = 10
    adaptive_rho: bool = True
    check_interval: int = 25
    prim_inf_tol: float = 1e-6
    polish: bool = True
    polish_delta: float = 1e-7
    polish_refine_iter: int = 5

    def __post_init__(self):
        if self.abs_tol < 0 or self.rel_tol < 0 or self.abs_tol + self.rel_tol == 0:
            raise ValueError("tolerances must be non-negative and not both zero")
        if self.max_iter < 1 or self.check_interval < 1:
            raise ValueError("max_iter and check_interval must be positive")
        if not 0.0 < self.alpha < 2.0:
            raise ValueError("alpha must lie in (0, 2)")
        if self.rho <= 0 or self.sigma <= 0:
            raise ValueError("rho and sigma must be positive")


@dataclass(frozen=True, eq=False)
class QpSolution:
    z: np.ndarray
    y: np.ndarray
    status: Status
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float
    polished: bool = False
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL
