"""Scenario programs over disturbance-affine policies, assembled as QPs.

For scenario ``i`` with model ``(A_i, B_i)`` and disturbances ``eta_i`` the
predicted trajectory under ``u = gamma + lam @ eta`` is affine in the free
policy variables ``w``::

    u_i = E_i w,        x_i = F_i x0 + H_i eta_i + G_i E_i w

where ``E_i = [I, M(eta_i)]`` maps ``w`` to stacked inputs.  The cost is the
scenario average of ``x'Qx + u'Ru`` plus a linear penalty on one shared
slack ``sigma >= 0``, and every constraint row of every scenario becomes
``row(x_i, u_i) <= bound + sigma``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DimensionError, SolverError
from .lti import DisturbanceSequence, LtiModel
from .policy import AffinePolicy, Structure, build_prediction_matrices, count_decision_variables, feedback_mask
from .qp import AdmmSolver, QpProblem, QpSettings, QpSolution, Status
from .qp.active_set import primal_active_set
from .scenarios import Scenario, ScenarioSet

VIOLATION_TOL = 1e-9


def _check_psd(mat: np.ndarray, name: str) -> None:
    if np.max(np.abs(mat - mat.T), initial=0.0) > 1e-10:
        raise ValueError(f"{name} must be symmetric")
    if mat.size and np.linalg.eigvalsh(0.5 * (mat + mat.T))[0] < -1e-10:
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass(frozen=True, eq=False)
class QuadCost:
    """``J = x_plus' q_weight x_plus + u' r_weight u`` over the stacked horizon."""

    q_weight: np.ndarray
    r_weight: np.ndarray

    def __post_init__(self):
        q = np.atleast_2d(np.array(self.q_weight, dtype=np.float64))
        r = np.atleast_2d(np.array(self.r_weight, dtype=np.float64))
        _check_psd(q, "q_weight")
        _check_psd(r, "r_weight")
        q.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "q_weight", q)
        object.__setattr__(self, "r_weight", r)

    @classmethod
    def stagewise(cls, q_stage, r_stage, horizon: int) -> "QuadCost":
        q_stage = np.atleast_2d(np.asarray(q_stage, dtype=np.float64))
        r_stage = np.atleast_2d(np.asarray(r_stage, dtype=np.float64))
        eye = np.eye(horizon)
        return cls(np.kron(eye, q_stage), np.kron(eye, r_stage))

    def stage_blocks(self, n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
        """First diagonal blocks, used as per-step weights in closed loop."""
        return self.q_weight[:n, :n], self.r_weight[:m, :m]

    def evaluate(self, x_plus, u) -> float:
        return float(x_plus @ self.q_weight @ x_plus + u @ self.r_weight @ u)


@dataclass(frozen=True, eq=False)
class LinearConstraintSpec:
    """Rows ``state_sel @ x_plus + input_sel @ u <= bound``; all must hold."""

    state_sel: np.ndarray
    input_sel: np.ndarray
    bound: np.ndarray

    def __post_init__(self):
        sx = np.atleast_2d(np.array(self.state_sel, dtype=np.float64))
        su = np.atleast_2d(np.array(self.input_sel, dtype=np.float64))
        bd = np.atleast_1d(np.array(self.bound, dtype=np.float64))
        if sx.shape[0] < 1:
            raise ValueError("constraint needs at least one row")
        if su.shape[0] != sx.shape[0] or bd.shape != (sx.shape[0],):
            raise DimensionError("state_sel, input_sel and bound must have the same number of rows")
        for arr in (sx, su, bd):
            arr.setflags(write=False)
        object.__setattr__(self, "state_sel", sx)
        object.__setattr__(self, "input_sel", su)
        object.__setattr__(self, "bound", bd)

    @property
    def n_rows(self) -> int:
        return self.bound.shape[0]

    @classmethod
    def state_lower_bounds(cls, lower, n: int, m: int, horizon: int) -> "LinearConstraintSpec":
        """``x_k[i] >= lower[i]`` for ``k = 1..T``; use ``-inf`` to skip a component."""
        lower = np.asarray(lower, dtype=np.float64)
        if lower.shape != (n,):
            raise DimensionError(f"lower must have {n} entries")
        rows_x, bounds = [], []
        for k in range(horizon):
            for i in range(n):
                if np.isfinite(lower[i]):
                    row = np.zeros(n * horizon)
                    row[k * n + i] = -1.0
                    rows_x.append(row)
                    bounds.append(-lower[i])
        return cls(np.array(rows_x), np.zeros((len(rows_x), m * horizon)), np.array(bounds))

    @classmethod
    def stagewise(cls, fx, fu, bound, horizon: int) -> "LinearConstraintSpec":
        """Time-invariant rows ``fx @ x_{k+1} + fu @ u_k <= bound`` for every step ``k``."""
        fx = np.atleast_2d(np.asarray(fx, dtype=np.float64))
        fu = np.atleast_2d(np.asarray(fu, dtype=np.float64))
        bound = np.atleast_1d(np.asarray(bound, dtype=np.float64))
        if fu.shape[0] != fx.shape[0] or bound.shape != (fx.shape[0],):
            raise DimensionError("fx, fu and bound must have the same number of rows")
        eye = np.eye(horizon)
        return cls(np.kron(eye, fx), np.kron(eye, fu), np.tile(bound, horizon))

    def values(self, x_plus: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Row slacks ``row(x, u) - bound``; works on stacked batches ``(K, nT)``."""
        return x_plus @ self.state_sel.T + u @ self.input_sel.T - self.bound

    def violated(self, x_plus: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.any(self.values(x_plus, u) > VIOLATION_TOL, axis=-1)

    def stage(self, n: int, m: int) -> "LinearConstraintSpec":
        """Rows acting on the first step only (``x_1``, ``u_0``), as a one-step spec.

        For time-invariant constraints these are the rows to check on each
        realized closed-loop state.
        """
        sx, su = self.state_sel, self.input_sel
        first = ~np.any(sx[:, n:] != 0, axis=1) & ~np.any(su[:, m:] != 0, axis=1)
        first &= np.any(sx[:, :n] != 0, axis=1) | np.any(su[:, :m] != 0, axis=1)
        if not np.any(first):
            raise ValueError("constraint has no rows acting on the first step")
        return LinearConstraintSpec(sx[first, :n], su[first, :m], self.bound[first])


@dataclass(frozen=True, eq=False)
class SpInstance:
    scenarios: ScenarioSet
    x0: np.ndarray
    cost: QuadCost
    constraint: LinearConstraintSpec
    structure: Structure = Structure.FULL
    slack_weight: float | None = 1e5
    regularization: float = 0.0

    def __post_init__(self):
        sc = ScenarioSet.from_scenarios(self.scenarios)
        x0 = np.array(self.x0, dtype=np.float64).ravel()
        n, m, T = sc.n, sc.m, sc.horizon
        if x0.shape != (n,):
            raise DimensionError(f"x0 must have {n} entries, got {x0.shape}")
        if self.cost.q_weight.shape != (n * T, n * T) or self.cost.r_weight.shape != (m * T, m * T):
            raise DimensionError(f"cost weights must be {(n * T, n * T)} and {(m * T, m * T)}")
        if self.constraint.state_sel.shape[1] != n * T or self.constraint.input_sel.shape[1] != m * T:
            raise DimensionError(f"constraint selectors must have {n * T} and {m * T} columns")
        if self.slack_weight is not None and self.slack_weight < 0:
            raise ValueError("slack_weight must be non-negative")
        if self.regularization < 0:
            raise ValueError("regularization must be non-negative")
        x0.setflags(write=False)
        object.__setattr__(self, "scenarios", sc)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "structure", Structure(self.structure))

    @property
    def has_slack(self) -> bool:
        return self.slack_weight is not None


@dataclass(frozen=True)
class VariableMap:
    """Layout of the QP vector ``z = [gamma, free feedback entries, sigma?]``."""

    n: int
    m: int
    horizon: int
    structure: Structure
    slack: bool

    @property
    def n_policy(self) -> int:
        return count_decision_variables(self.n, self.m, self.horizon, self.structure, slack=False)

    @property
    def size(self) -> int:
        return self.n_policy + int(self.slack)

    def policy(self, z) -> AffinePolicy:
        return AffinePolicy.from_free(np.asarray(z)[: self.n_policy], self.n, self.m, self.horizon, self.structure)

    def sigma(self, z) -> float:
        return float(z[self.n_policy]) if self.slack else 0.0

    def pack(self, policy: AffinePolicy, sigma: float = 0.0) -> np.ndarray:
        w = policy.free_values(self.structure)
        return np.concatenate([w, [sigma]]) if self.slack else w


@dataclass(frozen=True, eq=False)
class AssembledSp:
    problem: QpProblem
    variables: VariableMap
    constant: float

    def objective(self, z) -> float:
        return self.problem.objective(z) + self.constant


def _batched_prediction(a: np.ndarray, b: np.ndarray, horizon: int):
    N, n, _ = a.shape
    m = b.shape[2]
    powers = np.empty((N, horizon + 1, n, n))
    powers[:, 0] = np.eye(n)
    for k in range(horizon):
        powers[:, k + 1] = a @ powers[:, k]
    f = powers[:, 1:].reshape(N, n * horizon, n)
    pb = powers[:, :horizon] @ b[:, None]  # (N, T, n, m): A^k B
    g = np.zeros((N, n * horizon, m * horizon))
    h = np.zeros((N, n * horizon, n * horizon))
    for k in range(horizon):
        for j in range(k + 1):
            g[:, k * n : (k + 1) * n, j * m : (j + 1) * m] = pb[:, k - j]
            h[:, k * n : (k + 1) * n, j * n : (j + 1) * n] = powers[:, k - j]
    return f, g, h


def assemble(instance: SpInstance) -> AssembledSp:
    sc = instance.scenarios
    N, n, m, T = len(sc), sc.n, sc.m, sc.horizon
    vmap = VariableMap(n, m, T, instance.structure, instance.has_slack)
    n_pol, nz = vmap.n_policy, vmap.size
    mask = feedback_mask(n, m, T, instance.structure)
    rows, cols = np.nonzero(mask)

    eta = sc.eta.reshape(N, n * T)
    e = np.zeros((N, m * T, n_pol))
    e[:, :, : m * T] = np.eye(m * T)
    e[:, rows, m * T + np.arange(rows.size)] = eta[:, cols]

    f, g, h = _batched_prediction(sc.a, sc.b, T)
    offset = f @ instance.x0 + np.einsum("nij,nj->ni", h, eta)  # (N, nT)
    phi = g @ e  # (N, nT, n_pol)

    qw, rw = instance.cost.q_weight, instance.cost.r_weight
    q_phi = qw @ phi
    r_e = np.einsum("kl,nlj->nkj", rw, e)
    hess = np.einsum("nki,nkj->ij", phi, q_phi) + np.einsum("nki,nkj->ij", e, r_e)
    lin = np.einsum("nki,nk->i", q_phi, offset)
    const = float(np.einsum("ni,ij,nj->", offset, qw, offset)) / N

    p = np.zeros((nz, nz))
    p[:n_pol, :n_pol] = (2.0 / N) * hess
    p[:n_pol, :n_pol] += instance.regularization * np.eye(n_pol)
    q = np.zeros(nz)
    q[:n_pol] = (2.0 / N) * lin

    con = instance.constraint
    r = con.n_rows
    coef = np.einsum("rk,nkj->nrj", con.state_sel, phi) + np.einsum("rk,nkj->nrj", con.input_sel, e)
    rhs = con.bound[None, :] - offset @ con.state_sel.T  # (N, r)
    c = np.zeros((N * r + int(vmap.slack), nz))
    c[: N * r, :n_pol] = coef.reshape(N * r, n_pol)
    upper = np.empty(c.shape[0])
    upper[: N * r] = rhs.ravel()
    lower = np.full(c.shape[0], -np.inf)
    if vmap.slack:
        q[n_pol] = instance.slack_weight
        c[: N * r, n_pol] = -1.0
        c[N * r, n_pol] = 1.0
        lower[N * r] = 0.0
        upper[N * r] = np.inf
    return AssembledSp(QpProblem(0.5 * (p + p.T), q, c, lower, upper), vmap, const)


@dataclass(frozen=True, eq=False)
class SpSolution:
    policy: AffinePolicy
    sigma: float
    objective: float
    qp: QpSolution = field(repr=False)


def solve_sp(instance: SpInstance, settings: QpSettings | None = None, solver=None, warm_start=None) -> SpSolution:
    """Solve the scenario program; raises :class:`SolverError` unless optimal.

    With a positive slack weight the program is solved through its hard-
    constrained restriction (see :func:`_solve_exact_penalty`); the returned
    point is always checked against the KKT conditions of the full program.
    """
    asm = assemble(instance)
    solver = solver or AdmmSolver()
    settings = settings or QpSettings()
    sol = None
    if asm.variables.slack and instance.slack_weight > 0:
        sol = _solve_exact_penalty(asm, instance.slack_weight, solver, settings)
    if sol is None:
        sol = solver(asm.problem, settings, warm_start)
    if not sol.optimal:
        raise SolverError(
            f"scenario program not solved: status={sol.status.value}, iterations={sol.iterations}, "
            f"primal_residual={sol.primal_residual:.3e}, dual_residual={sol.dual_residual:.3e}",
            solution=sol,
        )
    return SpSolution(asm.variables.policy(sol.z), max(0.0, asm.variables.sigma(sol.z)), asm.objective(sol.z), sol)


_ACTIVE_SET_STEPS = 5000
_HARD_STAGE_ITER = 1000


def _solve_exact_penalty(asm: AssembledSp, weight: float, solver, settings: QpSettings) -> QpSolution | None:
    """Solve ``min f(w) + weight * s  s.t.  Cw <= b + s, s >= 0`` in two stages.

    A large slack weight gives the slack bound (or, once the hard problem is
    infeasible, the constraint rows) multipliers of order ``weight``, which
    stalls first-order iterations on the full program.  So:

    1. rows with no policy dependence fix a floor ``s >= max(-b_j)``;
    2. the hard problem at ``s = floor`` goes to ``solver``; if its
       multipliers sum to at most ``weight`` the remaining multiplier mass is
       assigned to the binding floor row and the point is optimal as is;
    3. otherwise (infeasible, multipliers too large, or no convergence within
       a short iteration budget) the solver's iterate, lifted to a feasible
       ``(w, s)``, seeds a primal active-set method on the full program.

    Returns ``None`` when a stage fails so the caller can fall back to a
    direct solve.
    """
    prob = asm.problem
    k = asm.variables.n_policy
    rows = prob.n_cons - 1
    cw = prob.c[:rows, :k]
    b = prob.u[:rows]
    zero = ~np.any(cw != 0.0, axis=1)
    live = np.flatnonzero(~zero)
    floor = max(0.0, float(np.max(-b[zero], initial=0.0)))
    hard = QpProblem(prob.p[:k, :k], prob.q[:k], cw[live], np.full(live.size, -np.inf), b[live] + floor)

    sol = solver(hard, replace(settings, max_iter=min(settings.max_iter, _HARD_STAGE_ITER)))
    iterations = sol.iterations
    if sol.optimal and sol.y.sum() <= weight:
        method = "hard"
        z = np.concatenate([sol.z, [floor]])
        y = np.zeros(prob.n_cons)
        y[live] = np.maximum(sol.y, 0.0)
        leftover = weight - y.sum()
        if floor <= 0.0:
            y[rows] = -leftover
        else:
            y[np.flatnonzero(zero)[np.argmax(-b[zero])]] += leftover
    else:
        method = "active_set"
        w = sol.z if sol.status is not Status.PRIMAL_INFEASIBLE else np.zeros(k)
        s = max(floor, float(np.max(cw @ w - b, initial=0.0)))
        tight = live[sol.y > 0] if sol.status is not Status.PRIMAL_INFEASIBLE else np.zeros(0, dtype=int)
        z, y, ok, steps = primal_active_set(prob, np.concatenate([w, [s]]), tight, max_iter=_ACTIVE_SET_STEPS)
        iterations += steps
        if not ok:
            return None
    if not prob.is_kkt_point(z, y, settings.abs_tol, settings.rel_tol):
        return None
    return QpSolution(
        z=z,
        y=y,
        status=Status.OPTIMAL,
        iterations=iterations,
        primal_residual=prob.primal_residual(z),
        dual_residual=prob.dual_residual(z, y),
        objective=prob.objective(z),
        polished=True,
        info={**sol.info, "method": method},
    )


def evaluate_violation(policy: AffinePolicy, model: LtiModel, x0, constraint: LinearConstraintSpec,
                       etas: Sequence[DisturbanceSequence] | np.ndarray) -> float:
    """Fraction of disturbance realizations for which some constraint row is violated."""
    if isinstance(etas, np.ndarray):
        arr = np.asarray(etas, dtype=np.float64)
    else:
        arr = np.asarray([e.values if isinstance(e, DisturbanceSequence) else e for e in etas], dtype=np.float64)
    if arr.shape[0] == 0:
        raise ValueError("need at least one disturbance realization")
    n, T = policy.n, policy.horizon
    arr = arr.reshape(arr.shape[0], -1)
    if arr.shape[1] != n * T:
        raise DimensionError(f"realizations must have {n * T} entries, got {arr.shape[1]}")
    pm = build_prediction_matrices(model, T)
    x0 = np.asarray(x0, dtype=np.float64)
    u = policy.gamma + arr @ policy.lam.T
    x = pm.f @ x0 + u @ pm.g.T + arr @ pm.h.T
    return float(np.mean(constraint.violated(x, u)))

