"""Receding-horizon closed loop and Monte Carlo studies for the controller variants.

Three ways of generating the scenarios of each program are compared:

* ``ud_smpc``: bootstrap models from the identification data, each paired
  with its own historical trajectory for disturbance reconstruction;
* ``ls_smpc``: a single least-squares model for every scenario, with
  disturbances reconstructed from the same historical trajectories;
* ``gt_smpc``: the true model, so the reconstructed disturbances are the
  true ones.

Every random quantity is drawn from its own stream, keyed by the
experiment seed, the realization, the step and the purpose of the draw.
Variants evaluated under the same key therefore see identical data and
identical true disturbances.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .bounds import BoundSpec, min_scenarios
from .datasets import Plant, TrajectoryDataset, TransitionSet
from .errors import DimensionError, SolverError
from .lti import LtiModel, Trajectory
from .policy import Structure
from .qp import AdmmSolver, QpSettings
from .scenarios import ScenarioSet, bootstrap_arrays, least_squares_fit, pair_disturbances
from .sp import LinearConstraintSpec, QuadCost, SpInstance, evaluate_violation, solve_sp

# stream purposes
IDENTIFICATION, HISTORY, BOOTSTRAP, PLANT, EVALUATION = range(5)


def stream(seed, *key: int) -> np.random.Generator:
    """Generator for the stream ``(seed..., key...)``; ``seed`` is an int or a tuple of ints."""
    words = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    words += list(key)
    if any(int(w) != w or w < 0 for w in words):
        raise ValueError(f"seed words must be non-negative integers, got {words}")
    return np.random.default_rng(np.random.SeedSequence([int(w) for w in words]))


class VariantKind(str, Enum):
    UD_SMPC = "ud_smpc"
    LS_SMPC = "ls_smpc"
    GT_SMPC = "gt_smpc"


@dataclass(frozen=True)
class ControllerVariant:
    """A scenario-generation scheme with its scenario count.

    Give either ``scenario_count`` directly or ``bound_params``, from which
    the count is the smallest sample size meeting the bound.
    """

    kind: VariantKind
    scenario_count: int | None = None
    bound_params: BoundSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", VariantKind(self.kind))
        count = self.scenario_count
        if count is None:
            if self.bound_params is None:
                raise ValueError("give scenario_count or bound_params")
            count = min_scenarios(self.bound_params)
        if int(count) != count or count < 1:
            raise ValueError(f"scenario_count must be a positive integer, got {count}")
        object.__setattr__(self, "scenario_count", int(count))

    @property
    def label(self) -> str:
        return self.kind.value


@dataclass(frozen=True, eq=False)
class ProblemSetup:
    """Everything about the control problem that is fixed across an experiment."""

    plant: Plant
    x0: np.ndarray
    horizon: int
    cost: QuadCost
    constraint: LinearConstraintSpec
    structure: Structure = Structure.FULL
    slack_weight: float | None = 1e5
    id_length: int = 50
    settings: QpSettings | None = None
    backend: str | None = None

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=np.float64).ravel()
        if x0.shape != (self.plant.n,):
            raise DimensionError(f"x0 must have {self.plant.n} entries, got {x0.shape}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.id_length < 1:
            raise ValueError("id_length must be >= 1")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "structure", Structure(self.structure))

    @classmethod
    def example(cls, **overrides) -> "ProblemSetup":
        """Two-state, one-input benchmark: keep ``x_1 >= 0.5`` and ``x_2 >= 0`` from ``x0 = [0.6, 0]``."""
        model = LtiModel([[0.9, 0.15], [0.05, 0.9]], [[0.0], [1.0]])
        horizon = overrides.pop("horizon", 5)
        base = dict(
            plant=Plant(model),
            x0=[0.6, 0.0],
            horizon=horizon,
            cost=QuadCost.stagewise(np.eye(2), 0.1 * np.eye(1), horizon),
            constraint=LinearConstraintSpec.state_lower_bounds([0.5, 0.0], 2, 1, horizon),
        )
        base.update(overrides)
        return cls(**base)

    def instance(self, scenarios: ScenarioSet, x0=None) -> SpInstance:
        return SpInstance(
            scenarios,
            self.x0 if x0 is None else x0,
            self.cost,
            self.constraint,
            structure=self.structure,
            slack_weight=self.slack_weight,
        )

    def solve(self, scenarios: ScenarioSet, x0=None):
        return solve_sp(self.instance(scenarios, x0), self.settings, AdmmSolver(self.backend))


def variant_scenarios(kind: VariantKind, count: int, model: LtiModel, transitions: TransitionSet,
                      hist_states: np.ndarray, hist_inputs: np.ndarray, horizon: int,
                      rng: np.random.Generator, ls_model: LtiModel | None = None) -> ScenarioSet:
    """Scenarios for one program.

    ``model`` is the true plant model (used by ``gt_smpc`` only); the first
    ``count`` historical trajectories are used, one per scenario.
    """
    kind = VariantKind(kind)
    if kind is VariantKind.UD_SMPC:
        a, b = bootstrap_arrays(transitions, count, rng)
    else:
        fixed = model if kind is VariantKind.GT_SMPC else (ls_model or least_squares_fit(transitions))
        a = np.repeat(fixed.a[None], count, axis=0)
        b = np.repeat(fixed.b[None], count, axis=0)
    return pair_disturbances(a, b, hist_states, hist_inputs, horizon)


def _history_arrays(hist: TrajectoryDataset, start: int, count: int, horizon: int):
    trajs = hist.trajectories[start : start + count]
    if len(trajs) < count:
        raise DimensionError(f"historical dataset has {len(hist)} trajectories, need at least {start + count}")
    for i, t in enumerate(trajs):
        if t.length < horizon:
            raise DimensionError(f"historical trajectory {start + i} has length {t.length} < horizon {horizon}")
    states = np.stack([t.states[: horizon + 1] for t in trajs])
    inputs = np.stack([t.inputs[:horizon] for t in trajs])
    return states, inputs


# -- closed loop -----------------------------------------------------------


@dataclass(frozen=True)
class StepStats:
    step: int
    sigma: float
    objective: float
    iterations: int
    method: str


@dataclass(frozen=True, eq=False)
class ClosedLoopResult:
    realized_cost: float
    violations: int
    trajectory: Trajectory
    per_step_solve_stats: tuple = field(default=())

    @property
    def sigma_max(self) -> float:
        return max((s.sigma for s in self.per_step_solve_stats), default=0.0)


@dataclass(frozen=True, eq=False)
class ClosedLoopData:
    """Data for a closed-loop run.

    ``history`` supplies ``N`` fresh trajectories per step (trajectories
    ``[kN, (k+1)N)`` at step ``k``); when ``None`` they are drawn from the
    plant at every step.
    """

    identification: TrajectoryDataset
    history: TrajectoryDataset | None = None


def run_closed_loop(variant: ControllerVariant, setup: ProblemSetup, steps: int, data: ClosedLoopData,
                    seed) -> ClosedLoopResult:
    """Apply the first input of each step's scenario program to the true plant.

    Cost accumulates ``x'Q x + u'R u`` over the realized ``(x_{k+1}, u_k)``
    with the per-step blocks of the horizon weights; violations count the
    steps whose realized state breaks a first-step constraint row.
    """
    if int(steps) != steps or steps < 0:
        raise ValueError(f"steps must be a non-negative integer, got {steps}")
    plant, T, N = setup.plant, setup.horizon, variant.scenario_count
    n, m = plant.n, plant.m
    if data.history is not None:
        _history_arrays(data.history, 0, N * steps, T)  # fail before any solve
    transitions = data.identification.transitions()
    ls_model = least_squares_fit(transitions) if variant.kind is VariantKind.LS_SMPC else None
    q_stage, r_stage = setup.cost.stage_blocks(n, m)
    stage = setup.constraint.stage(n, m)
    a, b = plant.model.a, plant.model.b

    plant_rng = stream(seed, PLANT)
    x = setup.x0.copy()
    states, inputs, stats = [x], [], []
    cost, violations = 0.0, 0
    for k in range(steps):
        if data.history is None:
            hs, hu = plant.rollouts(stream(seed, HISTORY, k), N, T)
        else:
            hs, hu = _history_arrays(data.history, k * N, N, T)
        scenarios = variant_scenarios(variant.kind, N, plant.model, transitions, hs, hu, T,
                                      stream(seed, BOOTSTRAP, k), ls_model)
        try:
            sol = setup.solve(scenarios, x)
        except SolverError as exc:
            raise SolverError(f"closed-loop step {k} ({variant.label}, N={N}): {exc}", solution=exc.solution) from exc
        u = sol.policy.first_input()
        x_next = a @ x + b @ u + plant.disturbances(plant_rng, ())
        cost += float(x_next @ q_stage @ x_next + u @ r_stage @ u)
        violations += int(stage.violated(x_next, u))
        stats.append(StepStats(k, sol.sigma, sol.objective, sol.qp.iterations, sol.qp.info.get("method", "direct")))
        states.append(x_next)
        inputs.append(u)
        x = x_next
    traj = Trajectory(np.array(states), np.array(inputs).reshape(steps, m))
    return ClosedLoopResult(cost, violations, traj, tuple(stats))


# -- Monte Carlo studies ---------------------------------------------------


@dataclass(frozen=True)
class OpenLoopRecord:
    variant: str
    realization: int
    violation_fraction: float
    sigma: float


@dataclass(frozen=True)
class ClosedLoopRecord:
    variant: str
    N: int
    realization: int
    cost: float
    violations: int
    sigma_max: float


def _map(func, args, workers: int):
    if workers <= 1:
        return [func(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, *zip(*args)))


def _identification(setup: ProblemSetup, fixed: TrajectoryDataset | None, seed, r: int) -> TrajectoryDataset:
    if fixed is not None:
        return fixed
    return setup.plant.identification_data(stream(seed, r, IDENTIFICATION), setup.id_length)


def _open_loop_realization(variants, setup: ProblemSetup, eval_rollouts: int, seed, r: int, fixed_id=None):
    plant, T = setup.plant, setup.horizon
    d_id = _identification(setup, fixed_id, seed, r)
    transitions = d_id.transitions()
    hs, hu = plant.rollouts(stream(seed, r, HISTORY), max(v.scenario_count for v in variants), T)
    etas = plant.disturbances(stream(seed, r, EVALUATION), (eval_rollouts, T))
    ls_model = least_squares_fit(transitions) if any(v.kind is VariantKind.LS_SMPC for v in variants) else None
    out = []
    for v in variants:
        scenarios = variant_scenarios(v.kind, v.scenario_count, plant.model, transitions, hs, hu, T,
                                      stream(seed, r, BOOTSTRAP), ls_model)
        try:
            sol = setup.solve(scenarios)
        except SolverError as exc:
            raise SolverError(f"realization {r} ({v.label}): {exc}", solution=exc.solution) from exc
        frac = evaluate_violation(sol.policy, plant.model, setup.x0, setup.constraint, etas)
        out.append(OpenLoopRecord(v.label, r, frac, sol.sigma))
    return out


def open_loop_study(variants: Sequence[ControllerVariant], setup: ProblemSetup, mc_realizations: int,
                    eval_rollouts: int, seed, workers: int = 1,
                    identification: TrajectoryDataset | None = None) -> list[OpenLoopRecord]:
    """Empirical violation probability of each variant's first policy, per realization.

    Each realization draws fresh identification and historical data; the
    solved policies are evaluated on ``eval_rollouts`` fresh disturbance
    sequences of the true plant (shared by all variants).  A given
    ``identification`` dataset replaces the per-realization draw.
    Records are ordered by realization, then by variant.
    """
    variants = list(variants)
    if not variants:
        raise ValueError("need at least one variant")
    if mc_realizations < 1 or eval_rollouts < 1:
        raise ValueError("mc_realizations and eval_rollouts must be positive")
    chunks = _map(_open_loop_realization,
                  [(variants, setup, eval_rollouts, seed, r, identification) for r in range(mc_realizations)],
                  workers)
    return [rec for chunk in chunks for rec in chunk]


def _closed_loop_realization(kinds, n_grid, setup: ProblemSetup, steps: int, seed, r: int, fixed_id=None):
    data = ClosedLoopData(_identification(setup, fixed_id, seed, r))
    out = []
    for n_scen in n_grid:
        for kind in kinds:
            res = run_closed_loop(ControllerVariant(kind, n_scen), setup, steps, data, (seed, r))
            out.append(ClosedLoopRecord(VariantKind(kind).value, n_scen, r, res.realized_cost, res.violations,
                                        res.sigma_max))
    return out


def closed_loop_study(variants: Sequence[VariantKind | str], n_grid: Sequence[int], setup: ProblemSetup,
                      mc_realizations: int, steps: int, seed, workers: int = 1,
                      identification: TrajectoryDataset | None = None) -> list[ClosedLoopRecord]:
    """Closed-loop cost and violation counts for every (variant, N, realization).

    Identification data is redrawn per realization unless ``identification``
    is given; all variants and grid points of one realization share it, as
    well as the true disturbances.
    Records are ordered by realization, then N, then variant.
    """
    kinds = [VariantKind(v) for v in variants]
    n_grid = [int(n) for n in n_grid]
    if not kinds or not n_grid:
        raise ValueError("need at least one variant and one grid point")
    if any(n < 1 for n in n_grid):
        raise ValueError("scenario counts must be positive")
    if mc_realizations < 1 or steps < 1:
        raise ValueError("mc_realizations and steps must be positive")
    chunks = _map(_closed_loop_realization,
                  [(kinds, n_grid, setup, steps, seed, r, identification) for r in range(mc_realizations)],
                  workers)
    return [rec for chunk in chunks for rec in chunk]
