"""Scenario construction from data.

Model samples come from an empirical bootstrap over identification
transitions, each resample refitted by least squares.  Each sampled model
is then paired with its own historical trajectory, from which the
disturbance sequence consistent with that model is reconstructed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datasets import TrajectoryDataset, TransitionSet
from .errors import DimensionError, RankDeficientError
from .lti import DisturbanceSequence, LtiModel

RANK_RTOL = 1e-10
BOOTSTRAP_RETRIES = 10


@dataclass(frozen=True, eq=False)
class Scenario:
    model: LtiModel
    eta: DisturbanceSequence

    @property
    def horizon(self) -> int:
        return self.eta.horizon


class ScenarioSet(Sequence):
    """Scenarios stored as stacked arrays ``a (N,n,n)``, ``b (N,n,m)``, ``eta (N,T,n)``."""

    def __init__(self, a, b, eta):
        a = np.array(a, dtype=np.float64)
        b = np.array(b, dtype=np.float64)
        eta = np.array(eta, dtype=np.float64)
        if a.ndim != 3 or b.ndim != 3 or eta.ndim != 3:
            raise DimensionError("expected a (N,n,n), b (N,n,m) and eta (N,T,n)")
        N, n = a.shape[0], a.shape[1]
        if a.shape != (N, n, n) or b.shape[:2] != (N, n) or eta.shape[0] != N or eta.shape[2] != n:
            raise DimensionError(
                f"inconsistent scenario arrays: a {a.shape}, b {b.shape}, eta {eta.shape}"
            )
        if eta.shape[1] < 1:
            raise DimensionError("scenario horizon must be >= 1")
        for arr in (a, b, eta):
            arr.setflags(write=False)
        self.a, self.b, self.eta = a, b, eta

    @classmethod
    def from_scenarios(cls, scenarios: Sequence[Scenario]) -> "ScenarioSet":
        if isinstance(scenarios, ScenarioSet):
            return scenarios
        scenarios = list(scenarios)
        if not scenarios:
            raise DimensionError("at least one scenario is required")
        horizons = {s.horizon for s in scenarios}
        if len(horizons) != 1:
            raise DimensionError(f"scenarios have differing horizons {sorted(horizons)}")
        return cls(
            np.stack([s.model.a for s in scenarios]),
            np.stack([s.model.b for s in scenarios]),
            np.stack([s.eta.values for s in scenarios]),
        )

    @classmethod
    def known(cls, model: LtiModel, etas) -> "ScenarioSet":
        """Scenarios that all share one model (the known-dynamics program)."""
        etas = np.asarray([e.values if isinstance(e, DisturbanceSequence) else e for e in etas], dtype=np.float64)
        N = etas.shape[0]
        return cls(np.repeat(model.a[None], N, axis=0), np.repeat(model.b[None], N, axis=0), etas)

    def __len__(self) -> int:
        return self.a.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return ScenarioSet(self.a[i], self.b[i], self.eta[i])
        return Scenario(LtiModel(self.a[i], self.b[i]), DisturbanceSequence(self.eta[i]))

    @property
    def n(self) -> int:
        return self.a.shape[1]

    @property
    def m(self) -> int:
        return self.b.shape[2]

    @property
    def horizon(self) -> int:
        return self.eta.shape[1]

    def concat(self, other: "ScenarioSet") -> "ScenarioSet":
        return ScenarioSet(
            np.concatenate([self.a, other.a]),
            np.concatenate([self.b, other.b]),
            np.concatenate([self.eta, other.eta]),
        )


def _fit_batch(x: np.ndarray, y: np.ndarray, n: int):
    """Least-squares ``theta`` for stacked regressors ``x (B, L, n+m)``, targets ``y (B, L, n)``.

    Returns ``(theta (B, n+m, n), rank (B,))``; rows with deficient rank carry NaN.
    """
    u_, s, vt = np.linalg.svd(x, full_matrices=False)
    tol = RANK_RTOL * s[:, :1]
    rank = np.sum(s >= tol, axis=1)
    ok = rank == x.shape[2]
    s_inv = np.where(s >= tol, 1.0 / np.where(s > 0, s, 1.0), 0.0)
    uty = np.einsum("bkj,bkl->bjl", u_, y)
    theta = np.einsum("bji,bj,bjl->bil", vt, s_inv, uty)
    theta[~ok] = np.nan
    return theta, rank


def _regressors(data: TransitionSet) -> np.ndarray:
    return np.hstack([data.x, data.u])


def _model_from_theta(theta: np.ndarray, n: int) -> LtiModel:
    ab = theta.T
    return LtiModel(ab[:, :n], ab[:, n:])


def least_squares_fit(data: TransitionSet, n: int | None = None, m: int | None = None) -> LtiModel:
    """``(A, B)`` minimizing ``sum ||x_next - A x - B u||^2`` over the transitions."""
    n = data.n if n is None else n
    m = data.m if m is None else m
    if (data.n, data.m) != (n, m):
        raise DimensionError(f"transitions have dimensions ({data.n}, {data.m}), expected ({n}, {m})")
    p = n + m
    if len(data) < p:
        raise RankDeficientError(
            f"need at least {p} transitions to identify (A, B), got {len(data)}", rank=len(data), required=p
        )
    theta, rank = _fit_batch(_regressors(data)[None], data.x_next[None], n)
    if rank[0] < p:
        raise RankDeficientError(
            f"regressor matrix [x, u] has numerical rank {int(rank[0])} < {p}", rank=int(rank[0]), required=p
        )
    return _model_from_theta(theta[0], n)


def bootstrap_models(data: TransitionSet, count: int, rng_seed=None) -> list[LtiModel]:
    """Least-squares fits on ``count`` with-replacement resamples of ``data``."""
    a, b = bootstrap_arrays(data, count, rng_seed)
    return [LtiModel(a[i], b[i]) for i in range(count)]


def bootstrap_arrays(data: TransitionSet, count: int, rng_seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Array form of :func:`bootstrap_models`: ``a (count,n,n)``, ``b (count,n,m)``.

    All resample indices are drawn up front; a rank-deficient resample is
    redrawn (in resample order) at most ``BOOTSTRAP_RETRIES`` times.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    n, m = data.n, data.m
    if count == 0:
        return np.zeros((0, n, n)), np.zeros((0, n, m))
    L = len(data)
    if L == 0:
        raise ValueError("cannot bootstrap an empty transition set")
    rng = np.random.default_rng(rng_seed)
    reg = _regressors(data)
    idx = rng.integers(0, L, size=(count, L))
    theta, rank = _fit_batch(reg[idx], data.x_next[idx], n)
    p = n + m
    for i in np.flatnonzero(rank < p):
        for _ in range(BOOTSTRAP_RETRIES):
            redraw = rng.integers(0, L, size=L)
            th, rk = _fit_batch(reg[redraw][None], data.x_next[redraw][None], n)
            if rk[0] == p:
                theta[i] = th[0]
                rank[i] = p
                break
        else:
            raise RankDeficientError(
                f"bootstrap resample {i} stayed rank deficient after {BOOTSTRAP_RETRIES} redraws "
                f"(rank {int(rank[i])} < {p})",
                rank=int(rank[i]),
                required=p,
            )
    ab = np.transpose(theta, (0, 2, 1))
    return np.ascontiguousarray(ab[:, :, :n]), np.ascontiguousarray(ab[:, :, n:])


def pair_disturbances(a: np.ndarray, b: np.ndarray, states: np.ndarray, inputs: np.ndarray, horizon: int) -> ScenarioSet:
    """Pair model ``i`` with trajectory ``i`` and reconstruct its first ``horizon`` disturbances.

    ``states (K, L+1, n)`` and ``inputs (K, L, m)`` with ``K >= N`` and ``L >= horizon``;
    trajectories beyond the first ``N`` are left unused.
    """
    N = a.shape[0]
    if states.shape[0] < N:
        raise DimensionError(f"need {N} historical trajectories, got {states.shape[0]}")
    if inputs.shape[1] < horizon:
        raise DimensionError(f"historical trajectories have length {inputs.shape[1]} < horizon {horizon}")
    x = states[:N, : horizon + 1]
    u = inputs[:N, :horizon]
    eta = x[:, 1:] - np.einsum("nij,nkj->nki", a, x[:, :-1]) - np.einsum("nij,nkj->nki", b, u)
    return ScenarioSet(a, b, eta)


def build_scenarios(models: Sequence[LtiModel], hist: TrajectoryDataset, horizon: int) -> ScenarioSet:
    """One scenario per model, each reconstructed from a distinct historical trajectory."""
    models = list(models)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not models:
        raise DimensionError("at least one model is required")
    if len(hist) < len(models):
        raise DimensionError(f"need {len(models)} historical trajectories, got {len(hist)}")
    for i, traj in enumerate(hist.trajectories[: len(models)]):
        if traj.length < horizon:
            raise DimensionError(f"historical trajectory {i} has length {traj.length} < horizon {horizon}")
    n, m = hist.n, hist.m
    for i, model in enumerate(models):
        if (model.n, model.m) != (n, m):
            raise DimensionError(f"model {i} has dimensions ({model.n}, {model.m}), data has ({n}, {m})")
    trajs = hist.trajectories[: len(models)]
    states = np.stack([t.states[: horizon + 1] for t in trajs])
    inputs = np.stack([t.inputs[:horizon] for t in trajs])
    a = np.stack([mdl.a for mdl in models])
    b = np.stack([mdl.b for mdl in models])
    return pair_disturbances(a, b, states, inputs, horizon)
