"""Linear time-invariant models, forward simulation and disturbance reconstruction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _as_vectors(value, length: int | None, dim: int, name: str) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 1 and dim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise DimensionError(f"{name} must have shape (T, {dim}), got {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise DimensionError(f"{name} must have length {length}, got {arr.shape[0]}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LtiModel:
    """System matrices ``(a, b)`` of ``x[k+1] = a x[k] + b u[k] + eta[k]``."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = _as_matrix(self.a, "a")
        b = _as_matrix(self.b, "b")
        if a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise DimensionError(f"a must be square n x n with n >= 1, got {a.shape}")
        if b.shape[0] != a.shape[0] or b.shape[1] < 1:
            raise DimensionError(f"b must be {a.shape[0]} x m with m >= 1, got {b.shape}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]

    @property
    def theta(self) -> np.ndarray:
        """Flattened parameter vector ``[vec(a), vec(b)]`` (row-major)."""
        return np.concatenate([self.a.ravel(), self.b.ravel()])

    @classmethod
    def from_theta(cls, theta, n: int, m: int) -> "LtiModel":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (n * n + n * m,):
            raise DimensionError(f"theta must have {n * n + n * m} entries, got {theta.shape}")
        return cls(theta[: n * n].reshape(n, n), theta[n * n :].reshape(n, m))

    def __eq__(self, other):
        if not isinstance(other, LtiModel):
            return NotImplemented
        return np.array_equal(self.a, other.a) and np.array_equal(self.b, other.b)

    def __hash__(self):
        return hash((self.a.tobytes(), self.b.tobytes()))

    def __repr__(self):
        return f"LtiModel(a={self.a.tolist()}, b={self.b.tolist()})"


@dataclass(frozen=True, eq=False)
class Trajectory:
    """State sequence of length ``T+1`` driven by an input sequence of length ``T``."""

    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        states = np.array(self.states, dtype=np.float64)
        inputs = np.array(self.inputs, dtype=np.float64)
        if states.ndim != 2 or states.shape[0] < 1:
            raise DimensionError(f"states must have shape (T+1, n), got {states.shape}")
        if inputs.ndim == 1 and inputs.size == 0:
            inputs = inputs.reshape(0, 1)
        if inputs.ndim != 2:
            raise DimensionError(f"inputs must have shape (T, m), got {inputs.shape}")
        if states.shape[0] != inputs.shape[0] + 1:
            raise DimensionError(
                f"states must have one more element than inputs "
                f"({states.shape[0]} states, {inputs.shape[0]} inputs)"
            )
        states.setflags(write=False)
        inputs.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)

    @property
    def length(self) -> int:
        return self.inputs.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def m(self) -> int:
        return self.inputs.shape[1]

    def check_dims(self, n: int, m: int) -> None:
        if self.n != n:
            raise DimensionError(f"trajectory states have dimension {self.n}, expected {n}")
        if self.length and self.m != m:
            raise DimensionError(f"trajectory inputs have dimension {self.m}, expected {m}")

    def truncate(self, horizon: int) -> "Trajectory":
        if horizon > self.length:
            raise DimensionError(f"trajectory of length {self.length} is shorter than {horizon}")
        return Trajectory(self.states[: horizon + 1], self.inputs[:horizon])


@dataclass(frozen=True, eq=False)
class DisturbanceSequence:
    """Stacked additive disturbances ``eta[0..T-1]``, shape ``(T, n)``."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1:
            raise DimensionError(f"disturbances must have shape (T, n), got {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def stacked(self) -> np.ndarray:
        return self.values.ravel()


def simulate(model: LtiModel, x0, inputs, disturbances) -> Trajectory:
    """Roll ``model`` forward from ``x0`` under the given inputs and disturbances."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (model.n,):
        raise DimensionError(f"x0 must have shape ({model.n},), got {x0.shape}")
    eta = disturbances.values if isinstance(disturbances, DisturbanceSequence) else disturbances
    eta = _as_vectors(eta, None, model.n, "disturbances")
    horizon = eta.shape[0]
    if horizon < 1:
        raise DimensionError("disturbances must have length T >= 1")
    u = _as_vectors(inputs, horizon, model.m, "inputs")

    states = np.empty((horizon + 1, model.n))
    states[0] = x0
    for k in range(horizon):
        states[k + 1] = model.a @ states[k] + model.b @ u[k] + eta[k]
    return Trajectory(states, u)


def reconstruct_disturbances(model: LtiModel, traj: Trajectory) -> DisturbanceSequence:
    """Recover ``eta[k] = x[k+1] - (a x[k] + b u[k])`` from an observed trajectory."""
    traj.check_dims(model.n, model.m)
    if traj.length < 1:
        raise DimensionError("trajectory must contain at least one transition")
    x = traj.states
    eta = x[1:] - x[:-1] @ model.a.T - traj.inputs @ model.b.T
    return DisturbanceSequence(eta)
