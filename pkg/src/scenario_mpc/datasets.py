"""Trajectory datasets: containers, CSV I/O and synthetic generation.

CSV layout, one row per time step::

    traj_id,k,x_0,...,x_{n-1},u_0,...,u_{m-1}

The input columns are empty on the final row of every trajectory.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DatasetFormatError, DimensionError
from .lti import LtiModel, Trajectory


def format_number(value: float) -> str:
    return "%.12g" % value


@dataclass(frozen=True, eq=False)
class TransitionSet:
    """Stacked transitions ``(x, u, x_next)`` with one row per transition."""

    x: np.ndarray
    u: np.ndarray
    x_next: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.array(self.x, dtype=np.float64))
        u = np.array(self.u, dtype=np.float64)
        if u.ndim == 1:
            u = u.reshape(-1, 1)
        x_next = np.atleast_2d(np.array(self.x_next, dtype=np.float64))
        if not (x.shape[0] == u.shape[0] == x_next.shape[0]):
            raise DimensionError("x, u and x_next must have the same number of rows")
        if x.shape[1] != x_next.shape[1]:
            raise DimensionError("x and x_next must have the same dimension")
        for arr in (x, u, x_next):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "x_next", x_next)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    def subset(self, idx) -> "TransitionSet":
        return TransitionSet(self.x[idx], self.u[idx], self.x_next[idx])

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "TransitionSet":
        return cls(traj.states[:-1], traj.inputs, traj.states[1:])


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    trajectories: tuple
    n: int
    m: int

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        for i, traj in enumerate(trajs):
            if not isinstance(traj, Trajectory):
                raise TypeError(f"trajectory {i} is not a Trajectory")
            try:
                traj.check_dims(self.n, self.m)
            except DimensionError as exc:
                raise DimensionError(f"trajectory {i}: {exc}") from None
        object.__setattr__(self, "trajectories", trajs)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __getitem__(self, i) -> Trajectory:
        return self.trajectories[i]

    def __iter__(self):
        return iter(self.trajectories)

    def transitions(self) -> TransitionSet:
        """All consecutive ``(x[k], u[k], x[k+1])`` pairs, trajectory by trajectory."""
        usable = [t for t in self.trajectories if t.length > 0]
        if not usable:
            return TransitionSet(np.zeros((0, self.n)), np.zeros((0, self.m)), np.zeros((0, self.n)))
        return TransitionSet(
            np.vstack([t.states[:-1] for t in usable]),
            np.vstack([t.inputs for t in usable]),
            np.vstack([t.states[1:] for t in usable]),
        )

    @classmethod
    def from_arrays(cls, states: np.ndarray, inputs: np.ndarray) -> "TrajectoryDataset":
        """From ``states (K, T+1, n)`` and ``inputs (K, T, m)``."""
        states = np.asarray(states, dtype=np.float64)
        inputs = np.asarray(inputs, dtype=np.float64)
        if states.ndim != 3 or inputs.ndim != 3 or states.shape[0] != inputs.shape[0]:
            raise DimensionError("expected states (K, T+1, n) and inputs (K, T, m)")
        trajs = tuple(Trajectory(s, u) for s, u in zip(states, inputs))
        return cls(trajs, states.shape[2], inputs.shape[2])

    # CSV ------------------------------------------------------------------

    def header(self) -> list[str]:
        return ["traj_id", "k"] + [f"x_{i}" for i in range(self.n)] + [f"u_{j}" for j in range(self.m)]

    def to_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_string(), newline="")

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header())
        for tid, traj in enumerate(self.trajectories):
            for k in range(traj.length + 1):
                xs = [format_number(v) for v in traj.states[k]]
                us = [format_number(v) for v in traj.inputs[k]] if k < traj.length else [""] * self.m
                writer.writerow([tid, k, *xs, *us])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path) -> "TrajectoryDataset":
        return cls.from_csv_string(Path(path).read_text())

    @classmethod
    def from_csv_string(cls, text: str) -> "TrajectoryDataset":
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("empty dataset file", row=1) from None
        header = [h.strip() for h in header]
        if header[:2] != ["traj_id", "k"]:
            raise DatasetFormatError("header must start with traj_id,k", row=1)
        n = 0
        while 2 + n < len(header) and header[2 + n] == f"x_{n}":
            n += 1
        m = len(header) - 2 - n
        if n < 1 or m < 1 or header[2 + n :] != [f"u_{j}" for j in range(m)]:
            raise DatasetFormatError("header must list x_0..x_{n-1} then u_0..u_{m-1}", row=1)

        order: list[str] = []
        rows: dict[str, list] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetFormatError(f"expected {len(header)} fields, got {len(row)}", row=lineno)
            tid = row[0].strip()
            try:
                k = int(row[1])
            except ValueError:
                raise DatasetFormatError(f"invalid step index {row[1]!r}", row=lineno, column="k") from None
            x = [_parse(row[2 + i], lineno, header[2 + i]) for i in range(n)]
            raw_u = [c.strip() for c in row[2 + n :]]
            u = None if all(c == "" for c in raw_u) else [
                _parse(row[2 + n + j], lineno, header[2 + n + j]) for j in range(m)
            ]
            if tid not in rows:
                order.append(tid)
                rows[tid] = []
            rows[tid].append((lineno, k, x, u))

        trajs = []
        for tid in order:
            steps = rows[tid]
            for expected, (lineno, k, _, _) in enumerate(steps):
                if k != expected:
                    raise DatasetFormatError(
                        f"trajectory {tid!r}: expected step {expected}, got {k}", row=lineno, column="k"
                    )
            for lineno, k, _, u in steps[:-1]:
                if u is None:
                    raise DatasetFormatError("only the final row of a trajectory may omit inputs", row=lineno,
                                             column=header[2 + n])
            last_line, _, _, last_u = steps[-1]
            if last_u is not None:
                raise DatasetFormatError("final row of a trajectory must leave inputs empty", row=last_line,
                                         column=header[2 + n])
            states = np.array([s[2] for s in steps])
            inputs = np.array([s[3] for s in steps[:-1]]).reshape(len(steps) - 1, m)
            trajs.append(Trajectory(states, inputs))
        return cls(tuple(trajs), n, m)


def _parse(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DatasetFormatError(f"invalid number {text!r}", row=row, column=column) from None
    if not np.isfinite(value):
        raise DatasetFormatError(f"non-finite value {text!r}", row=row, column=column)
    return value


@dataclass(frozen=True, eq=False)
class Plant:
    """True system plus the uniform excitation used to synthesize data.

    Samples are drawn half-open, ``[-bound, bound)``.
    """

    model: LtiModel
    noise_bound: float = 0.02
    input_bound: float = 0.5
    init_bound: float = 0.5

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def m(self) -> int:
        return self.model.m

    def disturbances(self, rng: np.random.Generator, shape: Sequence[int]) -> np.ndarray:
        """Array of shape ``(*shape, n)`` of i.i.d. disturbances."""
        return rng.uniform(-self.noise_bound, self.noise_bound, size=(*shape, self.n))

    def rollouts(self, rng: np.random.Generator, count: int, length: int, noise: bool = True):
        """``count`` rollouts of ``length`` steps from random initial states under random inputs."""
        x0 = rng.uniform(-self.init_bound, self.init_bound, size=(count, self.n))
        u = rng.uniform(-self.input_bound, self.input_bound, size=(count, length, self.m))
        eta = self.disturbances(rng, (count, length))
        if not noise:
            eta = np.zeros_like(eta)
        states = np.empty((count, length + 1, self.n))
        states[:, 0] = x0
        a, b = self.model.a, self.model.b
        for k in range(length):
            states[:, k + 1] = states[:, k] @ a.T + u[:, k] @ b.T + eta[:, k]
        return states, u

    def identification_data(self, rng: np.random.Generator, length: int = 50, noise: bool = True) -> TrajectoryDataset:
        states, u = self.rollouts(rng, 1, length, noise=noise)
        return TrajectoryDataset.from_arrays(states, u)

    def historical_data(self, rng: np.random.Generator, count: int, horizon: int) -> TrajectoryDataset:
        states, u = self.rollouts(rng, count, horizon)
        return TrajectoryDataset.from_arrays(states, u)
