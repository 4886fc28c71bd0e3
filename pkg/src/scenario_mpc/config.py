"""Experiment configuration: defaults, key-value files and validation.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment.  Vectors are comma-separated and matrix rows are separated by
``;``, e.g. ``a = 0.9, 0.15; 0.05, 0.9``.  Unset keys keep their defaults,
which reproduce the two-state benchmark.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .bounds import BoundSpec, explicit_upper_bound, min_scenarios
from .datasets import Plant, TrajectoryDataset
from .lti import LtiModel
from .policy import Structure, count_decision_variables
from .sim import ControllerVariant, ProblemSetup, VariantKind
from .sp import LinearConstraintSpec, QuadCost

U64_MAX = 2**64 - 1


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to a usage error."""


def _matrix(text: str) -> np.ndarray:
    rows = [r for r in text.split(";") if r.strip()]
    if not rows:
        raise ValueError("empty matrix")
    values = [[float(v) for v in r.split(",")] for r in rows]
    if len({len(r) for r in values}) != 1:
        raise ValueError("matrix rows must have equal length")
    return np.array(values, dtype=np.float64)


def _vector(text: str) -> np.ndarray:
    if not text.strip():
        raise ValueError("empty vector")
    return np.array([float(v) for v in text.split(",")], dtype=np.float64)


def _int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"{text!r} is not an integer")
    return int(text) if text.strip().lstrip("+-").isdigit() else int(value)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(_int(v) for v in text.split(","))


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none", "auto") else _int(text)


def _optional_path(text: str) -> str | None:
    return None if text.strip().lower() in ("", "none") else text.strip()


_PARSERS = {
    "a": _matrix,
    "b": _matrix,
    "noise_bound": float,
    "input_bound": float,
    "init_bound": float,
    "x0": _vector,
    "horizon": _int,
    "steps": _int,
    "q_stage": _matrix,
    "r_stage": _matrix,
    "constraint_x": _matrix,
    "constraint_u": _matrix,
    "constraint_b": _vector,
    "structure": str,
    "slack_weight": float,
    "eps1": float,
    "eps2": float,
    "beta": float,
    "n_scenarios": _optional_int,
    "n_grid": _int_list,
    "variants": _str_list,
    "mc_realizations": _optional_int,
    "eval_rollouts": _int,
    "id_length": _int,
    "hist_count": _int,
    "id_data": _optional_path,
    "workers": _int,
    "seed": _int,
    "out": str,
}


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """All experiment parameters.  Matrices are numpy arrays, lists are tuples.

    ``slack_weight = 0`` solves the hard-constrained program.  Without
    ``n_scenarios`` the scenario counts come from the bounds: the outer
    level ``eps1`` alone for the fixed-model variants and ``eps1 * eps2``
    for ``ud_smpc``.  ``mc_realizations = None`` means 50 realizations for
    the open-loop study and 20 for the closed-loop study.
    """

    a: np.ndarray = field(default_factory=lambda: np.array([[0.9, 0.15], [0.05, 0.9]]))
    b: np.ndarray = field(default_factory=lambda: np.array([[0.0], [1.0]]))
    noise_bound: float = 0.02
    input_bound: float = 0.5
    init_bound: float = 0.5
    x0: np.ndarray = field(default_factory=lambda: np.array([0.6, 0.0]))
    horizon: int = 5
    steps: int = 10
    q_stage: np.ndarray = field(default_factory=lambda: np.eye(2))
    r_stage: np.ndarray = field(default_factory=lambda: np.array([[0.1]]))
    constraint_x: np.ndarray = field(default_factory=lambda: -np.eye(2))
    constraint_u: np.ndarray = field(default_factory=lambda: np.zeros((2, 1)))
    constraint_b: np.ndarray = field(default_factory=lambda: np.array([-0.5, 0.0]))
    structure: str = "full"
    slack_weight: float = 1e5
    eps1: float = 0.1
    eps2: float = 0.3
    beta: float = 1e-5
    n_scenarios: int | None = None
    n_grid: tuple[int, ...] = (64, 256, 1024)
    variants: tuple[str, ...] = ("ud_smpc", "ls_smpc", "gt_smpc")
    mc_realizations: int | None = None
    eval_rollouts: int = 200
    id_length: int = 50
    hist_count: int = 1000
    id_data: str | None = None
    workers: int = 1
    seed: int = 0
    out: str = "."

    # -- construction ------------------------------------------------------

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def parse_value(cls, key: str, text: str):
        if key not in _PARSERS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            return _PARSERS[key](text)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {text!r} ({exc})") from None

    @classmethod
    def parse_text(cls, text: str, source: str = "<config>") -> dict:
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            try:
                values[key] = cls.parse_value(key, value.strip())
            except ConfigError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from None
        return values

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls().with_values(cls.parse_text(text, str(path)))

    def with_values(self, values: dict) -> "ExperimentConfig":
        return replace(self, **values)

    # -- validation and derived objects ----------------------------------

    def validate(self) -> None:
        """Raise :class:`ConfigError` on the first invalid field."""
        try:
            model = self.model()
            LinearConstraintSpec.stagewise(self.constraint_x, self.constraint_u, self.constraint_b, 1)
            setup = self.setup(model)
            setup.constraint.stage(model.n, model.m)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        n, m = model.n, model.m
        if self.constraint_x.shape[1] != n or self.constraint_u.shape[1] != m:
            raise ConfigError(f"constraint_x needs {n} columns and constraint_u {m} columns")
        for name in ("noise_bound", "input_bound", "init_bound"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"{name} must be finite and non-negative")
        if not (math.isfinite(self.slack_weight) and self.slack_weight >= 0):
            raise ConfigError("slack_weight must be finite and non-negative")
        for name in ("eps1", "eps2", "beta"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {value}")
        for name in ("horizon", "steps", "eval_rollouts", "id_length", "hist_count", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.mc_realizations is not None and self.mc_realizations < 1:
            raise ConfigError("mc_realizations must be a positive integer")
        if self.n_scenarios is not None and self.n_scenarios < 1:
            raise ConfigError("n_scenarios must be a positive integer")
        if not self.n_grid or any(v < 1 for v in self.n_grid):
            raise ConfigError("n_grid must be a non-empty list of positive integers")
        if not self.variants:
            raise ConfigError("variants must not be empty")
        if len(set(self.variants)) != len(self.variants):
            raise ConfigError("variants must not repeat")
        for v in self.variants:
            try:
                VariantKind(v)
            except ValueError:
                raise ConfigError(f"unknown variant {v!r}; choose from "
                                  + ", ".join(k.value for k in VariantKind)) from None
        if not 0 <= self.seed <= U64_MAX:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.id_data is not None and not Path(self.id_data).is_file():
            raise ConfigError(f"id_data file {self.id_data} does not exist")

    def model(self) -> LtiModel:
        return LtiModel(self.a, self.b)

    def plant(self, model: LtiModel | None = None) -> Plant:
        return Plant(model or self.model(), self.noise_bound, self.input_bound, self.init_bound)

    def setup(self, model: LtiModel | None = None) -> ProblemSetup:
        try:
            structure = Structure(self.structure)
        except ValueError:
            raise ConfigError(f"unknown structure {self.structure!r}") from None
        T = self.horizon
        if T < 1:
            raise ConfigError("horizon must be a positive integer")
        return ProblemSetup(
            plant=self.plant(model),
            x0=self.x0,
            horizon=T,
            cost=QuadCost.stagewise(self.q_stage, self.r_stage, T),
            constraint=LinearConstraintSpec.stagewise(self.constraint_x, self.constraint_u, self.constraint_b, T),
            structure=structure,
            slack_weight=self.slack_weight if self.slack_weight > 0 else None,
            id_length=self.id_length,
        )

    def decision_variables(self) -> int:
        model = self.model()
        return count_decision_variables(model.n, model.m, self.horizon, Structure(self.structure),
                                        slack=self.slack_weight > 0)

    def bound_spec(self, kind: VariantKind) -> BoundSpec:
        d = self.decision_variables()
        if VariantKind(kind) is VariantKind.UD_SMPC:
            return BoundSpec.nested(self.eps1, self.eps2, self.beta, d)
        return BoundSpec(self.eps1, self.beta, d)

    def controller_variants(self) -> list[ControllerVariant]:
        out = []
        for v in self.variants:
            kind = VariantKind(v)
            if self.n_scenarios is not None:
                out.append(ControllerVariant(kind, self.n_scenarios))
            else:
                out.append(ControllerVariant(kind, bound_params=self.bound_spec(kind)))
        return out

    def identification(self) -> TrajectoryDataset | None:
        if self.id_data is None:
            return None
        return TrajectoryDataset.from_csv(self.id_data)


def bound_row(eps1: float, eps2: float, beta: float, d: int) -> tuple[int, int]:
    """``(min_scenarios, explicit_upper_bound)`` at violation level ``eps1 * eps2``."""
    return min_scenarios(BoundSpec.nested(eps1, eps2, beta, d)), explicit_upper_bound(eps1, eps2, beta, d)
