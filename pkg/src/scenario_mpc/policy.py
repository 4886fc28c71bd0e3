"""Disturbance-affine policies ``u = gamma + lambda @ eta`` and prediction matrices."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionError
from .lti import DisturbanceSequence, LtiModel


class Structure(str, Enum):
    """Which feedback blocks of the gain matrix are free.

    ``FULL`` frees every block strictly below the block diagonal,
    ``SUBDIAGONAL`` only the first block sub-diagonal, so ``u[k]`` reacts
    to ``eta[k-1]`` alone.
    """

    FULL = "full"
    SUBDIAGONAL = "subdiagonal"


def feedback_mask(n: int, m: int, horizon: int, structure=Structure.FULL) -> np.ndarray:
    """Boolean ``(m*T, n*T)`` mask of the free entries of the feedback gain."""
    structure = Structure(structure)
    mask = np.zeros((m * horizon, n * horizon), dtype=bool)
    for k in range(1, horizon):
        lo = 0 if structure is Structure.FULL else k - 1
        mask[k * m : (k + 1) * m, lo * n : k * n] = True
    return mask


def count_decision_variables(n: int, m: int, horizon: int, structure=Structure.FULL, slack: bool = False) -> int:
    """Number of free scalars in the policy, plus one for a shared slack."""
    if min(n, m, horizon) < 1:
        raise ValueError("n, m and horizon must all be >= 1")
    structure = Structure(structure)
    if structure is Structure.FULL:
        d = m * horizon + m * n * horizon * (horizon - 1) // 2
    else:
        d = m * horizon + m * n * (horizon - 1)
    return d + int(bool(slack))


@dataclass(frozen=True, eq=False)
class AffinePolicy:
    """Feedforward ``gamma`` (m*T) and strictly causal feedback ``lam`` (m*T x n*T)."""

    gamma: np.ndarray
    lam: np.ndarray
    n: int
    m: int
    horizon: int

    def __post_init__(self):
        n, m, T = self.n, self.m, self.horizon
        gamma = np.array(self.gamma, dtype=np.float64).ravel()
        lam = np.array(self.lam, dtype=np.float64)
        if gamma.shape != (m * T,):
            raise DimensionError(f"gamma must have {m * T} entries, got {gamma.shape}")
        if lam.shape != (m * T, n * T):
            raise DimensionError(f"lambda must have shape {(m * T, n * T)}, got {lam.shape}")
        if np.any(lam[~feedback_mask(n, m, T)] != 0.0):
            raise ValueError("lambda must be strictly block-lower-triangular")
        gamma.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "lam", lam)

    @classmethod
    def zero(cls, n: int, m: int, horizon: int) -> "AffinePolicy":
        return cls(np.zeros(m * horizon), np.zeros((m * horizon, n * horizon)), n, m, horizon)

    @classmethod
    def from_free(cls, values, n: int, m: int, horizon: int, structure=Structure.FULL) -> "AffinePolicy":
        """Build a policy from ``[gamma, free feedback entries (row-major)]``."""
        values = np.asarray(values, dtype=np.float64)
        mask = feedback_mask(n, m, horizon, structure)
        n_gamma = m * horizon
        if values.shape != (n_gamma + int(mask.sum()),):
            raise DimensionError(
                f"expected {n_gamma + int(mask.sum())} policy values, got {values.shape}"
            )
        lam = np.zeros(mask.shape)
        lam[mask] = values[n_gamma:]
        return cls(values[:n_gamma], lam, n, m, horizon)

    def free_values(self, structure=Structure.FULL) -> np.ndarray:
        mask = feedback_mask(self.n, self.m, self.horizon, structure)
        if np.any(self.lam[~mask] != 0.0):
            raise ValueError(f"policy has feedback entries outside the {Structure(structure).value} pattern")
        return np.concatenate([self.gamma, self.lam[mask]])

    def inputs(self, eta) -> np.ndarray:
        """Stacked inputs for a stacked (or ``(T, n)``) disturbance realization."""
        return self.gamma + self.lam @ _stacked(eta, self.n * self.horizon)

    def first_input(self) -> np.ndarray:
        return self.gamma[: self.m].copy()


@dataclass(frozen=True, eq=False)
class PredictionMatrices:
    """``x_plus = f @ x0 + g @ u + h @ eta`` over the stacked horizon."""

    f: np.ndarray
    g: np.ndarray
    h: np.ndarray

    @property
    def n(self) -> int:
        return self.f.shape[1]

    @property
    def m(self) -> int:
        return self.g.shape[1] // self.horizon

    @property
    def horizon(self) -> int:
        return self.f.shape[0] // self.f.shape[1]


def build_prediction_matrices(model: LtiModel, horizon: int) -> PredictionMatrices:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n, m = model.n, model.m
    powers = [np.eye(n)]
    for _ in range(horizon):
        powers.append(model.a @ powers[-1])

    f = np.vstack(powers[1:])
    g = np.zeros((n * horizon, m * horizon))
    h = np.zeros((n * horizon, n * horizon))
    for k in range(horizon):
        for j in range(k + 1):
            g[k * n : (k + 1) * n, j * m : (j + 1) * m] = powers[k - j] @ model.b
            h[k * n : (k + 1) * n, j * n : (j + 1) * n] = powers[k - j]
    for arr in (f, g, h):
        arr.setflags(write=False)
    return PredictionMatrices(f, g, h)


def predict(pm: PredictionMatrices, x0, policy: AffinePolicy, eta) -> tuple[np.ndarray, np.ndarray]:
    """Stacked predicted states ``x[1..T]`` and inputs ``u[0..T-1]``."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (pm.n,):
        raise DimensionError(f"x0 must have shape ({pm.n},), got {x0.shape}")
    if (policy.n, policy.m, policy.horizon) != (pm.n, pm.m, pm.horizon):
        raise DimensionError("policy dimensions do not match the prediction matrices")
    eta = _stacked(eta, pm.n * pm.horizon)
    u = policy.gamma + policy.lam @ eta
    x = pm.f @ x0 + pm.g @ u + pm.h @ eta
    return x, u


def _stacked(eta, size: int) -> np.ndarray:
    if isinstance(eta, DisturbanceSequence):
        eta = eta.values
    eta = np.asarray(eta, dtype=np.float64).ravel()
    if eta.shape != (size,):
        raise DimensionError(f"disturbance realization must have {size} entries, got {eta.shape}")
    return eta
