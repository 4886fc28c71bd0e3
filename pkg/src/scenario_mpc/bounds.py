"""Sample-complexity bounds for scenario programs.

The scenario count ``N`` is admissible when the binomial tail

    sum_{i<d} C(N, i) eps^i (1 - eps)^(N - i) <= beta

holds.  For known dynamics ``eps`` is the single violation level; when the
model is itself sampled the product of the inner and outer levels is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BoundSpec:
    epsilon: float
    beta: float
    d: int

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d}")

    @classmethod
    def nested(cls, eps1: float, eps2: float, beta: float, d: int) -> "BoundSpec":
        """Bound for sampled dynamics: violation level ``eps1 * eps2``."""
        for name, value in (("eps1", eps1), ("eps2", eps2)):
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
        return cls(eps1 * eps2, beta, d)


def _log_binom_pmf(N: int, i: int, log_eps: float, log_1m: float) -> float:
    log_coef = math.lgamma(N + 1) - math.lgamma(i + 1) - math.lgamma(N - i + 1)
    a = i * log_eps if i else 0.0
    b = (N - i) * log_1m if N - i else 0.0
    return log_coef + a + b


def log_binomial_tail(N: int, d: int, eps: float) -> float:
    """Natural log of :func:`binomial_tail`; ``-inf`` when the tail is zero."""
    if d < 1 or N < d:
        raise ValueError(f"need N >= d >= 1, got N={N}, d={d}")
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    if eps == 1.0:
        # every term carries a positive power of (1 - eps)
        return -math.inf
    log_eps = math.log(eps)
    log_1m = math.log1p(-eps)
    acc = -math.inf
    for i in range(d):
        t = _log_binom_pmf(N, i, log_eps, log_1m)
        if t > acc:
            acc, t = t, acc
        if t != -math.inf:
            acc += math.log1p(math.exp(t - acc))
    return acc


def binomial_tail(N: int, d: int, eps: float) -> float:
    """``P(X <= d - 1)`` for ``X ~ Binomial(N, eps)``, evaluated in log domain."""
    return min(1.0, math.exp(log_binomial_tail(N, d, eps)))


def _satisfies(N: int, d: int, eps: float, log_beta: float) -> bool:
    return log_binomial_tail(N, d, eps) <= log_beta


def min_scenarios(spec: BoundSpec) -> int:
    """Smallest ``N >= d`` whose binomial tail does not exceed ``beta``.

    The tail is non-increasing in ``N``, so an exponential gallop followed by
    bisection needs only ``O(log N)`` evaluations.
    """
    d, eps = int(spec.d), spec.epsilon
    log_beta = math.log(spec.beta)
    if _satisfies(d, d, eps, log_beta):
        return d
    lo, step = d, 1
    hi = d + step
    while not _satisfies(hi, d, eps, log_beta):
        lo = hi
        step *= 2
        hi = d + step
    # invariant: lo fails, hi satisfies
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _satisfies(mid, d, eps, log_beta):
            hi = mid
        else:
            lo = mid
    return hi


def explicit_upper_bound(eps1: float, eps2: float, beta: float, d: int) -> int:
    """Closed-form ``ceil(2 / (eps1 eps2) * (d + ln(1 / beta)))``."""
    if not (0.0 < eps1 <= 1.0 and 0.0 < eps2 <= 1.0 and 0.0 < beta <= 1.0 and d >= 1):
        raise ValueError("need eps1, eps2, beta in (0, 1] and d >= 1")
    return math.ceil(2.0 / (eps1 * eps2) * (d + math.log(1.0 / beta)))
