"""Dynamic (alpha, beta) trajectories for coefficient finetuning.

The pair starts at (1.0, 0.1), moves monotonically toward a configured end
point, changes only every eta epochs/iterations, and freezes once the end
step tau is reached. Three path shapes (linear, exponential, logarithm) and
three orderings (simultaneous, alpha_first, beta_first) are supported.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .errors import ConfigError

SHAPES = ("linear", "exponential", "logarithm")
ORDERS = ("simultaneous", "alpha_first", "beta_first")

# fixed warp constants chosen to give visibly convex/concave paths while
# pinning both endpoints
_EXP_K = 3.0
_LOG_C = 9.0


@dataclass(frozen=True)
class SchedulePolicy:
    shape: str = "linear"
    order: str = "simultaneous"
    eta: int = 1
    eta_unit: str = "iterations"  # iterations | epochs
    tau: int = 100
    alpha_start: float = 1.0
    beta_start: float = 0.1
    alpha_end: float = 0.3
    beta_end: float = 0.7
    steps_per_epoch: int = 100

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown schedule shape {self.shape!r}; options {SHAPES}")
        if self.order not in ORDERS:
            raise ConfigError(f"unknown schedule order {self.order!r}; options {ORDERS}")
        if self.eta_unit not in ("iterations", "epochs"):
            raise ConfigError(f"eta_unit must be iterations|epochs, got {self.eta_unit!r}")
        if self.tau <= 0:
            raise ConfigError("degenerate schedule: tau must be >= 1")
        if self.eta <= 0:
            raise ConfigError("eta must be >= 1")
        if self.alpha_end > self.alpha_start:
            raise ConfigError("alpha must be non-increasing: alpha_end > alpha_start")
        if self.beta_end < self.beta_start:
            raise ConfigError("beta must be non-decreasing: beta_end < beta_start")
        if self.eta > self.tau:
            warnings.warn(
                f"schedule eta={self.eta} exceeds tau={self.tau}: coefficients "
                f"jump to the end point in a single update at t=eta")

    @property
    def eta_steps(self) -> int:
        return self.eta * (self.steps_per_epoch if self.eta_unit == "epochs" else 1)

    @property
    def tau_steps(self) -> int:
        return self.tau * (self.steps_per_epoch if self.eta_unit == "epochs" else 1)


def _warp(shape: str, s: float) -> float:
    if shape == "linear":
        return s
    if shape == "exponential":
        return (math.exp(_EXP_K * s) - 1.0) / (math.exp(_EXP_K) - 1.0)
    return math.log(1.0 + _LOG_C * s) / math.log(1.0 + _LOG_C)


def _split_progress(order: str, s: float) -> tuple[float, float]:
    """Per-coefficient progress; sequential orders use half the budget each."""
    if order == "simultaneous":
        return s, s
    if order == "alpha_first":
        return min(1.0, 2.0 * s), max(0.0, 2.0 * s - 1.0)
    return max(0.0, 2.0 * s - 1.0), min(1.0, 2.0 * s)


def coefficients_at(policy: SchedulePolicy, t: int) -> tuple[float, float]:
    """(alpha, beta) in effect at step t; piecewise constant with period eta."""
    if t < 0:
        raise ConfigError(f"step index must be >= 0, got {t}")
    q = min((t // policy.eta_steps) * policy.eta_steps, policy.tau_steps)
    s = q / policy.tau_steps
    s_alpha, s_beta = _split_progress(policy.order, s)
    alpha = policy.alpha_start + _warp(policy.shape, s_alpha) * (
        policy.alpha_end - policy.alpha_start)
    beta = policy.beta_start + _warp(policy.shape, s_beta) * (
        policy.beta_end - policy.beta_start)
    return alpha, beta


def schedule_events(policy: SchedulePolicy, total_steps: int
                    ) -> list[tuple[int, float, float]]:
    """Every (t, alpha, beta) change point, starting at t=0."""
    if total_steps < 1:
        raise ConfigError(f"total_steps must be >= 1, got {total_steps}")
    events = [(0, *coefficients_at(policy, 0))]
    t = policy.eta_steps
    while t < total_steps:
        alpha, beta = coefficients_at(policy, t)
        if (alpha, beta) != events[-1][1:]:
            events.append((t, alpha, beta))
        if t >= policy.tau_steps:
            break
        t += policy.eta_steps
    return events
