"""
Pathwise checks on simulated trajectories: decay of the inventory towards
the terminal constraint and a per-path admissibility estimate.
"""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from model.model_spec import ModelSpec
from simulation.liquidation_sim import Trajectory
from solvers.closed_form import BarrierPair

DECAY_SLACK = 0.05


@dataclass
class DecayReport:
    passed: bool
    worst_ratio: float
    terminal_zero: bool
    violations: int

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"state decay {status}: worst |x|/bound {self.worst_ratio:.4f}, "
                f"x(T)=0: {'yes' if self.terminal_zero else 'no'}, {self.violations} violation(s)")


def check_state_decay(trajectory: Trajectory, spec: ModelSpec, pair: BarrierPair,
                      slack: float = DECAY_SLACK) -> DecayReport:
    """
    Check |x_t| <= |x0| ((T-t)/T)^(c0/Lambda) (1 + slack) on both sides of every node.
    """
    T = spec.T
    exponent = pair.c0 / spec.Lambda
    x0 = abs(trajectory.x_pre[0])
    to_go = np.clip((T - trajectory.times) / T, 0.0, 1.0)
    bound = x0 * to_go ** exponent * (1.0 + slack)
    size = np.maximum(np.abs(trajectory.x_pre), np.abs(trajectory.x_post))
    violated = size > bound
    positive = bound > 0.0
    worst = float((size[positive] / bound[positive]).max()) if np.any(positive) else 0.0
    terminal_zero = trajectory.x_pre[-1] == 0.0 and trajectory.x_post[-1] == 0.0
    violations = int(np.count_nonzero(violated))
    return DecayReport(violations == 0 and terminal_zero, worst, terminal_zero, violations)


@dataclass
class AdmissibilityReport:
    c_hat: float
    threshold: float

    @property
    def flagged(self) -> bool:
        return self.c_hat > self.threshold

    def summary(self) -> str:
        return (f"admissibility estimate C_hat={self.c_hat:.4f} "
                f"(threshold {self.threshold:.4f}{', FLAGGED' if self.flagged else ''})")


def check_admissibility_estimate(trajectory: Trajectory, spec: ModelSpec) -> AdmissibilityReport:
    """
    Smallest C with x_t^2 <= C (T-t) sum_{s>=t} xi_s^2 dt at every node before T,
    using the realized forward integral as a per-path stand-in for the
    conditional expectation. Flagged above 10 e^{mu(Z) T}.
    """
    times = trajectory.times
    h = np.diff(times)
    forward = np.cumsum((trajectory.xi ** 2 * h)[::-1])[::-1]
    c_hat = 0.0
    for i in range(trajectory.n_steps):
        x = trajectory.x_post[i]
        if x == 0.0:
            continue
        denominator = (spec.T - times[i]) * forward[i]
        if denominator <= 0.0:
            c_hat = math.inf
            break
        c_hat = max(c_hat, x * x / denominator)
    return AdmissibilityReport(c_hat, 10.0 * math.exp(spec.mu_total * spec.T))


def ensemble_admissibility_estimate(trajectories: Sequence[Trajectory],
                                    spec: ModelSpec) -> AdmissibilityReport:
    """
    Path-averaged version of check_admissibility_estimate:
    max over nodes of mean(x_t^2) / ((T-t) mean(sum_{s>=t} xi_s^2 dt)).

    All trajectories must share one time grid.
    """
    if not trajectories:
        raise ValueError("need at least one trajectory")
    times = trajectories[0].times
    h = np.diff(times)
    x_sq = np.mean([tr.x_post[:-1] ** 2 for tr in trajectories], axis=0)
    forward = np.mean([np.cumsum((tr.xi ** 2 * h)[::-1])[::-1] for tr in trajectories], axis=0)
    c_hat = 0.0
    for i in range(len(times) - 1):
        if x_sq[i] == 0.0:
            continue
        denominator = (spec.T - times[i]) * forward[i]
        if denominator <= 0.0:
            c_hat = math.inf
            break
        c_hat = max(c_hat, x_sq[i] / denominator)
    return AdmissibilityReport(c_hat, 10.0 * math.exp(spec.mu_total * spec.T))
