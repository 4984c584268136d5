"""
Closed-form reference solutions, barrier constants and a Riccati ODE oracle
for models whose coefficients do not depend on the factor.

Everything here is in u-space (no weight), so the value at inventory x is
u * x^2.
"""

import csv
import logging
import math
from dataclasses import dataclass
from typing import Any, Iterable, List, Optional, TextIO, Union

import numpy as np

from model.model_spec import ModelSpec, require_assumptions
from model.nonlinearity import eval_F_hat

logger = logging.getLogger(__name__)

# Largest |dF/dw| * h allowed inside one RK4 sub-step.
RK4_STIFFNESS_STEP = 0.01


def _time_to_go(T: float, t: Any, allow_terminal: bool) -> np.ndarray:
    s = T - np.asarray(t, dtype=float)
    if allow_terminal:
        if np.any(s < 0.0):
            raise ValueError(f"time must lie in [0, T={T}]")
    elif np.any(s <= 0.0):
        raise ValueError(f"time must be strictly before the singularity at T={T}")
    return s


def _scalar_or_array(values: np.ndarray) -> Union[float, np.ndarray]:
    return float(values) if values.ndim == 0 else values


def u_hat(Lambda: float, T: float, t: Any) -> Union[float, np.ndarray]:
    """
    Singular solution Lambda * coth(T - t) for the triple (Lambda, +inf, Lambda).

    Raises:
        ValueError: If t >= T
    """
    s = _time_to_go(T, t, allow_terminal=False)
    return _scalar_or_array(Lambda / np.tanh(s))


def u_hat_shifted(Lambda: float, T: float, t: Any, shift: float) -> Union[float, np.ndarray]:
    """u_hat with its singularity moved to T - shift."""
    if not 0.0 <= shift < T:
        raise ValueError(f"shift must lie in [0, T), got {shift}")
    return u_hat(Lambda, T - shift, t)


def u_tilde_N(Lambda: float, N: float, T: float, t: Any) -> Union[float, np.ndarray]:
    """
    Finite-N solution for the triple (Lambda, +inf, Lambda):

        2 Lambda / (1 - r e^{-2(T-t)}) - Lambda,   r = (N - Lambda) / (N + Lambda)
    """
    if not N > 0.0:
        raise ValueError(f"terminal level N must be > 0, got {N}")
    s = _time_to_go(T, t, allow_terminal=True)
    r = (N - Lambda) / (N + Lambda)
    values = 2.0 * Lambda / (1.0 - r * np.exp(-2.0 * s)) - Lambda
    return _scalar_or_array(np.where(s == 0.0, float(N), values))


def u_bar_N(kappa0: float, mu_total: float, N: float, T: float, t: Any) -> Union[float, np.ndarray]:
    """
    Finite-N solution for the triple (0, 0, kappa0) with dark-pool mass mu_total:

        m / (1 - N/(N+m) e^{-mu (T-t)}) - m,   m = kappa0 * mu_total

    With mu_total = 0 the formula degenerates; the pure Riccati limit
    N kappa0 / (kappa0 + N (T-t)) is returned instead.
    """
    if not N > 0.0:
        raise ValueError(f"terminal level N must be > 0, got {N}")
    s = _time_to_go(T, t, allow_terminal=True)
    if mu_total == 0.0:
        values = N * kappa0 / (kappa0 + N * s)
    else:
        m = kappa0 * mu_total
        values = m / (1.0 - (N / (N + m)) * np.exp(-mu_total * s)) - m
    return _scalar_or_array(np.where(s == 0.0, float(N), values))


def u_bar_limit(kappa0: float, mu_total: float, T: float, t: Any) -> Union[float, np.ndarray]:
    """Singular (N -> inf) limit of u_bar_N."""
    s = _time_to_go(T, t, allow_terminal=False)
    if mu_total == 0.0:
        values = kappa0 / s
    else:
        m = kappa0 * mu_total
        values = m / (-np.expm1(-mu_total * s)) - m
    return _scalar_or_array(values)


@dataclass(frozen=True)
class BarrierPair:
    """Growth barriers c0/(T-t) <= u <= c1/(T-t)."""
    c0: float
    c1: float
    T: float

    def __post_init__(self):
        if not 0.0 < self.c0 <= self.c1:
            raise ValueError(f"barrier constants must satisfy 0 < c0 <= c1, got {self.c0}, {self.c1}")

    def lower(self, t: Any) -> np.ndarray:
        return self.c0 / _time_to_go(self.T, t, allow_terminal=False)

    def upper(self, t: Any) -> np.ndarray:
        return self.c1 / _time_to_go(self.T, t, allow_terminal=False)


def barriers(spec: ModelSpec) -> BarrierPair:
    """
    Barrier constants c0 = kappa0 e^{-mu(Z) T}, c1 = Lambda e^{2T}.

    Raises:
        AssumptionError: If the model fails the standing assumptions
    """
    report = require_assumptions(spec)
    c0 = report.kappa0 * math.exp(-spec.mu_total * spec.T)
    c1 = report.Lambda * math.exp(2.0 * spec.T)
    return BarrierPair(c0=c0, c1=c1, T=spec.T)


@dataclass
class OdeSolution:
    """Backward solution w of -w' = F(t, w), w(T) = N, on a descending time grid."""
    times: np.ndarray
    values: np.ndarray
    N: float
    clamped: bool = False

    def at(self, t: Any) -> np.ndarray:
        """Linear interpolation on the solution grid."""
        order = np.argsort(self.times)
        return np.interp(t, self.times[order], self.values[order])

    def write_csv(self, stream: TextIO) -> None:
        writer = csv.writer(stream)
        writer.writerow(["t", "w"])
        for t, w in zip(self.times, self.values):
            writer.writerow([repr(float(t)), repr(float(w))])


def riccati_solve(spec: ModelSpec, N: float, time_grid: Iterable[float]) -> OdeSolution:
    """
    Integrate -w' = F_hat(t, w), w(T) = N backward with the classical RK4 method.

    Each grid interval is split into equal sub-steps sized from the local
    stiffness |dF/dw|; a sub-step that lands below zero is clamped and the
    solution is flagged.

    Args:
        spec: Model whose coefficients are all constant in y
        N: Terminal level, >= 0
        time_grid: Times in [0, T]; T is added if missing

    Returns:
        OdeSolution on the grid sorted descending from T

    Raises:
        ValueError: If a coefficient depends on y, or N < 0
    """
    if not spec.is_y_independent():
        raise ValueError("riccati_solve needs coefficients that are constant in y")
    if N < 0.0:
        raise ValueError(f"terminal level N must be >= 0, got {N}")

    T = spec.T
    times = np.unique(np.append(np.asarray(list(time_grid), dtype=float), T))[::-1]
    if times[-1] < 0.0 or times[0] > T:
        raise ValueError("time grid must lie in [0, T]")

    eta_floor = spec.eta.lower_bound()
    mu_total = spec.mu_total
    lam_max = abs(spec.lam.upper_bound())

    def rhs(t: float, w: float) -> float:
        return float(eval_F_hat(spec, t, 0.0, w))

    values = np.empty_like(times)
    values[0] = N
    w = float(N)
    clamped = False
    for k in range(1, len(times)):
        t_hi, t_lo = times[k - 1], times[k]
        span = t_hi - t_lo
        stiffness = 2.0 * abs(w) / eta_floor + mu_total + lam_max + 1.0
        n_sub = max(1, int(math.ceil(span * stiffness / RK4_STIFFNESS_STEP)))
        h = span / n_sub
        t = t_hi
        for _ in range(n_sub):
            # reverse time: dw/ds = F(T - s, w)
            k1 = rhs(t, w)
            k2 = rhs(t - 0.5 * h, w + 0.5 * h * k1)
            k3 = rhs(t - 0.5 * h, w + 0.5 * h * k2)
            k4 = rhs(t - h, w + h * k3)
            w = w + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
            t -= h
            if w < 0.0:
                w = 0.0
                clamped = True
        values[k] = w

    if clamped:
        logger.warning("riccati_solve clamped negative values at zero (N=%g)", N)
    return OdeSolution(times=times, values=values, N=float(N), clamped=clamped)


class ClosedFormValue:
    """
    A y-independent value coefficient with exact step averages.

    kinds:
        u_hat        Lambda coth(T-t)
        u_tilde      u_tilde_N (needs N)
        u_bar        u_bar_N (needs N)
        u_bar_limit  singular lower envelope
    """

    KINDS = ("u_hat", "u_tilde", "u_bar", "u_bar_limit")

    def __init__(self, kind: str, T: float, Lambda: float = 1.0, kappa0: float = 1.0,
                 mu_total: float = 0.0, N: Optional[float] = None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown closed form '{kind}' (expected one of {self.KINDS})")
        if kind in ("u_tilde", "u_bar") and (N is None or not N > 0.0):
            raise ValueError(f"closed form '{kind}' needs a terminal level N > 0")
        self.kind = kind
        self.T = float(T)
        self.Lambda = float(Lambda)
        self.kappa0 = float(kappa0)
        self.mu_total = float(mu_total)
        self.N = None if N is None else float(N)

    @property
    def name(self) -> str:
        return self.kind if self.N is None else f"{self.kind}(N={self.N:g})"

    @property
    def singular(self) -> bool:
        return self.kind in ("u_hat", "u_bar_limit")

    def value(self, t: float) -> float:
        if self.kind == "u_hat":
            return u_hat(self.Lambda, self.T, t)
        if self.kind == "u_tilde":
            return u_tilde_N(self.Lambda, self.N, self.T, t)
        if self.kind == "u_bar":
            return u_bar_N(self.kappa0, self.mu_total, self.N, self.T, t)
        return u_bar_limit(self.kappa0, self.mu_total, self.T, t)

    def evaluate(self, t: float, y: Any) -> np.ndarray:
        return np.full(np.shape(y), self.value(t))

    def _antiderivative(self, s: float) -> float:
        """G with dG/ds = u at time-to-go s."""
        if self.kind == "u_hat":
            return self.Lambda * math.log(math.sinh(s))
        if self.kind == "u_tilde":
            r = (self.N - self.Lambda) / (self.N + self.Lambda)
            return self.Lambda * s + self.Lambda * math.log1p(-r * math.exp(-2.0 * s))
        if self.kind == "u_bar":
            if self.mu_total == 0.0:
                return self.kappa0 * math.log(self.kappa0 + self.N * s)
            p = self.N / (self.N + self.kappa0 * self.mu_total)
            return self.kappa0 * math.log1p(-p * math.exp(-self.mu_total * s))
        if self.mu_total == 0.0:
            return self.kappa0 * math.log(s)
        return self.kappa0 * math.log(-math.expm1(-self.mu_total * s))

    def step_mean(self, t0: float, t1: float, y: Any) -> np.ndarray:
        """
        Exact mean of u over [t0, t1].

        Raises:
            ValueError: If the step reaches the singularity of a singular form
        """
        if t1 <= t0:
            raise ValueError("step must have t1 > t0")
        s0, s1 = self.T - t0, self.T - t1
        if self.singular and s1 <= 0.0:
            raise ValueError("step mean is infinite on a step ending at the singularity")
        mean = (self._antiderivative(s0) - self._antiderivative(s1)) / (t1 - t0)
        return np.full(np.shape(y), mean)


def closed_form_for(spec: ModelSpec, kind: str, N: Optional[float] = None) -> ClosedFormValue:
    """Closed form built from a model's constants."""
    return ClosedFormValue(kind, T=spec.T, Lambda=spec.Lambda, kappa0=spec.kappa0,
                           mu_total=spec.mu_total, N=N)


def residual_u_hat(Lambda: float, T: float, times: np.ndarray) -> List[float]:
    """
    Central-difference residual of -u' - (Lambda - u^2 / Lambda) for u_hat.

    Args:
        times: Increasing, uniformly spaced times strictly before T

    Returns:
        Residuals at the interior points
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(u_hat(Lambda, T, times))
    h = times[1] - times[0]
    derivative = (values[2:] - values[:-2]) / (2.0 * h)
    inner = values[1:-1]
    return list(-derivative - (Lambda - inner * inner / Lambda))
