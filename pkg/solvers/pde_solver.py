"""
Finite-difference solver for the Markovian finite-N equation

    -d_t u = a u'' + b u' + lambda - sum_k mu_k u^2/(gamma_k + u) - (M ^ u) u / eta,
    u(T) = N,

on a truncated factor interval with homogeneous Neumann ends, and the
singular solution obtained as the increasing limit N -> inf.

Each backward step solves one tridiagonal system

    (I - dt L + dt diag(K(u_old))) u_new = u_old + dt lambda

whose matrix is an M-matrix under upwinding, so the scheme preserves
positivity and comparison.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import solve_banded

from model.model_spec import ModelSpec, require_assumptions
from model.nonlinearity import absorption_rate
from solvers.closed_form import (
    BarrierPair, barriers, u_bar_N, u_hat_shifted, u_tilde_N,
)
from solvers.value_field import Grid1D, ValueField
from utils.errors import ComparisonError, ConvergenceError, SchemeError

logger = logging.getLogger(__name__)

NEGATIVE_TOLERANCE = 1e-12
MONOTONE_TOLERANCE = 1e-8
MAX_RUNGS = 40
BARRIER_TOLERANCE = 0.02
KAPPA_FLOOR = 1e-6
COMPARISON_SLACK = 1e-6


def _stencil(spec: ModelSpec, grid: Grid1D, upwind: bool) -> Tuple[np.ndarray, np.ndarray]:
    """
    Off-diagonal weights of L at every node: (Lu)_j = lo_j u_{j-1} + up_j u_{j+1} - (lo_j + up_j) u_j.
    """
    ys = grid.ys
    dy = grid.dy
    # coefficients are time-independent in every supported family
    a = spec.a(0.0, ys)
    b = spec.b.evaluate(0.0, ys)
    diffusion = a / (dy * dy)
    if upwind:
        lower = diffusion + np.maximum(-b, 0.0) / dy
        upper = diffusion + np.maximum(b, 0.0) / dy
    else:
        lower = diffusion - b / (2.0 * dy)
        upper = diffusion + b / (2.0 * dy)
    # Neumann ends: the ghost node mirrors the single interior neighbour
    lower = lower.copy()
    upper = upper.copy()
    lower[0], upper[0] = 0.0, lower[0] + upper[0]
    lower[-1], upper[-1] = lower[-1] + upper[-1], 0.0
    return lower, upper


def _banded_matrix(lower: np.ndarray, upper: np.ndarray, decay: np.ndarray,
                   dt: float) -> np.ndarray:
    n = len(lower)
    ab = np.zeros((3, n))
    ab[0, 1:] = -dt * upper[:-1]
    ab[1, :] = 1.0 + dt * (lower + upper + decay)
    ab[2, :-1] = -dt * lower[1:]
    return ab


def solve_finite_terminal(spec: ModelSpec, N: float, M: float, grid: Grid1D,
                          upwind: bool = True) -> ValueField:
    """
    Solve the truncated finite-N equation backward from u(T) = N.

    Args:
        spec: Model; must pass the standing assumptions
        N: Terminal level, >= 0
        M: Truncation level of the impact term, > 0
        grid: Space-time grid
        upwind: First-order upwind drift (False switches to central
            differences, which breaks monotonicity; test hook)

    Returns:
        Finite-N ValueField on the whole grid

    Raises:
        AssumptionError: If the model fails an assumption
        ValueError: On N < 0 or M <= 0
        SchemeError: If a step produces a value below -1e-12
    """
    require_assumptions(spec)
    if N < 0.0:
        raise ValueError(f"terminal level N must be >= 0, got {N}")
    if not M > 0.0:
        raise ValueError(f"truncation level M must be > 0, got {M}")

    ys = grid.ys
    times = grid.times
    dt = grid.dt
    lower, upper = _stencil(spec, grid, upwind)
    lam = spec.lam.evaluate(0.0, ys)

    values = np.empty((grid.n_t + 1, grid.n_y))
    values[-1] = N
    u_old = values[-1]
    for n in range(grid.n_t - 1, -1, -1):
        decay = absorption_rate(spec, times[n], ys, u_old, M)
        ab = _banded_matrix(lower, upper, decay, dt)
        u_new = solve_banded((1, 1), ab, u_old + dt * lam)
        lowest = u_new.min()
        if lowest < -NEGATIVE_TOLERANCE:
            raise SchemeError(f"negative value {lowest:.3e} at t={times[n]:.6g} (N={N:g}, M={M:g})")
        u_new = np.maximum(u_new, 0.0)
        values[n] = u_new
        u_old = u_new
    return ValueField(grid, values, float(N))


def solve_finite(spec: ModelSpec, N: float, grid: Grid1D, upwind: bool = True) -> ValueField:
    """
    Finite-N solution with the inactive truncation M = N + Lambda T + 1.

    Raises:
        SchemeError: If the field leaves [0, N + Lambda T]
    """
    bound = N + spec.Lambda * spec.T
    field_ = solve_finite_terminal(spec, N, bound + 1.0, grid, upwind=upwind)
    highest = float(field_.values.max())
    if highest > bound * (1.0 + 1e-12) + 1e-12:
        raise SchemeError(f"value {highest:.6g} exceeds the a-priori bound N + Lambda T = {bound:.6g}")
    return field_


def minimal_ladder_start(spec: ModelSpec) -> float:
    """Smallest terminal level 2 Lambda + kappa0 mu(Z) covered by the existence argument."""
    return 2.0 * spec.Lambda + spec.kappa0 * spec.mu_total


@dataclass
class BarrierReport:
    """Barrier certificate of a singular field on t <= T - delta."""
    passed: bool
    lower_margin: float
    upper_margin: float
    min_lower_ratio: float
    max_upper_ratio: float
    violations: int
    nodes: int
    tolerance: float = BARRIER_TOLERANCE

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"barriers {status}: lower margin {self.lower_margin:+.4e}, "
                f"upper margin {self.upper_margin:+.4e}, "
                f"{self.violations}/{self.nodes} nodes violated (tol {self.tolerance:.0%})")


def check_barriers(field_: ValueField, pair: BarrierPair, delta: float,
                   tolerance: float = BARRIER_TOLERANCE) -> BarrierReport:
    """
    Check c0/(T-t) (1 - tol) <= u <= c1/(T-t) (1 + tol) at every node with t <= T - delta.

    Margins are min over nodes of u (T-t) / c0 - (1 - tol) and
    (1 + tol) - u (T-t) / c1; both are >= 0 on a pass.
    """
    t_limit = pair.T - delta
    values = field_.node_values(t_limit)
    times = field_.times[: values.shape[0]]
    to_go = (pair.T - times)[:, None]
    lower_ratio = values * to_go / pair.c0
    upper_ratio = values * to_go / pair.c1
    lower_ok = lower_ratio >= 1.0 - tolerance
    upper_ok = upper_ratio <= 1.0 + tolerance
    violations = int(np.count_nonzero(~(lower_ok & upper_ok)))
    report = BarrierReport(
        passed=violations == 0,
        lower_margin=float(lower_ratio.min() - (1.0 - tolerance)),
        upper_margin=float((1.0 + tolerance) - upper_ratio.max()),
        min_lower_ratio=float(lower_ratio.min()),
        max_upper_ratio=float(upper_ratio.max()),
        violations=violations,
        nodes=int(values.size),
        tolerance=tolerance,
    )
    if not report.passed:
        logger.warning(report.summary())
    return report


@dataclass
class SingularSolveReport:
    """Outcome of the N-doubling ladder."""
    ladder: List[float]
    deltas: List[float]
    field: ValueField
    delta: float
    tol: float
    converged: bool
    barrier: Optional[BarrierReport] = None
    flags: List[str] = field(default_factory=list)

    @property
    def deltas_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.deltas, self.deltas[1:]))

    def summary(self) -> str:
        lines = [f"singular solve: {len(self.ladder)} rung(s), delta={self.delta:g}, tol={self.tol:g}"]
        for k, N in enumerate(self.ladder):
            if k == 0:
                lines.append(f"  rung {k:2d}  N={N:.6g}")
            else:
                lines.append(f"  rung {k:2d}  N={N:.6g}  rel delta={self.deltas[k - 1]:.6e}")
        if self.deltas:
            lines.append(f"  deltas decreasing: {'yes' if self.deltas_decreasing else 'no'}")
        if self.barrier is not None:
            lines.append("  " + self.barrier.summary())
        for flag in self.flags:
            lines.append(f"  flag: {flag}")
        return "\n".join(lines)


def solve_singular(spec: ModelSpec, grid: Grid1D, delta: Optional[float] = None,
                   tol: float = 1e-4, N0: Optional[float] = None,
                   upwind: bool = True, max_rungs: int = MAX_RUNGS) -> SingularSolveReport:
    """
    Approximate the singular solution by solving for N = N0 2^k until the
    relative sup-difference of consecutive rungs on t <= T - delta drops below tol.

    Args:
        spec: Model
        grid: Space-time grid
        delta: Terminal cutoff; default 0.05 T
        tol: Relative tolerance; inf returns the first rung
        N0: First rung; default 8 / delta

    Returns:
        SingularSolveReport whose field is restricted to t <= T - delta

    Raises:
        ValueError: On delta outside (0, T) or tol <= 0
        SchemeError: If a rung falls below its predecessor by more than 1e-8
        ConvergenceError: If max_rungs solves do not meet the tolerance
    """
    T = spec.T
    delta = 0.05 * T if delta is None else float(delta)
    if not 0.0 < delta < T:
        raise ValueError(f"terminal cutoff delta must lie in (0, T), got {delta}")
    if not tol > 0.0:
        raise ValueError(f"tolerance must be > 0, got {tol}")
    N0 = 8.0 / delta if N0 is None else float(N0)
    if not N0 > 0.0:
        raise ValueError(f"first rung N0 must be > 0, got {N0}")

    flags = []
    if spec.kappa < KAPPA_FLOOR:
        flags.append(f"kappa={spec.kappa:.3e} < {KAPPA_FLOOR:g}: outside the validated regime")
    floor = minimal_ladder_start(spec)
    if N0 < floor:
        logger.warning("N0=%g is below 2*Lambda + kappa0*mu(Z) = %g", N0, floor)
        flags.append(f"N0={N0:g} below 2*Lambda + kappa0*mu(Z) = {floor:g}")

    t_limit = T - delta
    ladder = [N0]
    deltas: List[float] = []
    previous = solve_finite(spec, N0, grid, upwind=upwind)
    converged = math.isinf(tol)
    while not converged:
        if len(ladder) >= max_rungs:
            raise ConvergenceError(
                f"N-ladder did not reach tol={tol:g} within {max_rungs} rungs "
                f"(last relative delta {deltas[-1] if deltas else float('nan'):.3e})")
        N = ladder[-1] * 2.0
        current = solve_finite(spec, N, grid, upwind=upwind)
        old = previous.node_values(t_limit)
        new = current.node_values(t_limit)
        drop = float((old - new).max())
        if drop > MONOTONE_TOLERANCE:
            raise SchemeError(f"N-monotonicity violated: u^{N:g} below u^{N / 2:g} by {drop:.3e}")
        rel = float(np.max(np.abs(new - old) / np.maximum(old, np.finfo(float).tiny)))
        ladder.append(N)
        deltas.append(rel)
        logger.debug("rung %d: N=%g relative delta %.6e", len(ladder) - 1, N, rel)
        previous = current
        converged = rel < tol

    singular = previous.restricted(t_limit, delta)
    report = SingularSolveReport(ladder=ladder, deltas=deltas, field=singular, delta=delta,
                                 tol=tol, converged=converged, flags=flags)
    report.barrier = check_barriers(singular, barriers(spec), delta)
    if deltas and not report.deltas_decreasing:
        report.flags.append("ladder deltas are not strictly decreasing")
    logger.info("singular solve finished after %d rung(s)", len(ladder))
    return report


@dataclass
class ComparisonReport:
    passed: bool
    worst_margin: float
    identical: bool
    N: float

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"comparison {status}: min(u_high - u_low) = {self.worst_margin:+.4e}"
                f"{' (identical fields)' if self.identical else ''}")


def _atoms_by_id(spec: ModelSpec) -> Dict[int, object]:
    return {atom.z_id: atom for atom in spec.dark_pool}


def verify_domination(spec_low: ModelSpec, spec_high: ModelSpec) -> None:
    """
    Establish analytically that spec_high dominates spec_low in (lambda, gamma, eta)
    with identical b, sigma, sigma_bar, atom weights and horizon.

    Raises:
        ComparisonError: If the precondition fails or cannot be decided
    """
    for name in ("b", "sigma", "sigma_bar"):
        if getattr(spec_low, name) != getattr(spec_high, name):
            raise ComparisonError(f"models differ in '{name}'; comparison needs identical dynamics")
    if spec_low.T != spec_high.T:
        raise ComparisonError("models have different horizons")
    checks = [("lambda", spec_high.lam, spec_low.lam), ("eta", spec_high.eta, spec_low.eta)]
    low_atoms, high_atoms = _atoms_by_id(spec_low), _atoms_by_id(spec_high)
    if set(low_atoms) != set(high_atoms):
        raise ComparisonError("models have different dark-pool atoms")
    for z_id, atom_low in low_atoms.items():
        atom_high = high_atoms[z_id]
        if atom_low.mu != atom_high.mu:
            raise ComparisonError(f"atom {z_id} has different weights")
        checks.append((f"gamma[{z_id}]", atom_high.gamma, atom_low.gamma))
    for name, high, low in checks:
        verdict = high.dominates(low)
        if verdict is None:
            raise ComparisonError(f"cannot establish {name}_high >= {name}_low analytically")
        if verdict is False:
            raise ComparisonError(f"{name}_high does not dominate {name}_low")


def check_comparison(spec_low: ModelSpec, spec_high: ModelSpec, N: float, grid: Grid1D,
                     upwind: bool = True, slack: float = COMPARISON_SLACK) -> ComparisonReport:
    """
    Solve both models at terminal level N and check u_high >= u_low - slack nodewise.

    Raises:
        ComparisonError: If domination cannot be established
    """
    verify_domination(spec_low, spec_high)
    low = solve_finite(spec_low, N, grid, upwind=upwind)
    high = solve_finite(spec_high, N, grid, upwind=upwind)
    margin = float((high.values - low.values).min())
    report = ComparisonReport(passed=margin >= -slack, worst_margin=margin,
                              identical=bool(np.array_equal(high.values, low.values)), N=float(N))
    if not report.passed:
        logger.warning(report.summary())
    return report


@dataclass
class EnvelopeReport:
    passed: bool
    lower_margin: float
    upper_margin: float

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"envelopes {status}: min(u - u_bar) = {self.lower_margin:+.4e}, "
                f"min(u_tilde - u) = {self.upper_margin:+.4e}")


def check_envelopes(spec: ModelSpec, field_: ValueField, slack: float = COMPARISON_SLACK
                    ) -> EnvelopeReport:
    """
    Check u_bar_N <= u <= u_tilde_N nodewise for a finite-N field, the
    envelopes taken with the model's kappa0, mu(Z) and Lambda.
    """
    if field_.singular:
        raise ValueError("envelope bracketing applies to finite-N fields")
    times = field_.times[:, None]
    low = u_bar_N(spec.kappa0, spec.mu_total, field_.N, spec.T, times)
    high = u_tilde_N(spec.Lambda, field_.N, spec.T, times)
    lower_margin = float((field_.values - low).min())
    upper_margin = float((high - field_.values).min())
    return EnvelopeReport(lower_margin >= -slack and upper_margin >= -slack,
                          lower_margin, upper_margin)


def check_uhat_dominance(spec: ModelSpec, field_: ValueField, shift: float,
                         tolerance: float = 1e-3) -> Tuple[bool, float]:
    """
    Check u <= Lambda coth(T - shift - t) (1 + tolerance) on t < T - shift.

    Returns:
        (passed, max of u / u_hat_shifted)
    """
    t_limit = spec.T - shift
    values = field_.node_values(t_limit)
    times = field_.times[: values.shape[0]]
    mask = times < t_limit - 1e-12
    if not np.any(mask):
        return True, 0.0
    bound = np.asarray(u_hat_shifted(spec.Lambda, spec.T, times[mask], shift))[:, None]
    ratio = float((values[mask] / bound).max())
    return ratio <= 1.0 + tolerance, ratio


def value_at(field_: ValueField, t: float, y: float, x: float) -> float:
    """
    V(t, y, x) = u(t, y) x^2.

    Raises:
        ValueError: If t lies outside the field's time range
    """
    return float(field_.interpolate(t, y)) * x * x
