"""
Property suites run by the verify command.

Each suite returns a status and a worst margin: the smallest slack left by
the property over every node, path or pair it looked at (negative on failure).
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import RunConfig
from managers.model_loader import preset_model
from model.coefficients import CoefficientField, DarkPoolAtom, DarkPoolMeasure
from model.model_spec import ModelSpec
from simulation.checks import check_state_decay, ensemble_admissibility_estimate
from simulation.liquidation_sim import monotonize_control, simulate_trajectories
from simulation.policies import ValueSource, random_custom_policy
from solvers.closed_form import barriers, closed_form_for, riccati_solve, u_bar_N, u_hat, u_tilde_N
from solvers.pde_solver import (COMPARISON_SLACK, MONOTONE_TOLERANCE, SingularSolveReport,
                                check_comparison, solve_finite, solve_finite_terminal,
                                solve_singular)
from solvers.value_field import FieldValue, Grid1D
from utils.errors import SingularHJBError

logger = logging.getLogger(__name__)

ORACLE_TOLERANCE = 1e-3
ODE_TOLERANCE = 1e-8
M_TOLERANCE = 1e-10
SINGULAR_TOLERANCE = 1e-3
DOMINANCE_SLACK = 1e-12


@dataclass
class SuiteResult:
    suite: str
    passed: bool
    worst_margin: float
    detail: str = ""

    @property
    def status(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> Dict[str, Any]:
        margin = self.worst_margin if np.isfinite(self.worst_margin) else None
        return {"suite": self.suite, "status": self.status, "worst_margin": margin,
                "detail": self.detail}


class VerificationContext:
    """Shared inputs of one verify run; the singular solve is done at most once."""

    def __init__(self, run: RunConfig):
        self.run = run
        self.spec: ModelSpec = run.spec
        self.grid: Grid1D = run.build_grid()
        self.upwind = run.grid.upwind
        self._singular: Optional[SingularSolveReport] = None

    def singular_report(self) -> SingularSolveReport:
        if self._singular is None:
            s = self.run.singular
            self._singular = solve_singular(self.spec, self.grid, delta=s.delta, tol=s.tol,
                                            N0=s.N0, upwind=self.upwind,
                                            max_rungs=s.max_rungs)
        return self._singular

    def value_source(self) -> ValueSource:
        """Closed form for presets, else the solved singular field."""
        if self.run.model.closed_form:
            return closed_form_for(self.spec, self.run.model.closed_form)
        return FieldValue(self.singular_report().field)

    @property
    def x0(self) -> float:
        return abs(self.run.mc.x0) or 1.0


class Suite:
    def __init__(self, name: str, description: str,
                 runner: Callable[[VerificationContext], SuiteResult]):
        self.name = name
        self.description = description
        self.runner = runner

    def run(self, context: VerificationContext) -> SuiteResult:
        """Run the suite; package faults become a failed result."""
        try:
            result = self.runner(context)
        except SingularHJBError as e:
            logger.warning("suite %s raised %s: %s", self.name, type(e).__name__, e)
            return SuiteResult(self.name, False, float("-inf"), f"{type(e).__name__}: {str(e)}")
        logger.info("suite %s: %s (worst margin %.3e)", self.name, result.status, result.worst_margin)
        return result


def envelope_models(spec: ModelSpec) -> Tuple[ModelSpec, ModelSpec]:
    """The (Lambda, +inf, Lambda) and (0, 0, kappa0) models with the constants of spec."""
    kwargs = dict(Lambda=spec.Lambda, kappa0=spec.kappa0, mu=spec.mu_total, T=spec.T)
    return (preset_model("envelope_upper", **kwargs).spec,
            preset_model("envelope_lower", **kwargs).spec)


def _max_relative(values: np.ndarray, reference: np.ndarray) -> float:
    return float(np.max(np.abs(values - reference) / np.abs(reference)))


def run_oracle(context: VerificationContext) -> SuiteResult:
    """Finite-N solves against the envelope closed forms and the Riccati oracle."""
    spec = context.spec
    verify = context.run.verify
    grid = context.grid.with_dt(verify.oracle_dt)
    times = grid.times
    upper, lower = envelope_models(spec)
    pde_error = 0.0
    ode_error = 0.0
    for N in verify.oracle_N:
        exact_upper = np.asarray(u_tilde_N(upper.Lambda, N, spec.T, times))
        exact_lower = np.asarray(u_bar_N(lower.kappa0, lower.mu_total, N, spec.T, times))
        pde_error = max(pde_error,
                        _max_relative(solve_finite(upper, N, grid, context.upwind).values,
                                      exact_upper[:, None]),
                        _max_relative(solve_finite(lower, N, grid, context.upwind).values,
                                      exact_lower[:, None]))
        ode_error = max(ode_error,
                        _max_relative(riccati_solve(upper, N, times).values[::-1], exact_upper),
                        _max_relative(riccati_solve(lower, N, times).values[::-1], exact_lower))
        if spec.is_y_independent():
            oracle = riccati_solve(spec, N, times).values[::-1]
            pde_error = max(pde_error, _max_relative(solve_finite(spec, N, grid, context.upwind).values,
                                                     oracle[:, None]))
    margin = min(ORACLE_TOLERANCE - pde_error, ODE_TOLERANCE - ode_error)
    detail = f"max rel error PDE {pde_error:.3e}, ODE {ode_error:.3e}"
    return SuiteResult("oracle", margin >= 0.0, margin, detail)


def run_m_independence(context: VerificationContext) -> SuiteResult:
    spec = context.spec
    N = context.run.verify.N
    level = N + spec.Lambda * spec.T
    near = solve_finite_terminal(spec, N, level + 1.0, context.grid, context.upwind)
    far = solve_finite_terminal(spec, N, 10.0 * level, context.grid, context.upwind)
    diff = float(np.abs(near.values - far.values).max())
    return SuiteResult("m_independence", diff <= M_TOLERANCE, M_TOLERANCE - diff,
                       f"sup |u_M1 - u_M2| = {diff:.3e} at N={N:g}")


def run_n_monotonicity(context: VerificationContext) -> SuiteResult:
    N = context.run.verify.N
    levels = [N * 2.0 ** k for k in range(4)]
    fields = [solve_finite(context.spec, n, context.grid, context.upwind) for n in levels]
    worst = min(float((high.values - low.values).min()) for low, high in zip(fields, fields[1:]))
    margin = worst + MONOTONE_TOLERANCE
    return SuiteResult("n_monotonicity", margin >= 0.0, margin,
                       f"min(u^2N - u^N) = {worst:+.3e} over N in {levels}")


def _shifted(coeff: CoefficientField, amount: float) -> CoefficientField:
    if coeff.is_infinite:
        return coeff
    return CoefficientField(coeff.family, coeff.base + amount, coeff.amplitude, coeff.slope)


def comparison_pairs(spec: ModelSpec, count: int) -> List[Tuple[str, ModelSpec, ModelSpec]]:
    """
    (label, low, high) pairs where high dominates low in (lambda, gamma, eta).

    The first pair is the identical one; the second floors lambda at its
    infimum, which is where a scheme without upwinding breaks down first.
    """
    pairs = [("identical", spec, spec),
             ("lambda floored", spec.replace(lam=CoefficientField.constant(spec.lam.lower_bound())), spec)]
    if spec.eta.lower_bound() > 0.0:
        pairs.append(("eta floored",
                      spec.replace(eta=CoefficientField.constant(spec.eta.lower_bound())), spec))
    k = 0
    while len(pairs) < count:
        k += 1
        amount = 0.1 * k
        choice = k % 3
        if choice == 1:
            high = spec.replace(lam=_shifted(spec.lam, amount))
            label = f"lambda +{amount:.1f}"
        elif choice == 2:
            high = spec.replace(eta=_shifted(spec.eta, amount))
            label = f"eta +{amount:.1f}"
        else:
            atoms = tuple(DarkPoolAtom(a.z_id, _shifted(a.gamma, amount), a.mu) for a in spec.dark_pool)
            high = spec.replace(lam=_shifted(spec.lam, amount), eta=_shifted(spec.eta, amount),
                                dark_pool=DarkPoolMeasure(atoms))
            label = f"all +{amount:.1f}"
        pairs.append((label, spec, high))
    return pairs[:count]


def run_comparison(context: VerificationContext) -> SuiteResult:
    N = context.run.verify.N
    worst = float("inf")
    failures = []
    for label, low, high in comparison_pairs(context.spec, context.run.verify.comparison_pairs):
        try:
            report = check_comparison(low, high, N, context.grid, upwind=context.upwind)
        except SingularHJBError as e:
            failures.append(f"{label}: {type(e).__name__}: {str(e)}")
            worst = float("-inf")
            continue
        margin = report.worst_margin + COMPARISON_SLACK
        if label == "identical" and not report.identical:
            failures.append("identical models gave different fields")
            margin = min(margin, -abs(report.worst_margin))
        elif not report.passed:
            failures.append(f"{label}: {report.summary()}")
        worst = min(worst, margin)
    detail = "; ".join(failures) if failures else f"all pairs dominated at N={N:g}"
    return SuiteResult("comparison", not failures, worst, detail)


def run_barriers(context: VerificationContext) -> SuiteResult:
    report = context.singular_report()
    barrier = report.barrier
    margin = min(barrier.lower_margin, barrier.upper_margin)
    passed = barrier.passed and report.deltas_decreasing
    notes = [barrier.summary(), f"{len(report.ladder)} rung(s)"]
    if not report.deltas_decreasing:
        notes.append("ladder deltas not strictly decreasing")
    if context.run.model.closed_form == "u_hat":
        singular = report.field
        exact = np.asarray(u_hat(context.spec.Lambda, context.spec.T, singular.times))[:, None]
        error = _max_relative(singular.values, exact)
        margin = min(margin, SINGULAR_TOLERANCE - error)
        passed = passed and error < SINGULAR_TOLERANCE
        notes.append(f"max rel error vs Lambda coth(T-t) {error:.3e}")
    return SuiteResult("barriers", passed, margin, "; ".join(notes))


def run_decay(context: VerificationContext) -> SuiteResult:
    spec = context.spec
    mc = context.run.mc
    pair = barriers(spec)
    paths = context.run.verify.paths
    trajectories = simulate_trajectories(spec, context.value_source(), context.x0, mc.y0,
                                         context.grid, "feedback", mc.seed, range(paths))
    reports = [check_state_decay(tr, spec, pair) for tr in trajectories]
    failed = sum(1 for r in reports if not r.passed)
    worst_ratio = max(r.worst_ratio for r in reports)
    return SuiteResult("decay", failed == 0, 1.0 - worst_ratio,
                       f"{failed}/{paths} path(s) failed, worst |x|/bound {worst_ratio:.4f}")


def run_monotonization(context: VerificationContext) -> SuiteResult:
    spec = context.spec
    mc = context.run.mc
    paths = context.run.verify.paths
    worst = float("inf")
    violations = 0
    monotone = []
    for i in range(paths):
        policy = random_custom_policy(mc.seed, i, spec.T)
        result = monotonize_control(spec, policy, context.x0, context.grid, mc.seed, i, mc.y0)
        slack = result.raw_cost.total + DOMINANCE_SLACK - result.monotone_cost.total
        worst = min(worst, slack)
        violations += slack < 0.0
        monotone.append(result.monotone)
    estimate = ensemble_admissibility_estimate(monotone, spec)
    margin = min(worst, estimate.threshold - estimate.c_hat)
    detail = f"{violations}/{paths} cost violation(s); {estimate.summary()}"
    return SuiteResult("monotonization", violations == 0 and not estimate.flagged, margin, detail)


def register_suites() -> List[Suite]:
    """
    Register the verification suites in their run order.

    Returns:
        List of suites
    """
    return [
        Suite("oracle", "finite-N solves vs envelope closed forms and the Riccati oracle", run_oracle),
        Suite("m_independence", "truncation level M above N + Lambda T leaves the field unchanged",
              run_m_independence),
        Suite("n_monotonicity", "u^N is nondecreasing in N", run_n_monotonicity),
        Suite("comparison", "dominated coefficients give dominated fields", run_comparison),
        Suite("barriers", "singular field between c0/(T-t) and c1/(T-t)", run_barriers),
        Suite("decay", "feedback inventory decays at least like ((T-t)/T)^(c0/Lambda)", run_decay),
        Suite("monotonization", "monotonized controls cost no more than raw ones", run_monotonization),
    ]


def run_suites(context: VerificationContext, names: Sequence[str]) -> List[SuiteResult]:
    """Run the selected suites in registration order."""
    selected = set(names)
    return [suite.run(context) for suite in register_suites() if suite.name in selected]
