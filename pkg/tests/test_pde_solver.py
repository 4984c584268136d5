"""
Tests for the finite-difference solver, the singular N-ladder, the comparison
check, value-field storage and the refinement studies.
"""

import io
import math
import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from managers.model_loader import load_model
from model.coefficients import CoefficientField, DarkPoolAtom, DarkPoolMeasure
from model.model_spec import ModelSpec
from solvers.closed_form import BarrierPair, riccati_solve, u_bar_N, u_hat, u_tilde_N
from solvers.convergence import (domain_study, observed_orders, spatial_study, temporal_study,
                                 write_rows)
from solvers.pde_solver import (check_barriers, check_comparison, check_envelopes,
                                check_uhat_dominance, minimal_ladder_start, solve_finite,
                                solve_finite_terminal, solve_singular, value_at,
                                verify_domination)
from solvers.value_field import FIELD_MAGIC, FieldValue, Grid1D, ValueField
from utils.errors import (AssumptionError, ComparisonError, ConvergenceError, FieldFormatError,
                          SchemeError)

MODELS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "models")


def benchmark_spec():
    return ModelSpec.constant(lam=1.0, eta=1.0, sigma_bar=1.0)


def lower_envelope_spec(mu=1.0):
    pool = DarkPoolMeasure((DarkPoolAtom(0, CoefficientField.constant(0.0), mu),))
    return ModelSpec.constant(lam=0.0, eta=1.0, sigma_bar=1.0, dark_pool=pool, lambda_override=1.0)


def factor_spec():
    pool = DarkPoolMeasure((DarkPoolAtom(0, CoefficientField.constant(2.0), 0.5),
                            DarkPoolAtom(1, CoefficientField.constant(math.inf), 0.25)))
    return ModelSpec(b=CoefficientField.tanh_affine(0.0, 0.5, 1.0),
                     sigma=CoefficientField.constant(0.2),
                     sigma_bar=CoefficientField.constant(1.0),
                     eta=CoefficientField.bounded_sin(1.5, 0.5, 1.0),
                     lam=CoefficientField.tanh_affine(1.0, 0.5, 2.0),
                     dark_pool=pool)


def driftless_spec():
    return ModelSpec.constant(lam=1.0, eta=1.0, sigma_bar=1.0).replace(
        lam=CoefficientField.tanh_affine(1.0, 0.5, 2.0))


def drift_control_specs():
    high = ModelSpec(b=CoefficientField.constant(-5.0),
                     sigma=CoefficientField.constant(0.0),
                     sigma_bar=CoefficientField.constant(0.1),
                     eta=CoefficientField.constant(1.0),
                     lam=CoefficientField.tanh_affine(0.5, 0.5, 10.0))
    low = high.replace(lam=CoefficientField.constant(high.lam.lower_bound()))
    return low, high


class TestGrid(unittest.TestCase):

    def test_nodes(self):
        grid = Grid1D(-1.0, 1.0, 5, 0.25, 1.0)
        self.assertEqual(grid.n_t, 4)
        self.assertEqual(grid.dy, 0.5)
        np.testing.assert_array_equal(grid.ys, [-1.0, -0.5, 0.0, 0.5, 1.0])
        np.testing.assert_array_equal(grid.times, [0.0, 0.25, 0.5, 0.75, 1.0])
        self.assertEqual(grid.with_n_y(9).dy, 0.25)

    def test_invalid(self):
        with self.assertRaises(ValueError):
            Grid1D(1.0, -1.0, 5, 0.1, 1.0)
        with self.assertRaises(ValueError):
            Grid1D(-1.0, 1.0, 2, 0.1, 1.0)
        with self.assertRaises(ValueError):
            Grid1D(-1.0, 1.0, 5, 0.3, 1.0)


class TestFiniteSolve(unittest.TestCase):

    def test_upper_envelope_accuracy(self):
        grid = Grid1D(-1.0, 1.0, 5, 1e-3, 1.0)
        for N in (1.0, 10.0, 100.0):
            field_ = solve_finite(benchmark_spec(), N, grid)
            exact = u_tilde_N(1.0, N, 1.0, grid.times)[:, None]
            error = float(np.max(np.abs(field_.values - exact) / exact))
            self.assertLess(error, 1e-3, msg=f"N={N}")

    def test_lower_envelope_accuracy(self):
        grid = Grid1D(-1.0, 1.0, 5, 1e-3, 1.0)
        for N in (1.0, 10.0):
            field_ = solve_finite(lower_envelope_spec(), N, grid)
            exact = u_bar_N(1.0, 1.0, N, 1.0, grid.times)[:, None]
            error = float(np.max(np.abs(field_.values - exact) / exact))
            self.assertLess(error, 1e-3, msg=f"N={N}")

    def test_matches_riccati_oracle_on_constant_models(self):
        grid = Grid1D(-1.0, 1.0, 5, 1e-3, 1.0)
        rng = np.random.default_rng(7)
        for i in range(5):
            venue = DarkPoolMeasure((DarkPoolAtom(0, CoefficientField.constant(rng.uniform(0.5, 2.0)),
                                                  rng.uniform(0.1, 0.5)),))
            spec = ModelSpec.constant(lam=rng.uniform(0.5, 1.5), eta=rng.uniform(0.5, 1.5),
                                      sigma_bar=1.0, dark_pool=venue)
            N = rng.uniform(1.0, 10.0)
            oracle = riccati_solve(spec, N, grid.times).values[::-1]
            field_ = solve_finite(spec, N, grid)
            error = float(np.max(np.abs(field_.values - oracle[:, None]) / oracle[:, None]))
            self.assertLess(error, 1e-3, msg=f"model {i}, N={N:.3f}")

    def test_zero_problem(self):
        spec = ModelSpec.constant(lam=0.0, eta=1.0, sigma_bar=1.0)
        field_ = solve_finite(spec, 0.0, Grid1D(-1.0, 1.0, 5, 0.05, 1.0))
        np.testing.assert_array_equal(field_.values, 0.0)

    def test_bounds(self):
        spec = factor_spec()
        field_ = solve_finite(spec, 10.0, Grid1D(-2.0, 2.0, 21, 0.01, 1.0))
        self.assertGreaterEqual(float(field_.values.min()), 0.0)
        self.assertLessEqual(float(field_.values.max()), 10.0 + spec.Lambda * spec.T)
        np.testing.assert_array_equal(field_.values[-1], 10.0)

    def test_truncation_is_inactive_above_the_bound(self):
        spec = driftless_spec()
        self.assertEqual(spec.Lambda, 1.5)
        grid = Grid1D(-2.0, 2.0, 21, 0.01, 1.0)
        level = 10.0 + spec.Lambda
        small = solve_finite_terminal(spec, 10.0, level + 1.0, grid)
        large = solve_finite_terminal(spec, 10.0, 10.0 * level, grid)
        np.testing.assert_array_equal(small.values, large.values)
        truncated = solve_finite_terminal(spec, 10.0, 1.0, grid)
        self.assertTrue(np.all(truncated.values >= small.values))

    def test_monotone_in_N(self):
        spec = factor_spec()
        grid = Grid1D(-2.0, 2.0, 21, 0.01, 1.0)
        previous = None
        for k in range(4):
            field_ = solve_finite(spec, 2.0 ** k, grid)
            if previous is not None:
                self.assertGreaterEqual(float((field_.values - previous.values).min()), -1e-12)
            previous = field_

    def test_bracketed_by_envelopes(self):
        spec = factor_spec()
        field_ = solve_finite(spec, 10.0, Grid1D(-1.0, 1.0, 21, 0.01, 1.0))
        report = check_envelopes(spec, field_)
        self.assertTrue(report.passed, report.summary())

    def test_below_the_singular_solution(self):
        field_ = solve_finite(benchmark_spec(), 10.0, Grid1D(-1.0, 1.0, 5, 0.01, 1.0))
        passed, ratio = check_uhat_dominance(benchmark_spec(), field_, 0.0)
        self.assertTrue(passed)
        self.assertLess(ratio, 1.0)

    def test_invalid_arguments(self):
        grid = Grid1D(-1.0, 1.0, 5, 0.1, 1.0)
        with self.assertRaises(ValueError):
            solve_finite(benchmark_spec(), -1.0, grid)
        with self.assertRaises(ValueError):
            solve_finite_terminal(benchmark_spec(), 1.0, 0.0, grid)
        with self.assertRaises(AssumptionError):
            solve_finite(ModelSpec.constant(lam=1.0, eta=1.0, sigma_bar=0.0), 1.0, grid)


class TestSingularSolve(unittest.TestCase):

    def test_benchmark(self):
        spec = benchmark_spec()
        grid = Grid1D(-1.0, 1.0, 5, 1e-3, 1.0)
        report = solve_singular(spec, grid, tol=1e-4)
        self.assertTrue(report.converged)
        self.assertTrue(report.deltas_decreasing)
        self.assertTrue(report.barrier.passed, report.barrier.summary())
        self.assertAlmostEqual(report.ladder[0], 160.0)
        self.assertLess(report.deltas[-1], 1e-4)

        field_ = report.field
        self.assertTrue(field_.singular)
        self.assertAlmostEqual(field_.t_max, 0.95)
        exact = np.asarray(u_hat(1.0, 1.0, field_.times))[:, None]
        self.assertLess(float(np.max(np.abs(field_.values - exact) / exact)), 1e-3)
        self.assertIn("deltas decreasing: yes", report.summary())

    def test_factor_dependent_models_pass_the_barriers(self):
        grid = Grid1D(-2.0, 2.0, 21, 2e-3, 1.0)
        venue = DarkPoolMeasure((DarkPoolAtom(0, CoefficientField.tanh_affine(1.0, 0.5, 1.0), 0.5),))
        models = {
            "factor": factor_spec(),
            "driftless": driftless_spec(),
            "sin impact": driftless_spec().replace(eta=CoefficientField.bounded_sin(1.5, 0.5, 1.0)),
            "factor venue": factor_spec().replace(dark_pool=venue),
            "tanh_lambda.toml": load_model(os.path.join(MODELS_DIR, "tanh_lambda.toml")).spec,
        }
        for name, spec in models.items():
            with self.subTest(model=name):
                self.assertFalse(spec.is_y_independent())
                report = solve_singular(spec, grid, tol=1e-4)
                self.assertTrue(report.converged)
                self.assertTrue(report.deltas_decreasing, report.deltas)
                self.assertTrue(report.barrier.passed, report.barrier.summary())
                self.assertEqual(report.barrier.violations, 0)

    def test_single_rung(self):
        spec = benchmark_spec()
        grid = Grid1D(-1.0, 1.0, 5, 0.01, 1.0)
        report = solve_singular(spec, grid, tol=math.inf)
        self.assertEqual(len(report.ladder), 1)
        self.assertAlmostEqual(report.ladder[0], 160.0)
        self.assertEqual(report.deltas, [])
        expected = solve_finite(spec, report.ladder[0], grid).node_values(0.95)
        np.testing.assert_array_equal(report.field.values, expected)

    def test_ladder_budget(self):
        grid = Grid1D(-1.0, 1.0, 5, 0.05, 1.0)
        with self.assertRaises(ConvergenceError):
            solve_singular(benchmark_spec(), grid, tol=1e-14, max_rungs=2)

    def test_invalid_arguments(self):
        grid = Grid1D(-1.0, 1.0, 5, 0.05, 1.0)
        with self.assertRaises(ValueError):
            solve_singular(benchmark_spec(), grid, delta=1.0)
        with self.assertRaises(ValueError):
            solve_singular(benchmark_spec(), grid, tol=0.0)

    def test_low_first_rung_is_flagged(self):
        grid = Grid1D(-1.0, 1.0, 5, 0.05, 1.0)
        spec = lower_envelope_spec(mu=2.0)
        self.assertEqual(minimal_ladder_start(spec), 4.0)
        report = solve_singular(spec, grid, tol=math.inf, N0=1.0)
        self.assertTrue(any("N0=1" in flag for flag in report.flags))


class TestBarrierCheck(unittest.TestCase):

    def test_every_node_above_the_upper_barrier(self):
        grid = Grid1D(-1.0, 1.0, 5, 0.05, 1.0)
        pair = BarrierPair(c0=1.0, c1=math.exp(2.0), T=1.0)
        times = grid.times[:20]
        values = np.repeat((10.0 * pair.c1 / (1.0 - times))[:, None], 5, axis=1)
        report = check_barriers(ValueField(grid, values, None, 0.05), pair, 0.05)
        self.assertFalse(report.passed)
        self.assertEqual(report.violations, report.nodes)
        self.assertEqual(report.nodes, 100)
        self.assertLess(report.upper_margin, 0.0)

    def test_inside_the_barriers(self):
        grid = Grid1D(-1.0, 1.0, 5, 0.05, 1.0)
        pair = BarrierPair(c0=1.0, c1=2.0, T=1.0)
        times = grid.times[:20]
        values = np.repeat((1.5 / (1.0 - times))[:, None], 5, axis=1)
        report = check_barriers(ValueField(grid, values, None, 0.05), pair, 0.05)
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report.lower_margin, 0.5 + 0.02)


class TestComparison(unittest.TestCase):

    def setUp(self):
        self.grid = Grid1D(-1.0, 1.0, 11, 0.01, 1.0)

    def test_higher_risk_aversion(self):
        low = ModelSpec.constant(lam=1.0, eta=1.0, sigma_bar=1.0)
        high = ModelSpec.constant(lam=1.5, eta=1.0, sigma_bar=1.0)
        report = check_comparison(low, high, 5.0, self.grid)
        self.assertTrue(report.passed)
        self.assertGreater(report.worst_margin, 0.0)
        self.assertFalse(report.identical)

    def test_identical_models(self):
        spec = factor_spec()
        report = check_comparison(spec, spec, 5.0, self.grid)
        self.assertTrue(report.identical)
        self.assertEqual(report.worst_margin, 0.0)

    def test_slippage_domination(self):
        def with_gamma(gamma):
            pool = DarkPoolMeasure((DarkPoolAtom(0, CoefficientField.constant(gamma), 1.0),))
            return ModelSpec.constant(lam=1.0, eta=1.0, sigma_bar=1.0, dark_pool=pool)
        report = check_comparison(with_gamma(0.0), with_gamma(math.inf), 5.0, self.grid)
        self.assertTrue(report.passed)

    def test_domination_must_be_provable(self):
        low = ModelSpec.constant(lam=2.0, eta=1.0, sigma_bar=1.0)
        high = ModelSpec.constant(lam=1.0, eta=1.0, sigma_bar=1.0)
        with self.assertRaises(ComparisonError):
            verify_domination(low, high)
        with self.assertRaises(ComparisonError):
            verify_domination(low, low.replace(b=CoefficientField.constant(0.5)))
        undecidable = low.replace(lam=CoefficientField.bounded_sin(1.0, 0.5, 1.0))
        with self.assertRaises(ComparisonError):
            verify_domination(undecidable.replace(lam=CoefficientField.tanh_affine(1.0, 0.5, 1.0)),
                              undecidable)

    def test_upwinding_keeps_comparison_under_strong_drift(self):
        low, high = drift_control_specs()
        grid = Grid1D(-2.0, 2.0, 41, 0.01, 1.0)
        self.assertTrue(check_comparison(low, high, 5.0, grid, upwind=True).passed)

    def test_central_differences_break_comparison(self):
        low, high = drift_control_specs()
        grid = Grid1D(-2.0, 2.0, 41, 0.01, 1.0)
        try:
            report = check_comparison(low, high, 5.0, grid, upwind=False)
        except SchemeError:
            return
        self.assertFalse(report.passed)
        self.assertLess(report.worst_margin, -1e-6)


class TestValueField(unittest.TestCase):

    def setUp(self):
        self.grid = Grid1D(-1.0, 1.0, 5, 0.25, 1.0)

    def test_value_at(self):
        field_ = ValueField(self.grid, np.full((5, 5), 1.0 / math.tanh(1.0)), 3.0)
        self.assertAlmostEqual(value_at(field_, 0.0, 0.0, 2.0), 5.252141, places=6)
        self.assertAlmostEqual(value_at(field_, 0.3, 0.2, -2.0), 5.252141, places=6)
        self.assertEqual(value_at(field_, 0.0, 0.0, 0.0), 0.0)

    def test_outside_the_time_range(self):
        field_ = ValueField(self.grid, np.ones((4, 5)), None, 0.25)
        with self.assertRaises(ValueError):
            field_.interpolate(0.9, 0.0)

    def test_interpolation_is_clamped_in_y(self):
        values = np.tile(np.arange(5.0), (5, 1))
        field_ = ValueField(self.grid, values, 1.0)
        self.assertEqual(float(field_.interpolate(0.0, 5.0)), 4.0)
        self.assertEqual(float(field_.interpolate(0.0, -0.25)), 1.5)

    def test_binary_dump(self):
        values = np.arange(20.0).reshape(4, 5) + 1.0
        field_ = ValueField(self.grid, values, None, 0.25)
        data = field_.to_bytes()
        self.assertTrue(data.startswith(FIELD_MAGIC))
        loaded = ValueField.from_bytes(data)
        self.assertEqual(loaded.grid, self.grid)
        self.assertIsNone(loaded.N)
        self.assertEqual(loaded.delta, 0.25)
        np.testing.assert_array_equal(loaded.values, values)
        self.assertEqual(ValueField.from_bytes(ValueField(self.grid, values, 7.0).to_bytes()).N, 7.0)

    def test_corrupt_dumps(self):
        data = ValueField(self.grid, np.ones((5, 5)), 1.0).to_bytes()
        with self.assertRaises(FieldFormatError):
            ValueField.from_bytes(b"XXXX" + data[4:])
        with self.assertRaises(FieldFormatError):
            ValueField.from_bytes(data[:-8])
        with self.assertRaises(FieldFormatError):
            ValueField.from_bytes(data[:10])

    def test_csv(self):
        stream = io.StringIO()
        ValueField(self.grid, np.ones((2, 5)), None, 0.75).write_csv(stream)
        lines = stream.getvalue().splitlines()
        self.assertEqual(lines[0], "t,y,u")
        self.assertEqual(len(lines), 11)

    def test_singular_layer_continuation(self):
        values = np.repeat((2.0 / (1.0 - self.grid.times[:4]))[:, None], 5, axis=1)
        source = FieldValue(ValueField(self.grid, values, None, 0.25))
        self.assertAlmostEqual(float(source.evaluate(0.9, 0.0)), 2.0 / 0.1)
        self.assertAlmostEqual(float(source.step_mean(0.0, 0.25, 0.0)), 0.5 * (2.0 + 2.0 / 0.75))
        # exact mean of 2/(1-t) over [0.8, 0.9]
        self.assertAlmostEqual(float(source.step_mean(0.8, 0.9, 0.0)), 2.0 * math.log(2.0) / 0.1)
        with self.assertRaises(ValueError):
            source.step_mean(0.75, 1.0, 0.0)


class TestConvergenceStudies(unittest.TestCase):

    def test_observed_orders(self):
        self.assertEqual(observed_orders([4.0, 2.0, 1.0]), [1.0, 1.0])
        self.assertEqual(observed_orders([4.0, 1.0]), [2.0])
        self.assertTrue(math.isnan(observed_orders([1.0, 0.0])[0]))

    def test_temporal_order_with_dark_pool(self):
        grid = Grid1D(-1.0, 1.0, 5, 0.01, 1.0)
        result = temporal_study(lower_envelope_spec(), 10.0, grid, [0.01, 0.005, 0.0025])
        self.assertEqual(len(result.rows), 3)
        self.assertAlmostEqual(result.orders[-1], 1.0, delta=0.2)

    def test_spatial_order(self):
        grid = Grid1D(-2.0, 2.0, 21, 0.01, 1.0)
        result = spatial_study(driftless_spec(), 10.0, grid, [21, 41, 81])
        self.assertEqual(len(result.orders), 1)
        self.assertAlmostEqual(result.orders[0], 2.0, delta=0.3)

    def test_spatial_refinements_must_nest(self):
        grid = Grid1D(-2.0, 2.0, 21, 0.01, 1.0)
        with self.assertRaises(ValueError):
            spatial_study(driftless_spec(), 10.0, grid, [21, 40])

    def test_domain_doubling(self):
        grid = Grid1D(-3.0, 3.0, 31, 0.01, 1.0)
        result = domain_study(driftless_spec(), 10.0, grid)
        self.assertLess(result.rows[0].error, 1e-4)
        with self.assertRaises(ValueError):
            domain_study(driftless_spec(), 10.0, grid.with_n_y(30))

    def test_rows_csv(self):
        grid = Grid1D(-1.0, 1.0, 5, 0.01, 1.0)
        result = temporal_study(lower_envelope_spec(), 5.0, grid, [0.01])
        stream = io.StringIO()
        write_rows(stream, [result])
        lines = stream.getvalue().splitlines()
        self.assertEqual(lines[0], "study,dt,dy,N,error")
        self.assertTrue(lines[1].startswith("temporal,0.01,0.5,5.0,"))


if __name__ == "__main__":
    unittest.main()
