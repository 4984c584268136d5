"""
Tests for the closed-form solutions, barrier constants and the Riccati oracle.
"""

import io
import math
import os
import sys
import unittest

import numpy as np
from scipy.integrate import quad

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from model.coefficients import CoefficientField, DarkPoolAtom, DarkPoolMeasure
from model.model_spec import ModelSpec
from solvers.closed_form import (ClosedFormValue, barriers, closed_form_for, residual_u_hat,
                                 riccati_solve, u_bar_limit, u_bar_N, u_hat, u_hat_shifted,
                                 u_tilde_N)
from utils.errors import AssumptionError


def lower_envelope_spec(kappa0=1.0, mu=1.0):
    pool = DarkPoolMeasure((DarkPoolAtom(0, CoefficientField.constant(0.0), mu),))
    return ModelSpec.constant(lam=0.0, eta=kappa0, sigma_bar=1.0, dark_pool=pool,
                              lambda_override=1.0)


class TestFormulas(unittest.TestCase):

    def test_u_hat(self):
        self.assertAlmostEqual(u_hat(1.0, 1.0, 0.0), 1.0 / math.tanh(1.0), places=12)
        self.assertAlmostEqual(u_hat(2.0, 1.0, 0.0), 2.626070, places=6)
        self.assertAlmostEqual(u_hat(1.0, 50.0, 0.0), 1.0, places=12)
        values = u_hat(1.0, 1.0, np.array([0.0, 0.5, 0.9]))
        self.assertTrue(np.all(np.diff(values) > 0.0))

    def test_u_hat_singular_at_terminal_time(self):
        with self.assertRaises(ValueError):
            u_hat(1.0, 1.0, 1.0)
        with self.assertRaises(ValueError):
            u_hat_shifted(1.0, 1.0, 0.0, 1.0)
        self.assertAlmostEqual(u_hat_shifted(1.0, 1.0, 0.0, 0.5), 1.0 / math.tanh(0.5))

    def test_u_hat_solves_its_equation(self):
        times = np.linspace(0.0, 0.5, 501)
        residuals = residual_u_hat(1.5, 1.0, times)
        self.assertLess(max(abs(r) for r in residuals), 1e-4)

    def test_u_tilde(self):
        self.assertEqual(u_tilde_N(1.0, 3.0, 1.0, 1.0), 3.0)
        # e^{-2(T-t)} = 1/2
        t = 1.0 - math.log(2.0) / 2.0
        self.assertAlmostEqual(u_tilde_N(1.0, 3.0, 1.0, t), 5.0 / 3.0, places=10)
        # N = Lambda is a fixed point
        self.assertAlmostEqual(u_tilde_N(2.0, 2.0, 1.0, 0.3), 2.0, places=12)
        self.assertAlmostEqual(u_tilde_N(1.0, 1e12, 1.0, 0.0), 1.0 / math.tanh(1.0), places=9)
        with self.assertRaises(ValueError):
            u_tilde_N(1.0, 0.0, 1.0, 0.5)

    def test_u_bar(self):
        self.assertEqual(u_bar_N(1.0, 1.0, 4.0, 1.0, 1.0), 4.0)
        # e^{-(T-t)} = 1/2
        t = 1.0 - math.log(2.0)
        self.assertAlmostEqual(u_bar_N(1.0, 1.0, 1.0, 1.0, t), 1.0 / 3.0, places=12)
        self.assertAlmostEqual(u_bar_N(2.0, 0.0, 3.0, 1.0, 0.5), 3.0 * 2.0 / (2.0 + 1.5), places=12)
        self.assertAlmostEqual(u_bar_N(1.0, 1.0, 1e12, 1.0, 0.2), u_bar_limit(1.0, 1.0, 1.0, 0.2),
                               places=8)
        self.assertAlmostEqual(u_bar_limit(2.0, 0.0, 1.0, 0.5), 4.0, places=12)

    def test_envelopes_are_ordered(self):
        times = np.linspace(0.0, 0.99, 50)
        for N in (1.0, 10.0, 100.0):
            low = u_bar_N(1.0, 1.0, N, 1.0, times)
            high = u_tilde_N(1.0, N, 1.0, times)
            self.assertTrue(np.all(low <= high))


    def test_envelopes_increase_with_N(self):
        times = np.linspace(0.0, 1.0, 51)
        levels = [2.0 ** k for k in range(11)]
        for values in (np.stack([u_tilde_N(1.5, N, 1.0, times) for N in levels]),
                       np.stack([u_bar_N(0.5, 2.0, N, 1.0, times) for N in levels]),
                       np.stack([u_bar_N(0.5, 0.0, N, 1.0, times) for N in levels])):
            self.assertTrue(np.all(np.diff(values, axis=0) >= 0.0))

    def test_u_hat_is_the_limit_of_u_tilde(self):
        times = np.linspace(0.0, 0.95, 20)
        exact = u_hat(1.0, 1.0, times)
        errors = [float(np.max(np.abs(u_tilde_N(1.0, N, 1.0, times) - exact) / exact))
                  for N in (10.0, 1e2, 1e4)]
        self.assertTrue(errors[0] > errors[1] > errors[2], errors)
        self.assertLess(errors[-1], 1e-2)

class TestBarriers(unittest.TestCase):

    def test_constants(self):
        pool = DarkPoolMeasure((DarkPoolAtom(0, CoefficientField.constant(1.0), 1.0),))
        spec = ModelSpec.constant(lam=1.0, eta=1.0, sigma_bar=1.0, dark_pool=pool)
        pair = barriers(spec)
        self.assertAlmostEqual(pair.c0, math.exp(-1.0), places=12)
        self.assertAlmostEqual(pair.c1, math.exp(2.0), places=12)
        self.assertAlmostEqual(float(pair.lower(0.5)), 2.0 * math.exp(-1.0))

    def test_no_dark_pool(self):
        pair = barriers(ModelSpec.constant(lam=1.0, eta=0.5, sigma_bar=1.0))
        self.assertEqual(pair.c0, 0.5)

    def test_u_hat_sits_between_barriers(self):
        spec = ModelSpec.constant(lam=1.0, eta=1.0, sigma_bar=1.0)
        pair = barriers(spec)
        times = np.linspace(0.0, 0.95, 20)
        values = np.asarray(u_hat(1.0, 1.0, times))
        self.assertTrue(np.all(values >= pair.lower(times)))
        self.assertTrue(np.all(values <= pair.upper(times)))

    def test_barriers_need_assumptions(self):
        with self.assertRaises(AssumptionError):
            barriers(ModelSpec.constant(lam=1.0, eta=1.0, sigma_bar=0.0))


class TestRiccatiOracle(unittest.TestCase):

    def test_matches_upper_envelope(self):
        spec = ModelSpec.constant(lam=1.0, eta=1.0, sigma_bar=1.0)
        times = np.linspace(0.0, 1.0, 101)
        for N in (1.0, 10.0):
            solution = riccati_solve(spec, N, times)
            exact = u_tilde_N(1.0, N, 1.0, solution.times)
            np.testing.assert_allclose(solution.values, exact, rtol=1e-8)
            self.assertFalse(solution.clamped)

    def test_matches_lower_envelope(self):
        spec = lower_envelope_spec()
        times = np.linspace(0.0, 1.0, 101)
        solution = riccati_solve(spec, 10.0, times)
        exact = u_bar_N(1.0, 1.0, 10.0, 1.0, solution.times)
        np.testing.assert_allclose(solution.values, exact, rtol=1e-8)

    def test_bracketed_by_envelopes(self):
        times = np.linspace(0.0, 1.0, 201)
        rng = np.random.default_rng(5)
        for i in range(5):
            venue = DarkPoolMeasure((DarkPoolAtom(0, CoefficientField.constant(rng.uniform(0.5, 2.0)),
                                                  rng.uniform(0.1, 1.0)),))
            spec = ModelSpec.constant(lam=rng.uniform(0.2, 1.5), eta=rng.uniform(0.5, 1.5),
                                      sigma_bar=1.0, dark_pool=venue)
            for N in (1.0, 10.0):
                solution = riccati_solve(spec, N, times)
                low = u_bar_N(spec.kappa0, spec.mu_total, N, spec.T, solution.times)
                high = u_tilde_N(spec.Lambda, N, spec.T, solution.times)
                self.assertTrue(np.all(low <= solution.values + 1e-8), msg=f"model {i}, N={N}")
                self.assertTrue(np.all(solution.values <= high + 1e-8), msg=f"model {i}, N={N}")

    def test_zero_problem(self):
        spec = ModelSpec.constant(lam=0.0, eta=1.0, sigma_bar=1.0)
        solution = riccati_solve(spec, 0.0, np.linspace(0.0, 1.0, 11))
        np.testing.assert_array_equal(solution.values, 0.0)

    def test_grid_is_descending_from_T(self):
        spec = ModelSpec.constant(lam=1.0, eta=1.0, sigma_bar=1.0)
        solution = riccati_solve(spec, 2.0, [0.0, 0.5])
        np.testing.assert_array_equal(solution.times, [1.0, 0.5, 0.0])
        self.assertEqual(solution.values[0], 2.0)
        self.assertAlmostEqual(float(solution.at(0.25)),
                               0.5 * (solution.values[1] + solution.values[2]))

    def test_rejects_factor_dependence(self):
        spec = ModelSpec.constant(lam=1.0, eta=1.0).replace(
            lam=CoefficientField.tanh_affine(1.0, 0.5, 1.0))
        with self.assertRaises(ValueError):
            riccati_solve(spec, 1.0, [0.0])
        with self.assertRaises(ValueError):
            riccati_solve(ModelSpec.constant(lam=1.0, eta=1.0), -1.0, [0.0])

    def test_csv(self):
        spec = ModelSpec.constant(lam=1.0, eta=1.0, sigma_bar=1.0)
        stream = io.StringIO()
        riccati_solve(spec, 1.0, [0.0, 0.5]).write_csv(stream)
        lines = stream.getvalue().splitlines()
        self.assertEqual(lines[0], "t,w")
        self.assertEqual(len(lines), 4)


class TestClosedFormValue(unittest.TestCase):

    def test_step_mean_matches_quadrature(self):
        cases = [
            ClosedFormValue("u_hat", T=1.0, Lambda=1.5),
            ClosedFormValue("u_tilde", T=1.0, Lambda=1.0, N=5.0),
            ClosedFormValue("u_bar", T=1.0, kappa0=0.5, mu_total=2.0, N=5.0),
            ClosedFormValue("u_bar", T=1.0, kappa0=0.5, mu_total=0.0, N=5.0),
            ClosedFormValue("u_bar_limit", T=1.0, kappa0=0.5, mu_total=2.0),
            ClosedFormValue("u_bar_limit", T=1.0, kappa0=0.5, mu_total=0.0),
        ]
        for value in cases:
            with self.subTest(kind=value.name):
                integral, _ = quad(value.value, 0.3, 0.8, epsabs=1e-13, epsrel=1e-13)
                mean = value.step_mean(0.3, 0.8, np.zeros(3))
                self.assertEqual(mean.shape, (3,))
                self.assertAlmostEqual(float(mean[0]), integral / 0.5, places=9)

    def test_finite_forms_reach_the_terminal_time(self):
        value = ClosedFormValue("u_tilde", T=1.0, Lambda=1.0, N=3.0)
        self.assertGreater(float(value.step_mean(0.9, 1.0, 0.0)), 0.0)
        singular = ClosedFormValue("u_hat", T=1.0)
        with self.assertRaises(ValueError):
            singular.step_mean(0.9, 1.0, 0.0)
        with self.assertRaises(ValueError):
            singular.step_mean(0.5, 0.5, 0.0)

    def test_evaluate_broadcasts(self):
        value = ClosedFormValue("u_hat", T=1.0)
        np.testing.assert_allclose(value.evaluate(0.0, np.zeros((2, 3))), 1.0 / math.tanh(1.0))

    def test_invalid_kinds(self):
        with self.assertRaises(ValueError):
            ClosedFormValue("u_star", T=1.0)
        with self.assertRaises(ValueError):
            ClosedFormValue("u_tilde", T=1.0)

    def test_closed_form_for_uses_model_constants(self):
        value = closed_form_for(lower_envelope_spec(kappa0=0.5, mu=2.0), "u_bar_limit")
        self.assertEqual((value.kappa0, value.mu_total, value.Lambda), (0.5, 2.0, 1.0))
        self.assertTrue(value.singular)
        self.assertEqual(closed_form_for(lower_envelope_spec(), "u_bar", N=4.0).name, "u_bar(N=4)")


if __name__ == "__main__":
    unittest.main()
