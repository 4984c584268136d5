"""
The HJB nonlinearity F and its variants, plus the weighted-transform
coefficients used by the conjugation diagnostic.

All functions broadcast over numpy arrays in (y, phi).
"""

from typing import Any, Optional, Tuple

import numpy as np

from model.model_spec import ModelSpec


def _atom_factor(gamma: np.ndarray, phi_old: np.ndarray) -> np.ndarray:
    """phi_old / (gamma + phi_old), with 0 for gamma=+inf or gamma=phi_old=0."""
    denom = gamma + phi_old
    out = np.zeros(np.broadcast(gamma, phi_old).shape)
    mask = np.isfinite(denom) & (denom > 0.0)
    np.divide(phi_old * np.ones_like(out), denom * np.ones_like(out), out=out, where=mask)
    return out


def absorption_rate(spec: ModelSpec, t: Any, y: Any, phi_old: Any,
                    M: Optional[float] = None) -> np.ndarray:
    """
    Linear decay coefficient K with F_trunc = lambda - K * phi_new.

    K = sum_k mu_k phi_old / (gamma_k + phi_old) + (M ^ phi_old) / eta.

    Args:
        spec: Model
        t: Time
        y: Factor value(s)
        phi_old: Frozen value, >= 0
        M: Truncation level; None means no truncation

    Returns:
        Nonnegative array broadcast over (y, phi_old)
    """
    phi_old = np.asarray(phi_old, dtype=float)
    eta = spec.eta.evaluate(t, y)
    capped = phi_old if M is None else np.minimum(M, phi_old)
    rate = capped / eta
    for atom in spec.dark_pool.active_atoms:
        if atom.gamma.is_infinite:
            continue
        rate = rate + atom.mu * _atom_factor(atom.gamma.evaluate(t, y), phi_old)
    return rate


def eval_F(spec: ModelSpec, t: Any, y: Any, phi: Any) -> np.ndarray:
    """
    F(t, y, phi) = lambda - sum_k mu_k phi^2 / (gamma_k + phi) - phi^2 / eta.

    Raises:
        ValueError: If any phi is negative (use eval_F_hat for signed input)
    """
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0.0):
        raise ValueError("eval_F requires phi >= 0; use eval_F_hat for signed values")
    lam = spec.lam.evaluate(t, y)
    return lam - absorption_rate(spec, t, y, phi) * phi


def eval_F_hat(spec: ModelSpec, t: Any, y: Any, phi: Any) -> np.ndarray:
    """F evaluated at |phi|."""
    return eval_F(spec, t, y, np.abs(np.asarray(phi, dtype=float)))


def eval_F_truncated(spec: ModelSpec, t: Any, y: Any, phi_old: Any, phi_new: Any,
                     M: float) -> np.ndarray:
    """
    Semi-implicit truncated nonlinearity, linear in phi_new:

        lambda - sum_k mu_k phi_old phi_new / (gamma_k + phi_old)
               - (M ^ phi_old) phi_new / eta

    Raises:
        ValueError: If M <= 0 or phi_old < 0
    """
    if not M > 0.0:
        raise ValueError(f"truncation level M must be > 0, got {M}")
    phi_old = np.asarray(phi_old, dtype=float)
    if np.any(phi_old < 0.0):
        raise ValueError("phi_old must be >= 0")
    phi_new = np.asarray(phi_new, dtype=float)
    lam = spec.lam.evaluate(t, y)
    return lam - absorption_rate(spec, t, y, phi_old, M) * phi_new


# Weighted transform

def theta(y: Any, q: int) -> np.ndarray:
    """Weight (1 + y^2)^(-q)."""
    y = np.asarray(y, dtype=float)
    return (1.0 + y * y) ** (-q)


def theta_prime(y: Any, q: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return -2.0 * q * y * (1.0 + y * y) ** (-q - 1)


def theta_second(y: Any, q: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    s = 1.0 + y * y
    return -2.0 * q * s ** (-q - 1) + 4.0 * q * (q + 1) * y * y * s ** (-q - 2)


def weighted_coefficients(spec: ModelSpec, q: int, t: Any, y: Any
                          ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Coefficients of the equation satisfied by v = theta * u.

    Args:
        spec: Model
        q: Weight exponent, an integer > 1
        t: Time
        y: Factor value(s)

    Returns:
        (b_tilde, beta, c)

    Raises:
        ValueError: If q is not an integer >= 2
    """
    if int(q) != q or q < 2:
        raise ValueError(f"weight exponent q must be an integer >= 2, got {q}")
    y = np.asarray(y, dtype=float)
    s = 1.0 + y * y
    a = spec.a(t, y)
    b = spec.b.evaluate(t, y)
    sigma = spec.sigma.evaluate(t, y)
    b_tilde = b + 4.0 * q * a * y / s
    beta = 2.0 * q * sigma * y / s
    c = (2.0 * q / s) * (a + y * b + 2.0 * (q - 1) * a * y * y / s)
    return b_tilde, beta, c


def conjugation_residual(spec: ModelSpec, q: int, t: Any, y: Any) -> np.ndarray:
    """
    a theta'' + b_tilde theta' + c theta; zero when the weighted
    coefficients are consistent with the conjugation u -> theta u.
    """
    b_tilde, _, c = weighted_coefficients(spec, q, t, y)
    a = spec.a(t, y)
    return a * theta_second(y, q) + b_tilde * theta_prime(y, q) + c * theta(y, q)
