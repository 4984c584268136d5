"""
Liquidation policies.

A policy moves the inventory over one time step (primary-market trading)
and sizes the passive dark-pool order per atom. All methods are vectorized
over a batch of paths.
"""

from typing import Any, Callable, Optional, Protocol

import numpy as np

from model.model_spec import ModelSpec


class ValueSource(Protocol):
    """A value coefficient u(t, y): closed form or solved field."""
    name: str

    def evaluate(self, t: float, y: Any) -> np.ndarray:
        ...

    def step_mean(self, t0: float, t1: float, y: Any) -> np.ndarray:
        ...


class Policy:
    """
    Base policy.

    Attributes:
        name: Label used in reports and file names
        forcing: Whether the last step liquidates the remainder
        monotone: Whether fills larger than the pre-jump inventory are a fault
    """
    name = "policy"
    forcing = True
    monotone = True

    def __init__(self):
        self.spec: Optional[ModelSpec] = None
        self.x0 = 0.0

    def prepare(self, spec: ModelSpec, x0: float) -> "Policy":
        """Bind the policy to a model and starting inventory."""
        self.spec = spec
        self.x0 = float(x0)
        return self

    def _gammas(self, t: float, y: np.ndarray):
        for atom in self.spec.dark_pool.active_atoms:
            yield atom, (None if atom.gamma.is_infinite else atom.gamma.evaluate(t, y))

    def evolve(self, t0: float, t1: float, y: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Inventory just before t1, given inventory x just after t0."""
        raise NotImplementedError

    def requested_fills(self, t: float, y: np.ndarray, x_minus: np.ndarray) -> np.ndarray:
        """Dark-pool order sizes, shape (active atoms, batch)."""
        n_atoms = len(self.spec.dark_pool.active_atoms)
        return np.zeros((n_atoms,) + np.shape(x_minus))

    def executed_fill(self, t: float, y: np.ndarray, x_minus: np.ndarray, atom_index: int) -> np.ndarray:
        """Size executed when atom atom_index fires."""
        return self.requested_fills(t, y, x_minus)[atom_index]


class FeedbackPolicy(Policy):
    """
    Optimal feedback xi = u x / eta, rho_k = u x^- / (gamma_k + u).

    Between events the inventory follows the exponential integrator
    x_{i+1} = x_i exp(-ubar_i dt / eta_i), with ubar_i the mean of u over the step.
    """
    name = "feedback"

    def __init__(self, source: ValueSource):
        super().__init__()
        self.source = source

    def evolve(self, t0, t1, y, x):
        h = t1 - t0
        u_mean = self.source.step_mean(t0, t1, y)
        eta = self.spec.eta.evaluate(t0, y)
        return x * np.exp(-u_mean * h / eta)

    def requested_fills(self, t, y, x_minus):
        u = self.source.evaluate(t, y)
        fills = np.zeros((len(self.spec.dark_pool.active_atoms),) + np.shape(x_minus))
        for k, (_, gamma) in enumerate(self._gammas(t, y)):
            if gamma is None:
                continue
            denom = gamma + u
            fills[k] = np.divide(u * x_minus, denom, out=np.zeros_like(fills[k]), where=denom > 0.0)
        return fills


class TwapPolicy(Policy):
    """Constant rate x0 / T, no dark-pool orders."""
    name = "twap"

    def prepare(self, spec, x0):
        super().prepare(spec, x0)
        self.rate = self.x0 / spec.T
        return self

    def evolve(self, t0, t1, y, x):
        x_next = x - self.rate * (t1 - t0)
        # never trade through zero
        if self.x0 >= 0.0:
            return np.maximum(x_next, 0.0)
        return np.minimum(x_next, 0.0)


RateFunction = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
FillFunction = Callable[[float, np.ndarray, np.ndarray, int], np.ndarray]


class CustomPolicy(Policy):
    """
    Arbitrary control given by a rate function xi(t, y, x) and a fill
    function rho(t, y, x^-, k); the inventory follows the explicit Euler
    update x - xi dt. No final forcing, no overshoot check.
    """
    forcing = False
    monotone = False

    def __init__(self, rate_fn: RateFunction, fill_fn: Optional[FillFunction] = None,
                 name: str = "custom"):
        super().__init__()
        self.rate_fn = rate_fn
        self.fill_fn = fill_fn
        self.name = name

    def rate(self, t: float, y: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.rate_fn(t, y, x), dtype=float), np.shape(x))

    def evolve(self, t0, t1, y, x):
        return x - self.rate(t0, y, x) * (t1 - t0)

    def requested_fills(self, t, y, x_minus):
        n_atoms = len(self.spec.dark_pool.active_atoms)
        fills = np.zeros((n_atoms,) + np.shape(x_minus))
        if self.fill_fn is not None:
            for k in range(n_atoms):
                fills[k] = self.fill_fn(t, y, x_minus, k)
        return fills


def build_policy(kind: str, source: Optional[ValueSource] = None) -> Policy:
    """
    Policy by name: "feedback" (needs a value source) or "twap".

    Raises:
        ValueError: On an unknown kind or a missing source
    """
    if kind == "feedback":
        if source is None:
            raise ValueError("feedback policy needs a value source")
        return FeedbackPolicy(source)
    if kind == "twap":
        return TwapPolicy()
    raise ValueError(f"unknown policy '{kind}' (expected 'feedback' or 'twap')")


def random_custom_policy(seed: int, index: int, T: float = 1.0) -> CustomPolicy:
    """
    A randomized control used by the monotonization checks:
    xi = x (g / (T - t) + e sin(y)), rho_k = phi_k x^- + psi.

    With g >= 1.5 the rate alone liquidates, but the explicit update
    overshoots through zero near T and phi_k < 0 or psi < 0 buy in the
    dark pool, so the raw inventory is not monotone.
    """
    generator = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(int(seed), spawn_key=(int(index), 1))))
    g, e = generator.uniform(1.5, 3.0), generator.uniform(-1.0, 1.0)
    phis = generator.uniform(-0.5, 1.5, size=8)
    psi = generator.uniform(-0.1, 0.1)

    def rate_fn(t, y, x):
        return x * (g / (T - t) + e * np.sin(y))

    def fill_fn(t, y, x_minus, k):
        return phis[k % len(phis)] * x_minus + psi

    return CustomPolicy(rate_fn, fill_fn, name=f"random[{index}]")
