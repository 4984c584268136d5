"""
Parametric coefficient fields and the atomic dark-pool measure.

Every field is a function of the scalar factor y (time enters only through
the signature) drawn from a small set of families whose bound and Lipschitz
constants are available in closed form.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np

from utils.errors import ModelError


class Family(str, Enum):
    """Supported coefficient families."""
    CONSTANT = "constant"
    TANH_AFFINE = "tanh_affine"
    BOUNDED_SIN = "bounded_sin"


@dataclass(frozen=True)
class CoefficientField:
    """
    A bounded, Lipschitz coefficient c(t, y).

    constant:     c = base
    tanh_affine:  c = base + amplitude * tanh(slope * y)
    bounded_sin:  c = base + amplitude * sin(slope * y)   (slope is the frequency)

    Only a constant field may be +inf; that value is reserved for the
    slippage coefficient gamma of a dark-pool atom.
    """
    family: Family = Family.CONSTANT
    base: float = 0.0
    amplitude: float = 0.0
    slope: float = 0.0

    def __post_init__(self):
        family = Family(self.family)
        object.__setattr__(self, "family", family)
        for name in ("base", "amplitude", "slope"):
            value = float(getattr(self, name))
            if math.isnan(value):
                raise ModelError(f"coefficient parameter '{name}' is NaN")
            object.__setattr__(self, name, value)
        if family is not Family.CONSTANT:
            if not all(math.isfinite(v) for v in (self.base, self.amplitude, self.slope)):
                raise ModelError(f"{family.value} parameters must be finite")
        elif self.base == -math.inf:
            raise ModelError("a coefficient cannot be -inf")

    # Constructors

    @classmethod
    def constant(cls, value: float) -> "CoefficientField":
        return cls(Family.CONSTANT, base=value)

    @classmethod
    def tanh_affine(cls, base: float, amplitude: float, slope: float) -> "CoefficientField":
        return cls(Family.TANH_AFFINE, base=base, amplitude=amplitude, slope=slope)

    @classmethod
    def bounded_sin(cls, base: float, amplitude: float, frequency: float) -> "CoefficientField":
        return cls(Family.BOUNDED_SIN, base=base, amplitude=amplitude, slope=frequency)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CoefficientField":
        """
        Build a field from a config mapping such as {family="tanh_affine", base=1, ...}.

        A bare number is read as a constant; the strings "inf" / "+inf" give +inf.

        Raises:
            ModelError: On an unknown family or unexpected keys
        """
        if isinstance(data, (int, float)):
            return cls.constant(float(data))
        if isinstance(data, str):
            return cls.constant(_parse_number(data))
        if not isinstance(data, dict):
            raise ModelError(f"cannot build a coefficient from {data!r}")

        params = dict(data)
        family = params.pop("family", "constant")
        try:
            family = Family(family)
        except ValueError:
            raise ModelError(
                f"unknown coefficient family '{family}' "
                f"(expected one of {[f.value for f in Family]})") from None

        if family is Family.CONSTANT:
            value = params.pop("value", params.pop("base", None))
            if value is None or params:
                raise ModelError(f"constant field takes exactly 'value', got {data!r}")
            return cls.constant(_parse_number(value))

        slope_key = "slope" if family is Family.TANH_AFFINE else "frequency"
        try:
            base = _parse_number(params.pop("base"))
            amplitude = _parse_number(params.pop("amplitude"))
            slope = _parse_number(params.pop(slope_key))
        except KeyError as exc:
            raise ModelError(f"{family.value} field missing parameter {exc}") from None
        if params:
            raise ModelError(f"unexpected parameters for {family.value}: {sorted(params)}")
        return cls(family, base=base, amplitude=amplitude, slope=slope)

    def to_dict(self) -> Dict[str, Any]:
        if self.family is Family.CONSTANT:
            return {"family": "constant", "value": self.base}
        slope_key = "slope" if self.family is Family.TANH_AFFINE else "frequency"
        return {"family": self.family.value, "base": self.base,
                "amplitude": self.amplitude, slope_key: self.slope}

    # Closed-form constants

    def is_y_independent(self) -> bool:
        return self.family is Family.CONSTANT or self.amplitude == 0.0 or self.slope == 0.0

    @property
    def is_infinite(self) -> bool:
        return self.base == math.inf

    def lower_bound(self) -> float:
        """Infimum over y."""
        if self.is_y_independent():
            return self.base
        return self.base - abs(self.amplitude)

    def upper_bound(self) -> float:
        """Supremum over y."""
        if self.is_y_independent():
            return self.base
        return self.base + abs(self.amplitude)

    def abs_bound(self) -> float:
        """Supremum of |c| over y."""
        return max(abs(self.lower_bound()), abs(self.upper_bound()))

    def abs_lower_bound(self) -> float:
        """Infimum of |c| over y; zero when the field changes sign."""
        low, high = self.lower_bound(), self.upper_bound()
        if low > 0.0:
            return low
        if high < 0.0:
            return -high
        return 0.0

    def lipschitz(self) -> float:
        """Global Lipschitz constant in y: sup |c'| = |amplitude * slope|."""
        if self.is_y_independent():
            return 0.0
        return abs(self.amplitude * self.slope)

    def dominates(self, other: "CoefficientField") -> Optional[bool]:
        """
        Decide analytically whether self >= other for every y.

        Returns:
            True if the inequality is proven, False if a point violating it is
            known, None if neither can be decided from the parameters
        """
        if self == other:
            return True
        if self.is_infinite:
            return True
        if other.is_infinite:
            return False
        if self.lower_bound() >= other.upper_bound():
            return True
        if self.upper_bound() < other.lower_bound():
            return False
        same_shape = (
            self.family is other.family
            and self.amplitude == other.amplitude
            and self.slope == other.slope
        )
        if same_shape:
            return self.base >= other.base
        if self.is_y_independent() and other.is_y_independent():
            return self.base >= other.base
        # Both sup/inf ranges overlap; a constant below the other's sup is
        # violated where the other attains values above it.
        if self.is_y_independent() and self.base < other.upper_bound():
            return False
        if other.is_y_independent() and other.base > self.lower_bound():
            return False
        return None

    # Evaluation

    def evaluate(self, t: Any, y: Any) -> np.ndarray:
        """
        Evaluate the field; vectorized over y.

        Args:
            t: Time (unused by the supported families, kept for the (t, y) signature)
            y: Factor value(s)

        Returns:
            Array with the shape of y
        """
        y = np.asarray(y, dtype=float)
        if self.is_y_independent():
            return np.full(y.shape, self.base)
        if self.family is Family.TANH_AFFINE:
            return self.base + self.amplitude * np.tanh(self.slope * y)
        return self.base + self.amplitude * np.sin(self.slope * y)

    def __call__(self, t: Any, y: Any) -> np.ndarray:
        return self.evaluate(t, y)


def _parse_number(value: Any) -> float:
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("inf", "+inf", "infinity", "+infinity"):
            return math.inf
        try:
            return float(text)
        except ValueError:
            raise ModelError(f"not a number: {value!r}") from None
    return float(value)


@dataclass(frozen=True)
class DarkPoolAtom:
    """One atom z_k of the dark-pool measure: slippage gamma_k and weight mu_k."""
    z_id: int
    gamma: CoefficientField
    mu: float

    def __post_init__(self):
        mu = float(self.mu)
        if not math.isfinite(mu) or mu < 0.0:
            raise ModelError(f"atom {self.z_id}: weight mu must be finite and >= 0, got {mu}")
        object.__setattr__(self, "mu", mu)
        if not isinstance(self.gamma, CoefficientField):
            object.__setattr__(self, "gamma", CoefficientField.from_dict(self.gamma))


@dataclass(frozen=True)
class DarkPoolMeasure:
    """Finite atomic measure on the dark-pool mark space."""
    atoms: Tuple[DarkPoolAtom, ...] = field(default_factory=tuple)

    def __post_init__(self):
        atoms = tuple(self.atoms)
        ids = [atom.z_id for atom in atoms]
        if len(set(ids)) != len(ids):
            raise ModelError(f"duplicate dark-pool atom ids: {ids}")
        object.__setattr__(self, "atoms", atoms)

    @property
    def total_mass(self) -> float:
        return float(sum(atom.mu for atom in self.atoms))

    @property
    def active_atoms(self) -> Tuple[DarkPoolAtom, ...]:
        """Atoms with positive weight."""
        return tuple(atom for atom in self.atoms if atom.mu > 0.0)

    def __len__(self) -> int:
        return len(self.atoms)

    def __iter__(self):
        return iter(self.atoms)

    def probabilities(self) -> np.ndarray:
        """Selection probabilities mu_k / mu(Z) for the active atoms."""
        total = self.total_mass
        if total == 0.0:
            return np.zeros(0)
        return np.array([atom.mu for atom in self.active_atoms]) / total
