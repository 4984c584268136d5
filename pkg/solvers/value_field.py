"""
Space-time grids and sampled value coefficients u(t, y).
"""

import csv
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Optional, TextIO

import numpy as np

from utils.errors import FieldFormatError

FIELD_MAGIC = b"SHJB1"
# y_min, y_max, n_y, dt, T, n_rows, N (NaN when singular), delta
_HEADER = struct.Struct("<ddqddqdd")


@dataclass(frozen=True)
class Grid1D:
    """
    Uniform grid on [y_min, y_max] x [0, T].

    n_y counts every spatial node, the two boundary nodes included.
    """
    y_min: float
    y_max: float
    n_y: int
    dt: float
    T: float

    def __post_init__(self):
        if not self.y_min < self.y_max:
            raise ValueError(f"y_min must be < y_max, got [{self.y_min}, {self.y_max}]")
        if int(self.n_y) != self.n_y or self.n_y < 3:
            raise ValueError(f"n_y must be an integer >= 3, got {self.n_y}")
        object.__setattr__(self, "n_y", int(self.n_y))
        if not (self.dt > 0.0 and self.T > 0.0):
            raise ValueError("dt and T must be > 0")
        steps = round(self.T / self.dt)
        if steps < 1 or abs(steps * self.dt - self.T) > 1e-12 * max(1.0, self.T):
            raise ValueError(f"dt={self.dt} does not divide T={self.T}")

    @property
    def n_t(self) -> int:
        """Number of time steps."""
        return int(round(self.T / self.dt))

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.n_y - 1)

    @cached_property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.n_y)

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t + 1)

    def with_dt(self, dt: float) -> "Grid1D":
        return Grid1D(self.y_min, self.y_max, self.n_y, dt, self.T)

    def with_n_y(self, n_y: int) -> "Grid1D":
        return Grid1D(self.y_min, self.y_max, n_y, self.dt, self.T)


class ValueField:
    """
    u sampled on the nodes of a grid, rows in increasing time.

    A finite-N field covers [0, T]; a singular field (N is None) stops at the
    last node with t <= T - delta.
    """

    def __init__(self, grid: Grid1D, values: np.ndarray, N: Optional[float],
                 delta: float = 0.0):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[1] != grid.n_y or values.shape[0] > grid.n_t + 1:
            raise ValueError(f"values of shape {values.shape} do not fit the grid")
        if not np.all(np.isfinite(values)):
            raise ValueError("value field contains non-finite entries")
        self.grid = grid
        self.values = values
        self.N = N
        self.delta = float(delta)
        self.times = grid.times[: values.shape[0]]

    @property
    def singular(self) -> bool:
        return self.N is None

    @property
    def t_max(self) -> float:
        return float(self.times[-1])

    def restricted(self, t_limit: float, delta: float) -> "ValueField":
        """Rows with t <= t_limit, marked singular with cutoff delta."""
        keep = int(np.searchsorted(self.times, t_limit + 1e-12, side="right"))
        if keep < 1:
            raise ValueError(f"no grid time lies at or before {t_limit}")
        return ValueField(self.grid, self.values[:keep].copy(), None, delta)

    def _row(self, t: float) -> np.ndarray:
        tol = 1e-12 * max(1.0, self.grid.T)
        if t < self.times[0] - tol or t > self.times[-1] + tol:
            raise ValueError(f"t={t} outside the field's time range "
                             f"[{self.times[0]}, {self.times[-1]}]")
        if len(self.times) == 1:
            return self.values[0]
        i = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        weight = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        weight = min(max(weight, 0.0), 1.0)
        return (1.0 - weight) * self.values[i] + weight * self.values[i + 1]

    def interpolate(self, t: float, y: Any) -> np.ndarray:
        """Bilinear interpolation, clamped at the spatial edges."""
        return np.interp(np.asarray(y, dtype=float), self.grid.ys, self._row(float(t)))

    def node_values(self, t_limit: Optional[float] = None) -> np.ndarray:
        """Rows with t <= t_limit (all rows when None)."""
        if t_limit is None:
            return self.values
        keep = int(np.searchsorted(self.times, t_limit + 1e-12, side="right"))
        return self.values[:keep]

    # Serialization

    def write_csv(self, stream: TextIO) -> None:
        writer = csv.writer(stream)
        writer.writerow(["t", "y", "u"])
        for t, row in zip(self.times, self.values):
            for y, u in zip(self.grid.ys, row):
                writer.writerow([repr(float(t)), repr(float(y)), repr(float(u))])

    def to_bytes(self) -> bytes:
        g = self.grid
        header = _HEADER.pack(g.y_min, g.y_max, g.n_y, g.dt, g.T, self.values.shape[0],
                              math.nan if self.N is None else float(self.N), self.delta)
        return FIELD_MAGIC + header + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ValueField":
        """
        Decode a dump written by to_bytes.

        Raises:
            FieldFormatError: On a wrong magic, a truncated payload or a bad grid
        """
        if not data.startswith(FIELD_MAGIC):
            raise FieldFormatError("not a value-field dump (bad magic bytes)")
        offset = len(FIELD_MAGIC)
        if len(data) < offset + _HEADER.size:
            raise FieldFormatError("value-field dump truncated in header")
        y_min, y_max, n_y, dt, T, n_rows, N, delta = _HEADER.unpack_from(data, offset)
        offset += _HEADER.size
        expected = n_rows * n_y * 8
        if n_rows < 1 or len(data) - offset != expected:
            raise FieldFormatError(
                f"value-field dump has {len(data) - offset} payload bytes, expected {expected}")
        try:
            grid = Grid1D(y_min, y_max, n_y, dt, T)
            values = np.frombuffer(data, dtype="<f8", offset=offset).reshape(n_rows, n_y)
            return cls(grid, values.astype(float), None if math.isnan(N) else N, delta)
        except ValueError as exc:
            raise FieldFormatError(f"invalid value-field dump: {exc}") from exc


class FieldValue:
    """
    Value coefficient backed by a ValueField, for use by feedback policies.

    Past the last row of a singular field, u is continued by c(y)/(T-t) with
    c(y) = u(t_max, y) * (T - t_max).
    """

    def __init__(self, field: ValueField):
        self.field = field
        self.T = field.grid.T
        self.t_max = field.t_max
        self._layer = field.singular and self.t_max < self.T
        if self._layer:
            self._c = field.values[-1] * (self.T - self.t_max)

    @property
    def name(self) -> str:
        return "field" if self.field.N is None else f"field(N={self.field.N:g})"

    @property
    def singular(self) -> bool:
        return self.field.singular

    def _layer_coefficient(self, y: Any) -> np.ndarray:
        return np.interp(np.asarray(y, dtype=float), self.field.grid.ys, self._c)

    def evaluate(self, t: float, y: Any) -> np.ndarray:
        if self._layer and t > self.t_max:
            if t >= self.T:
                raise ValueError("value is infinite at the terminal time")
            return self._layer_coefficient(y) / (self.T - t)
        return self.field.interpolate(t, y)

    def step_mean(self, t0: float, t1: float, y: Any) -> np.ndarray:
        """
        Mean of u over [t0, t1]: trapezoidal inside the field, exact for the
        c/(T-t) continuation.
        """
        if t1 <= t0:
            raise ValueError("step must have t1 > t0")
        if not self._layer or t1 <= self.t_max:
            return 0.5 * (self.field.interpolate(t0, y) + self.field.interpolate(t1, y))
        if t1 >= self.T:
            raise ValueError("step mean is infinite on a step ending at the singularity")
        h = t1 - t0
        total = np.zeros(np.shape(y))
        start = t0
        if t0 < self.t_max:
            total = total + 0.5 * (self.field.interpolate(t0, y)
                                   + self.field.interpolate(self.t_max, y)) * (self.t_max - t0)
            start = self.t_max
        c = self._layer_coefficient(y)
        total = total + c * math.log((self.T - start) / (self.T - t1))
        return total / h
