"""
Grid-refinement and N-ladder studies.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, TextIO

import numpy as np

from model.model_spec import ModelSpec
from solvers.closed_form import riccati_solve
from solvers.pde_solver import MAX_RUNGS, solve_finite, solve_singular
from solvers.value_field import Grid1D

logger = logging.getLogger(__name__)


@dataclass
class StudyRow:
    study: str
    dt: float
    dy: float
    N: float
    error: float


@dataclass
class StudyResult:
    """Rows of one study plus the observed orders between consecutive rows."""
    name: str
    rows: List[StudyRow] = field(default_factory=list)
    orders: List[float] = field(default_factory=list)

    def summary(self) -> str:
        if not self.orders:
            return f"{self.name}: {len(self.rows)} row(s), no order"
        text = ", ".join(f"{p:.3f}" for p in self.orders)
        return f"{self.name}: observed orders {text}"


def observed_orders(errors: Sequence[float], ratio: float = 2.0) -> List[float]:
    """log_ratio(e_k / e_{k+1}) for consecutive refinements."""
    orders = []
    for coarse, fine in zip(errors, errors[1:]):
        if coarse > 0.0 and fine > 0.0:
            orders.append(math.log(coarse / fine) / math.log(ratio))
        else:
            orders.append(math.nan)
    return orders


def temporal_study(spec: ModelSpec, N: float, grid: Grid1D, dts: Sequence[float]) -> StudyResult:
    """
    Max relative error of the finite-N field against the Riccati oracle for
    each dt; the model must be constant in y.
    """
    result = StudyResult("temporal")
    errors = []
    for dt in dts:
        g = grid.with_dt(dt)
        field_ = solve_finite(spec, N, g)
        oracle = riccati_solve(spec, N, g.times)
        reference = oracle.values[::-1]
        rel = np.abs(field_.values - reference[:, None]) / np.maximum(reference[:, None], 1e-300)
        error = float(rel.max())
        errors.append(error)
        result.rows.append(StudyRow("temporal", dt, g.dy, N, error))
        logger.debug("temporal study dt=%g error=%.6e", dt, error)
    result.orders = observed_orders(errors)
    return result


def spatial_study(spec: ModelSpec, N: float, grid: Grid1D, n_ys: Sequence[int]) -> StudyResult:
    """
    Self-differences between consecutive spatial refinements at t = 0.

    Each n_y must be 2 (previous n_y) - 1 so coarse nodes are fine nodes.
    """
    for coarse, fine in zip(n_ys, n_ys[1:]):
        if fine != 2 * coarse - 1:
            raise ValueError(f"spatial refinements must halve dy: {coarse} -> {fine}")
    result = StudyResult("spatial")
    fields = [solve_finite(spec, N, grid.with_n_y(n)) for n in n_ys]
    diffs = []
    for coarse, fine in zip(fields, fields[1:]):
        diff = float(np.abs(fine.values[0, ::2] - coarse.values[0]).max())
        diffs.append(diff)
        result.rows.append(StudyRow("spatial", grid.dt, fine.grid.dy, N, diff))
    result.orders = observed_orders(diffs)
    return result


def domain_study(spec: ModelSpec, N: float, grid: Grid1D) -> StudyResult:
    """
    Relative change on the inner half of the domain when [y_min, y_max] is
    doubled about its centre at fixed dy.
    """
    if grid.n_y % 2 == 0:
        raise ValueError("domain study needs an odd n_y so the centre is a node")
    centre = 0.5 * (grid.y_min + grid.y_max)
    half = 0.5 * (grid.y_max - grid.y_min)
    wide = Grid1D(centre - 2.0 * half, centre + 2.0 * half, 2 * grid.n_y - 1, grid.dt, grid.T)
    base = solve_finite(spec, N, grid)
    doubled = solve_finite(spec, N, wide)
    offset = (grid.n_y - 1) // 2
    aligned = doubled.values[:, offset: offset + grid.n_y]
    inner = np.abs(grid.ys - centre) <= 0.5 * half + 1e-12
    rel = np.abs(aligned[:, inner] - base.values[:, inner]) / np.maximum(base.values[:, inner], 1e-300)
    error = float(rel.max())
    result = StudyResult("domain")
    result.rows.append(StudyRow("domain", grid.dt, grid.dy, N, error))
    return result


def ladder_study(spec: ModelSpec, grid: Grid1D, delta: Optional[float] = None,
                 tol: float = 1e-4, N0: Optional[float] = None,
                 max_rungs: int = MAX_RUNGS) -> StudyResult:
    """Relative deltas of the singular N-ladder, one row per rung after the first."""
    report = solve_singular(spec, grid, delta=delta, tol=tol, N0=N0, max_rungs=max_rungs)
    result = StudyResult("ladder")
    for N, rel in zip(report.ladder[1:], report.deltas):
        result.rows.append(StudyRow("ladder", grid.dt, grid.dy, N, rel))
    result.orders = observed_orders(report.deltas)
    return result


def write_rows(stream: TextIO, studies: Sequence[StudyResult]) -> None:
    writer = csv.writer(stream)
    writer.writerow(["study", "dt", "dy", "N", "error"])
    for study in studies:
        for row in study.rows:
            writer.writerow([row.study, repr(row.dt), repr(row.dy), repr(row.N), repr(row.error)])
