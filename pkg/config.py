"""
Configuration settings for singular-hjb.
"""

import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from managers.model_loader import PRESETS, LoadedModel, load_model, preset_model, read_toml
from solvers.value_field import Grid1D
from utils.errors import ConfigError, ModelError

SUITES = ("oracle", "m_independence", "n_monotonicity", "comparison",
          "barriers", "decay", "monotonization")


class Config:
    """Application defaults."""

    def __init__(self):
        """Initialize configuration with default values."""
        # Grid
        self.y_min = -1.0
        self.y_max = 1.0
        self.n_y = 21
        self.dt = 1e-3

        # Singular ladder: delta defaults to 0.05 T and N0 to 8 / delta
        self.delta_fraction = 0.05
        self.tol = 1e-4
        self.max_rungs = 40

        # Monte Carlo
        self.paths = 10_000
        self.seed = 2024
        self.chunk_size = 256

        # Verification
        self.oracle_dt = 1e-3
        self.oracle_N = [1.0, 10.0, 100.0]
        self.verify_paths = 1000
        self.comparison_pairs = 10

        # Output
        self.out_dir = "out"
        self.use_colors = True
        self.default_encoding = "utf-8"


@dataclass
class GridSection:
    y_min: float
    y_max: float
    n_y: int
    dt: float
    upwind: bool = True


@dataclass
class SingularSection:
    delta: Optional[float] = None
    tol: float = 1e-4
    N0: Optional[float] = None
    max_rungs: int = 40


@dataclass
class MonteCarloSection:
    paths: int
    seed: int
    x0: float = 1.0
    y0: float = 0.0
    policies: List[str] = field(default_factory=lambda: ["feedback", "twap"])
    trajectories: int = 0
    workers: Optional[int] = None
    chunk_size: int = 256
    field_path: Optional[str] = None


@dataclass
class VerifySection:
    suites: List[str] = field(default_factory=lambda: list(SUITES))
    oracle_dt: float = 1e-3
    oracle_N: List[float] = field(default_factory=lambda: [1.0, 10.0, 100.0])
    N: float = 10.0
    paths: int = 1000
    comparison_pairs: int = 10


@dataclass
class ConvergenceSection:
    N: float = 10.0
    dts: List[float] = field(default_factory=lambda: [0.04, 0.02, 0.01, 0.005])
    n_ys: List[int] = field(default_factory=lambda: [11, 21, 41])
    domain: bool = True
    ladder: bool = False


@dataclass
class RunConfig:
    """
    One run, loaded from a TOML file.

    Exactly one of `model` (path to a model file, relative to the run file)
    and `preset` (closed-form preset name) selects the model.
    """
    model: LoadedModel
    grid: GridSection
    singular: SingularSection
    finite_N: Optional[float]
    mc: MonteCarloSection
    verify: VerifySection
    convergence: ConvergenceSection
    out_dir: str
    path: Optional[str] = None

    @property
    def spec(self):
        return self.model.spec

    def build_grid(self) -> Grid1D:
        """
        Grid for the model horizon.

        Raises:
            ConfigError: If the grid parameters are inconsistent with the horizon
        """
        try:
            return Grid1D(self.grid.y_min, self.grid.y_max, self.grid.n_y, self.grid.dt, self.spec.T)
        except ValueError as e:
            raise ConfigError(f"[grid]: {str(e)}") from None

    @classmethod
    def from_toml(cls, path: str, defaults: Optional[Config] = None,
                  out_dir: Optional[str] = None, seed: Optional[int] = None,
                  paths: Optional[int] = None) -> "RunConfig":
        """
        Load and validate a run file; command-line overrides win over the file.

        Raises:
            ConfigError: On any invalid entry
        """
        data = read_toml(path)
        base_dir = os.path.dirname(os.path.abspath(path))
        config = cls.from_dict(data, defaults, base_dir=base_dir, out_dir=out_dir, seed=seed,
                               paths=paths)
        config.path = path
        return config

    @classmethod
    def from_dict(cls, data: Dict[str, Any], defaults: Optional[Config] = None,
                  base_dir: str = ".", out_dir: Optional[str] = None, seed: Optional[int] = None,
                  paths: Optional[int] = None) -> "RunConfig":
        defaults = defaults or Config()
        model = _load_model_entry(data, base_dir)

        grid_data = _section(data, "grid")
        grid = GridSection(
            y_min=_number(grid_data, "y_min", defaults.y_min, "grid"),
            y_max=_number(grid_data, "y_max", defaults.y_max, "grid"),
            n_y=_integer(grid_data, "n_y", defaults.n_y, "grid", minimum=3),
            dt=_positive(grid_data, "dt", defaults.dt, "grid"),
            upwind=bool(grid_data.get("upwind", True)),
        )
        if not grid.y_min < grid.y_max:
            raise ConfigError("[grid]: y_min must be below y_max")

        singular_data = _section(data, "singular")
        tol = _positive(singular_data, "tol", defaults.tol, "singular")
        if "delta" in singular_data:
            delta = _positive(singular_data, "delta", None, "singular")
        else:
            delta = defaults.delta_fraction * model.spec.T
        if delta >= model.spec.T:
            raise ConfigError(f"[singular]: delta must lie in (0, T), got {delta}")
        N0 = singular_data.get("N0")
        if N0 is not None:
            N0 = _positive(singular_data, "N0", None, "singular")
        max_rungs = _integer(singular_data, "max_rungs", defaults.max_rungs, "singular", minimum=1)
        singular = SingularSection(delta=delta, tol=tol, N0=N0, max_rungs=max_rungs)

        finite_data = _section(data, "finite")
        finite_N = _positive(finite_data, "N", None, "finite") if "N" in finite_data else None

        mc_data = _section(data, "mc")
        mc = MonteCarloSection(
            paths=paths if paths is not None else _integer(mc_data, "paths", defaults.paths, "mc", minimum=2),
            seed=seed if seed is not None else _integer(mc_data, "seed", defaults.seed, "mc", minimum=0),
            x0=_number(mc_data, "x0", 1.0, "mc"),
            y0=_number(mc_data, "y0", 0.0, "mc"),
            policies=list(mc_data.get("policies", ["feedback", "twap"])),
            trajectories=_integer(mc_data, "trajectories", 0, "mc", minimum=0),
            workers=(_integer(mc_data, "workers", 1, "mc", minimum=1) if "workers" in mc_data else None),
            chunk_size=_integer(mc_data, "chunk_size", defaults.chunk_size, "mc", minimum=1),
            field_path=_relative(mc_data.get("field"), base_dir),
        )
        if mc.paths < 2:
            raise ConfigError(f"[mc]: paths must be >= 2, got {mc.paths}")
        if seed is not None and seed < 0:
            raise ConfigError(f"seed must be >= 0, got {seed}")
        for policy in mc.policies:
            if policy not in ("feedback", "twap"):
                raise ConfigError(f"[mc]: unknown policy '{policy}'")

        verify_data = _section(data, "verify")
        suites = list(verify_data.get("suites", SUITES))
        unknown = [s for s in suites if s not in SUITES]
        if unknown:
            raise ConfigError(f"[verify]: unknown suites {unknown} (known: {', '.join(SUITES)})")
        oracle_N = [float(n) for n in verify_data.get("oracle_N", defaults.oracle_N)]
        if any(not n > 0.0 for n in oracle_N):
            raise ConfigError("[verify]: oracle_N values must be > 0")
        verify = VerifySection(
            suites=suites,
            oracle_dt=_positive(verify_data, "oracle_dt", defaults.oracle_dt, "verify"),
            oracle_N=oracle_N,
            N=_positive(verify_data, "N", 10.0, "verify"),
            paths=_integer(verify_data, "paths", defaults.verify_paths, "verify", minimum=1),
            comparison_pairs=_integer(verify_data, "comparison_pairs", defaults.comparison_pairs,
                                      "verify", minimum=1),
        )

        conv_data = _section(data, "convergence")
        dts = [float(v) for v in conv_data.get("dts", [0.04, 0.02, 0.01, 0.005])]
        n_ys = [int(v) for v in conv_data.get("n_ys", [11, 21, 41])]
        if any(not v > 0.0 for v in dts) or any(v < 3 for v in n_ys):
            raise ConfigError("[convergence]: dts must be > 0 and n_ys >= 3")
        convergence = ConvergenceSection(
            N=_positive(conv_data, "N", 10.0, "convergence"),
            dts=dts,
            n_ys=n_ys,
            domain=bool(conv_data.get("domain", True)),
            ladder=bool(conv_data.get("ladder", False)),
        )

        output = _section(data, "output")
        directory = out_dir or _relative(output.get("dir"), base_dir) or defaults.out_dir

        config = cls(model=model, grid=grid, singular=singular, finite_N=finite_N, mc=mc,
                     verify=verify, convergence=convergence, out_dir=directory)
        config.build_grid()
        return config


def _load_model_entry(data: Dict[str, Any], base_dir: str) -> LoadedModel:
    has_model, has_preset = "model" in data, "preset" in data
    if has_model == has_preset:
        raise ConfigError("run file needs exactly one of 'model' or 'preset'")
    try:
        if has_preset:
            name = data["preset"]
            if name not in PRESETS:
                raise ConfigError(f"unknown preset '{name}' (expected one of {', '.join(PRESETS)})")
            params = _section(data, "preset_params")
            return preset_model(name,
                                Lambda=_positive(params, "Lambda", 1.0, "preset_params"),
                                kappa0=_positive(params, "kappa0", 1.0, "preset_params"),
                                mu=_number(params, "mu", 1.0, "preset_params"),
                                T=_positive(params, "T", 1.0, "preset_params"))
        return load_model(_relative(data["model"], base_dir))
    except ModelError as e:
        raise ConfigError(f"invalid model: {str(e)}") from None


def _section(data: Dict[str, Any], name: str) -> Dict[str, Any]:
    section = data.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"[{name}] must be a table")
    return section


def _relative(path: Optional[str], base_dir: str) -> Optional[str]:
    if path is None or os.path.isabs(path):
        return path
    return os.path.join(base_dir, path)


def _number(data: Dict[str, Any], key: str, default: Optional[float], section: str) -> float:
    value = data.get(key, default)
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf"):
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"[{section}]: '{key}' must be a number, got {value!r}")
    return float(value)


def _positive(data: Dict[str, Any], key: str, default: Optional[float], section: str) -> float:
    value = _number(data, key, default, section)
    if not value > 0.0:
        raise ConfigError(f"[{section}]: '{key}' must be > 0, got {value}")
    return value


def _integer(data: Dict[str, Any], key: str, default: int, section: str, minimum: int = 0) -> int:
    value = data.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"[{section}]: '{key}' must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"[{section}]: '{key}' must be >= {minimum}, got {value}")
    return value
