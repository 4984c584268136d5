"""
Loads models from TOML files and closed-form presets.
"""

import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, Optional

from model.coefficients import CoefficientField, DarkPoolAtom, DarkPoolMeasure
from model.model_spec import ModelSpec
from utils.errors import ConfigError, ModelError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

COEFFICIENT_KEYS = {"b": "b", "sigma": "sigma", "sigma_bar": "sigma_bar",
                    "eta": "eta", "lambda": "lam"}

PRESETS = ("uhat_benchmark", "envelope_upper", "envelope_lower")


@dataclass
class LoadedModel:
    """
    A model plus, for presets, the closed form of its singular value.

    Attributes:
        spec: The model
        source: File path or preset name
        closed_form: ClosedFormValue kind of the singular solution, if known
    """
    spec: ModelSpec
    source: str
    closed_form: Optional[str] = None


def read_toml(path: str) -> Dict[str, Any]:
    """
    Read a TOML file.

    Raises:
        ConfigError: If the file is missing or not valid TOML
    """
    if not os.path.isfile(path):
        raise ConfigError(f"file not found: {path}")
    try:
        with open(path, "rb") as handle:
            return tomllib.load(handle)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: invalid TOML: {str(e)}") from None


def model_from_dict(data: Dict[str, Any]) -> ModelSpec:
    """
    Build a ModelSpec from the [coefficients], [dark_pool] and [constants] tables.

    Raises:
        ModelError: On missing or malformed entries
    """
    coefficients = data.get("coefficients")
    if not isinstance(coefficients, dict):
        raise ModelError("model needs a [coefficients] table")
    unknown = set(coefficients) - set(COEFFICIENT_KEYS)
    if unknown:
        raise ModelError(f"unknown coefficients: {sorted(unknown)}")
    fields = {}
    for key, name in COEFFICIENT_KEYS.items():
        if key not in coefficients:
            if key in ("b", "sigma"):
                fields[name] = CoefficientField.constant(0.0)
                continue
            raise ModelError(f"coefficient '{key}' is required")
        fields[name] = CoefficientField.from_dict(coefficients[key])

    atoms = []
    for entry in data.get("dark_pool", {}).get("atoms", []):
        try:
            atoms.append(DarkPoolAtom(int(entry["z_id"]), CoefficientField.from_dict(entry["gamma"]),
                                      float(entry["mu"])))
        except KeyError as e:
            raise ModelError(f"dark-pool atom missing {e}") from None

    constants = data.get("constants", {})
    return ModelSpec(dark_pool=DarkPoolMeasure(tuple(atoms)),
                     T=float(constants.get("T", 1.0)),
                     lambda_override=constants.get("Lambda"),
                     **fields)


def load_model(path: str) -> LoadedModel:
    """Load a model file."""
    spec = model_from_dict(read_toml(path))
    logger.debug("loaded model %s: %s", path, spec.describe())
    return LoadedModel(spec, path)


def preset_model(name: str, Lambda: float = 1.0, kappa0: float = 1.0, mu: float = 1.0,
                 T: float = 1.0) -> LoadedModel:
    """
    Closed-form presets.

    uhat_benchmark: lambda = eta = sigma_bar = Lambda, no dark pool, value Lambda coth(T-t).
    envelope_upper: (lambda, gamma, eta) = (Lambda, +inf, Lambda) with weight mu.
    envelope_lower: (lambda, gamma, eta) = (0, 0, kappa0) with weight mu, Lambda kept as override.

    Raises:
        ConfigError: On an unknown preset name
    """
    sigma_bar = min(1.0, Lambda)
    if name == "uhat_benchmark":
        spec = ModelSpec.constant(lam=Lambda, eta=Lambda, sigma_bar=Lambda, T=T)
        return LoadedModel(spec, name, "u_hat")
    if name == "envelope_upper":
        pool = DarkPoolMeasure((DarkPoolAtom(0, CoefficientField.constant(float("inf")), mu),))
        spec = ModelSpec.constant(lam=Lambda, eta=Lambda, sigma_bar=sigma_bar, dark_pool=pool, T=T)
        return LoadedModel(spec, name, "u_hat")
    if name == "envelope_lower":
        pool = DarkPoolMeasure((DarkPoolAtom(0, CoefficientField.constant(0.0), mu),))
        spec = ModelSpec.constant(lam=0.0, eta=kappa0, sigma_bar=sigma_bar, dark_pool=pool, T=T,
                                  lambda_override=max(Lambda, kappa0, sigma_bar))
        return LoadedModel(spec, name, "u_bar_limit")
    raise ConfigError(f"unknown preset '{name}' (expected one of {', '.join(PRESETS)})")
