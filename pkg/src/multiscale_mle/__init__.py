"""Parameter estimation for small-noise diffusions with periodic fast-scale coefficients."""

from .errors import ConfigError, NumericalError
from .model import ModelSpec, Path, Regime, ScaleParams, builtin_model, classify_regime

__all__ = [
    "ConfigError",
    "ModelSpec",
    "NumericalError",
    "Path",
    "Regime",
    "ScaleParams",
    "builtin_model",
    "classify_regime",
]
