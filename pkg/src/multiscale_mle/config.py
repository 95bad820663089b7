"""Experiment configuration in JSON syntax.

Layout::

    {
      "model":  {"name": "langevin-cos-sin", "options": {"D": 0.5}},
      "scale":  {"epsilon": 0.1, "delta": 0.01, "regime": 1, "gamma": null},
      "run":    {"theta_true": [0.1, 1, 2], "T": 1.0, "target_error": 0.001,
                 "seed": 2024, "M": 100, "x0": 1.0, "kind": "pseudo"},
      "output": {"directory": "out", "stride": 1, "bins": 20}
    }

``run.step`` may replace ``run.target_error``; ``run.theta_domain``
narrows the model's parameter interval.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import math
import re
from dataclasses import dataclass, field

from .dynamics import DEFAULT_TARGET_ERROR, step_bound, steps_for
from .errors import ConfigError
from .likelihood import LikelihoodKind
from .model import ModelSpec, Regime, ScaleParams, builtin_model, classify_regime

_SECTIONS = {
    "model": {"name", "options"},
    "scale": {"epsilon", "delta", "regime", "gamma"},
    "run": {
        "theta_true",
        "theta_domain",
        "T",
        "step",
        "target_error",
        "seed",
        "M",
        "x0",
        "kind",
        "ode_step",
        "allow_coarse_step",
    },
    "output": {"directory", "stride", "bins"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    model_name: str
    model_options: tuple[tuple[str, float], ...] = ()
    epsilon: float = 0.1
    delta: float = 0.01
    regime: Regime = Regime.REGIME1
    gamma: float | None = None
    theta_true: tuple[float, ...] = (1.0,)
    theta_domain: tuple[float, float] | None = None
    horizon: float = 1.0
    step: float | None = None
    target_error: float = DEFAULT_TARGET_ERROR
    seed: int = 0
    M: int = 100
    x0: float = 1.0
    kind: LikelihoodKind = LikelihoodKind.PSEUDO
    ode_step: float = 1e-3
    allow_coarse_step: bool = False
    output_dir: str = "out"
    stride: int = 1
    bins: int = 20
    source: str = field(default="<memory>", compare=False)

    def __post_init__(self):
        self.scale  # validates epsilon, delta, regime, gamma
        if not self.horizon > 0:
            raise ConfigError("run.T: horizon must be positive")
        if self.step is not None and not self.step > 0:
            raise ConfigError("run.step: must be positive")
        if not self.target_error > 0:
            raise ConfigError("run.target_error: must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("run.seed: must be an unsigned 64-bit integer")
        if self.M < 2:
            raise ConfigError("run.M: need at least two replications")
        if not self.theta_true:
            raise ConfigError("run.theta_true: at least one value required")
        if self.stride < 1:
            raise ConfigError("output.stride: must be >= 1")
        if self.bins < 1:
            raise ConfigError("output.bins: must be >= 1")
        model = self.model()
        for t in self.theta_true:
            if not model.contains(t):
                raise ConfigError(f"run.theta_true: {t!r} outside the parameter domain {model.theta_domain}")

    @property
    def scale(self) -> ScaleParams:
        try:
            return ScaleParams(self.epsilon, self.delta, self.regime, self.gamma)
        except ConfigError as exc:
            raise ConfigError(f"scale: {exc}") from None

    def model(self) -> ModelSpec:
        return _cached_model(self.model_name, self.model_options, self.theta_domain)

    def resolved_step(self, scale: ScaleParams | None = None) -> float:
        """Configured step, or the largest uniform step under the step bound."""
        scale = scale or self.scale
        if self.step is not None:
            return self.step
        return self.horizon / steps_for(self.horizon, step_bound(scale, self.target_error))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


@functools.lru_cache(maxsize=32)
def _cached_model(name, options, theta_domain) -> ModelSpec:
    model = builtin_model(name, dict(options))
    if theta_domain is not None:
        try:
            model = dataclasses.replace(model, theta_domain=tuple(theta_domain))
        except ConfigError as exc:
            raise ConfigError(f"run.theta_domain: {exc}") from None
    return model


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


class _Reader:
    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source

    def fail(self, fieldname: str, msg: str):
        line = _line_of(self.text, fieldname.rsplit(".", 1)[-1])
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: field '{fieldname}': {msg}")

    def number(self, block, section, key, default=None, required=False, integer=False):
        name = f"{section}.{key}"
        if key not in block or block[key] is None:
            if required:
                self.fail(name, "missing required field")
            return default
        v = block[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(name, f"expected a number, got {v!r}")
        if integer:
            if isinstance(v, float) and not v.is_integer():
                self.fail(name, f"expected an integer, got {v!r}")
            return int(v)
        if not math.isfinite(v):
            self.fail(name, "must be finite")
        return float(v)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate; errors name the offending field and its line."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    r = _Reader(text, source)
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be an object")
    for section, block in raw.items():
        if section not in _SECTIONS:
            r.fail(section, "unknown section")
        if not isinstance(block, dict):
            r.fail(section, "expected an object")
        for key in block:
            if key not in _SECTIONS[section]:
                r.fail(f"{section}.{key}", "unknown field")

    model = raw.get("model")
    if model is None:
        r.fail("model", "missing required section")
    name = model.get("name")
    if not isinstance(name, str) or not name:
        r.fail("model.name", "missing required field" if name is None else f"expected a string, got {name!r}")
    options = model.get("options", {}) or {}
    if not isinstance(options, dict):
        r.fail("model.options", "expected an object")
    for k, v in options.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            r.fail(f"model.options.{k}", f"expected a number, got {v!r}")

    scale = raw.get("scale")
    if scale is None:
        r.fail("scale", "missing required section")
    run = raw.get("run", {})
    out = raw.get("output", {})

    theta_true = run.get("theta_true", 1.0)
    if isinstance(theta_true, (int, float)) and not isinstance(theta_true, bool):
        theta_true = [theta_true]
    if not isinstance(theta_true, list) or not all(
        isinstance(t, (int, float)) and not isinstance(t, bool) for t in theta_true
    ):
        r.fail("run.theta_true", "expected a number or a list of numbers")
    theta_domain = run.get("theta_domain")
    if theta_domain is not None:
        if not (isinstance(theta_domain, list) and len(theta_domain) == 2):
            r.fail("run.theta_domain", "expected [lo, hi]")
        theta_domain = (float(theta_domain[0]), float(theta_domain[1]))
    directory = out.get("directory", "out")
    if not isinstance(directory, str):
        r.fail("output.directory", "expected a string")
    allow = run.get("allow_coarse_step", False)
    if not isinstance(allow, bool):
        r.fail("run.allow_coarse_step", "expected true or false")

    try:
        regime = Regime.parse(scale.get("regime", classify_default(scale)))
    except ConfigError as exc:
        r.fail("scale.regime", str(exc))
    try:
        kind = LikelihoodKind.parse(run.get("kind", "pseudo"))
    except ConfigError as exc:
        r.fail("run.kind", str(exc))
    try:
        builtin_model(name, dict(options))
    except ConfigError as exc:
        r.fail("model.name" if "unknown model" in str(exc) else "model.options", str(exc))
    try:
        return ExperimentConfig(
            model_name=name,
            model_options=tuple(sorted((k, float(v)) for k, v in options.items())),
            epsilon=r.number(scale, "scale", "epsilon", required=True),
            delta=r.number(scale, "scale", "delta", required=True),
            regime=regime,
            gamma=r.number(scale, "scale", "gamma"),
            theta_true=tuple(float(t) for t in theta_true),
            theta_domain=theta_domain,
            horizon=r.number(run, "run", "T", 1.0),
            step=r.number(run, "run", "step"),
            target_error=r.number(run, "run", "target_error", DEFAULT_TARGET_ERROR),
            seed=r.number(run, "run", "seed", 0, integer=True),
            M=r.number(run, "run", "M", 100, integer=True),
            x0=r.number(run, "run", "x0", 1.0),
            kind=kind,
            ode_step=r.number(run, "run", "ode_step", 1e-3),
            allow_coarse_step=allow,
            output_dir=directory,
            stride=r.number(out, "output", "stride", 1, integer=True),
            bins=r.number(out, "output", "bins", 20, integer=True),
            source=source,
        )
    except ConfigError as exc:
        msg = str(exc)
        m = re.match(r"(\w+)\.(\w+): (.*)", msg)
        if m:
            r.fail(f"{m.group(1)}.{m.group(2)}", m.group(3))
        raise ConfigError(f"{source}: {msg}") from None


def classify_default(scale_block: dict):
    """Regime when the config omits it: the advisory classification."""
    eps, delta = scale_block.get("epsilon"), scale_block.get("delta")
    if isinstance(eps, (int, float)) and isinstance(delta, (int, float)) and eps > 0 and delta > 0:
        return classify_regime(float(eps), float(delta))
    return Regime.REGIME1


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
