"""Experiment configuration: a nested JSON document with one section per concern.

Sections are ``problem``, ``signal``, ``regression``, ``metric_regression``,
``scheme``, ``outputs``, plus the optional ``fit``, ``benchmark``,
``compare`` and ``concavity`` used by the matching subcommands. Missing keys
take the defaults below. ``to_dict`` writes every key back, so a loaded file
round-trips without loss.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .condexp import RegressionConfig
from .grid_paths import OUSignalParams, TimeGrid
from .impact import impact_from_config
from .kernels import kernel_from_config

DEFAULTS: dict = {
    "problem": {"gamma": 1.0, "phi": 0.0, "varrho": 0.0, "X0": 0.0,
                "kernel": {"type": "exponential", "scale": 1.0, "rate": 1.0},
                "impact": {"type": "piecewise_power", "x0": 0.5, "c": 0.8},
                "diagonal": "half"},
    "signal": {"theta": -4.0, "kappa": 1.0, "xi": 0.5, "i0": 2.0},
    "regression": {"features": ["u", "int:u", "exp:u:1"], "family": "laguerre", "degree": 4,
                   "ridge": 1e-6, "standardize": True},
    "metric_regression": None,
    "scheme": {"iterations": 30, "seed": 0, "M": 2000, "N": 200, "T": 1.0,
               "deterministic": False, "antithetic": True, "tol": None},
    "outputs": {"directory": None, "sample_paths": 5},
}

OPTIONAL_DEFAULTS: dict = {
    "fit": {"scale": 1.0, "exponent": 0.6, "shifts": [0.0, 0.01], "p_max": 5, "multistart": 16,
            "seed": 0},
    "benchmark": {"tau": 1.0, "c": 0.8, "gammas": [1.0, 0.1, 0.01]},
    "compare": {"scale": 1.0, "exponent": 0.6, "shift": 0.01, "p_max": 5, "multistart": 16},
    "concavity": {"c_values": [0.5, 0.8, 1.0]},
}


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration files."""


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("kernel", "impact"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_schema(name: str) -> dict:
    text = resources.files("nlimpact").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate_json(document: dict, schema_name: str) -> None:
    """Raise ``jsonschema.ValidationError`` if ``document`` breaks the named schema."""
    jsonschema.validate(document, load_schema(schema_name))


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse JSON and point at the offending line on failure."""
    if not text.strip():
        raise ConfigError(f"{source}: configuration file is empty")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        lines = text.splitlines()
        line = lines[exc.lineno - 1] if 0 < exc.lineno <= len(lines) else ""
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line}\n    "
                          f"{' ' * (exc.colno - 1)}^") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    try:
        validate_json(doc, "config")
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{source}: invalid value at {where}: {exc.message}") from None
    return doc


@dataclass
class ExperimentConfig:
    """Fully resolved configuration with typed accessors."""

    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        cfg = cls(_merge(DEFAULTS, doc))
        for k, v in OPTIONAL_DEFAULTS.items():
            if k in doc:
                cfg.data[k] = _merge(v, doc[k])
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
        return cls.from_dict(parse_config_text(text, str(p)))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dumps(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    def sha256(self) -> str:
        canon = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def section(self, name: str) -> dict:
        if name not in self.data:
            self.data[name] = copy.deepcopy(OPTIONAL_DEFAULTS[name])
        return self.data[name]

    def check(self) -> None:
        """Build every typed object once so bad values fail early."""
        try:
            self.kernel()
            self.impact()
            self.signal()
            self.grid()
            self.regression()
            self.metric_regression()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from None

    # typed views
    def kernel(self):
        return kernel_from_config(self.data["problem"]["kernel"])

    def impact(self):
        return impact_from_config(self.data["problem"]["impact"])

    def signal(self) -> OUSignalParams:
        s = self.data["signal"]
        return OUSignalParams(s["theta"], s["kappa"], s["xi"], s["i0"])

    def grid(self) -> TimeGrid:
        s = self.data["scheme"]
        return TimeGrid(s["T"], s["N"])

    def regression(self) -> RegressionConfig:
        return RegressionConfig.from_config(self.data["regression"])

    def metric_regression(self) -> RegressionConfig:
        m = self.data.get("metric_regression")
        return self.regression() if m is None else RegressionConfig.from_config(m)

    @property
    def deterministic(self) -> bool:
        return bool(self.data["scheme"]["deterministic"]) or self.data["signal"]["xi"] == 0
