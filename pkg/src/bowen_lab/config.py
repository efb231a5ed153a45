"""Run configuration: a single JSON document, validated strictly."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from . import charts as ch
from . import systems as sysm
from .errors import ConfigError

SUITES = ("linearize", "distortion", "spectrum", "splitting", "full")


@dataclass(frozen=True)
class RunConfig:
    system: str = "pcat"
    params: dict = field(default_factory=dict)
    seed: int = 0
    suite: str = "full"
    eps: float = 0.1
    delta: float = 0.02
    rho: float = 0.3
    p_max: int = 12
    horizon: int = 60
    centers: int = 16
    budget: int = 200_000
    out_dir: str = "out"
    alpha: float = 0.5
    slab: Optional[float] = None

    def make_system(self):
        return sysm.make_system(self.system, **self.params)

    def echo(self) -> dict:
        return asdict(self)


KEYS = tuple(RunConfig.__dataclass_fields__)
_INTS = ("seed", "p_max", "horizon", "centers", "budget")
_REALS = ("eps", "delta", "rho", "alpha")


def _number(key, value, kind):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{key} must be an integer")
        return int(value)
    return float(value)


def validate(cfg: RunConfig) -> RunConfig:
    """Check the invariants of a configuration (raises :class:`ConfigError`)."""
    if cfg.suite not in SUITES:
        raise ConfigError(f"unknown suite {cfg.suite!r}; choose from {', '.join(SUITES)}")
    for k in _INTS:
        v = getattr(cfg, k)
        if k != "seed" and v < 1:
            raise ConfigError(f"{k} must be >= 1")
        if k == "seed" and v < 0:
            raise ConfigError("seed must be >= 0")
    if not 0 < cfg.delta <= cfg.eps <= ch.EPS1:
        raise ConfigError(f"need 0 < delta <= eps <= {ch.EPS1}")
    if not 0 < cfg.rho < 1:
        raise ConfigError("rho must lie in (0, 1)")
    if cfg.alpha <= 0:
        raise ConfigError("alpha must be positive")
    if cfg.slab is not None and not cfg.slab > 0:
        raise ConfigError("slab must be positive")
    if cfg.horizon < 10:
        raise ConfigError("horizon must be >= 10")
    try:
        cfg.make_system()
    except Exception as exc:  # unknown system or bad parameters
        raise ConfigError(f"invalid system: {exc}") from exc
    return cfg


def from_dict(doc: dict) -> RunConfig:
    """Build a configuration from a parsed JSON object; unknown keys are rejected."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(doc) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    kw = {}
    for k, v in doc.items():
        if k in _INTS:
            kw[k] = _number(k, v, int)
        elif k in _REALS:
            kw[k] = _number(k, v, float)
        elif k == "slab":
            kw[k] = None if v is None else _number(k, v, float)
        elif k == "params":
            if not isinstance(v, dict):
                raise ConfigError("params must be an object")
            kw[k] = {str(a): _number(f"params.{a}", b, float) for a, b in v.items()}
        else:
            if not isinstance(v, str):
                raise ConfigError(f"{k} must be a string")
            kw[k] = v
    return validate(RunConfig(**kw))


def load(path: str, **overrides) -> RunConfig:
    """Read a JSON configuration file and apply command-line overrides."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from exc
    cfg = from_dict(doc)
    extra = {k: v for k, v in overrides.items() if v is not None}
    return validate(replace(cfg, **extra)) if extra else cfg
