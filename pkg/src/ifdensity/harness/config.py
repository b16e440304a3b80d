"""Run configuration: flat ``key = value`` text with dotted sections.

Example::

    T = 2.0
    dt = 0.0001
    grid.L = 6.0
    grid.h = 0.0025
    mc.n_paths = 1000000
    pipelines = mc, fpe, series
"""

import ast
import os
from dataclasses import dataclass, fields, replace
from fractions import Fraction

PIPELINES = ("mc", "fpe", "series")

# dotted key -> attribute
_KEYS = {
    "T": "T",
    "dt": "dt",
    "grid.L": "grid_L",
    "grid.h": "grid_h",
    "mc.n_paths": "mc_n_paths",
    "mc.substep": "mc_substep",
    "mc.seed": "mc_seed",
    "ladder.tol": "ladder_tol",
    "ladder.n_cap": "ladder_n_cap",
    "series.tol": "series_tol",
    "series.keep": "series_keep",
    "fpe.store_every": "store_every",
    "fpe.warm_t0": "warm_t0",
    "initial": "initial",
    "initial.file": "initial_file",
    "initial.eps0": "initial_eps0",
    "outputs": "outputs",
    "pipelines": "pipelines",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    T: float = 2.0
    dt: float = 1e-4
    grid_L: float = 6.0
    grid_h: float = 1.0 / 400
    mc_n_paths: int = 1_000_000
    mc_substep: float = 1e-3
    mc_seed: int = 12345
    ladder_tol: float = 1e-8
    ladder_n_cap: int = 60
    series_tol: float = 1e-6
    series_keep: int = 3
    store_every: int = 10
    warm_t0: float = 0.01
    initial: str = "delta"
    initial_file: str = None
    initial_eps0: float = 0.05
    outputs: str = "out"
    pipelines: tuple = PIPELINES

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("T", "dt", "grid_L", "grid_h", "mc_substep", "ladder_tol", "series_tol", "warm_t0",
                     "initial_eps0"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.mc_n_paths < 1 or self.ladder_n_cap < 1 or self.store_every < 1:
            raise ConfigError("counts must be >= 1")
        if not self.pipelines:
            raise ConfigError("pipelines must be nonempty")
        bad = set(self.pipelines) - set(PIPELINES)
        if bad:
            raise ConfigError(f"unknown pipelines {sorted(bad)}")
        if self.initial not in ("delta", "file"):
            raise ConfigError("initial must be 'delta' or 'file'")
        if self.initial == "file":
            if not self.initial_file:
                raise ConfigError("initial = file needs initial.file")
            if not os.path.exists(self.initial_file):
                raise ConfigError(f"initial.file {self.initial_file!r} does not exist")

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


def _value(text):
    text = text.strip()
    if "/" in text and all(p.strip().lstrip("-").replace(".", "", 1).isdigit() for p in text.split("/")):
        return float(Fraction(text.replace(" ", "")))
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        attr = _KEYS[key]
        if attr == "pipelines":
            v = tuple(p.strip() for p in val.split(",") if p.strip())
        elif attr in ("initial", "initial_file", "outputs"):
            v = None if val in ("", "None") else val
        else:
            v = _value(val)
        values[attr] = v
    types = {f.name: f.type for f in fields(RunConfig)}
    for k, v in values.items():
        if types[k] is int and isinstance(v, float) and v.is_integer():
            values[k] = int(v)
        elif types[k] is float and isinstance(v, int):
            values[k] = float(v)
    return RunConfig(**values)


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def echo_config(cfg):
    """Text form that parses back to an equal RunConfig."""
    lines = []
    for key, attr in _KEYS.items():
        v = getattr(cfg, attr)
        if attr == "pipelines":
            lines.append(f"{key} = {', '.join(v)}")
        elif v is None:
            continue
        elif isinstance(v, float):
            lines.append(f"{key} = {v!r}")
        else:
            lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"
