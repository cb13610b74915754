"""TOML run configuration.

Sections ``[geometry]``, ``[material]``, ``[cell]`` and ``[run]``; unknown
sections or keys are rejected with :class:`ConfigParse`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .errors import ConfigParse

SCHEMA = {
    "geometry": {"chart", "params", "domain", "order", "point", "samples"},
    "material": {"family", "phases", "direction", "theta", "t_dependence", "t_slope", "grid"},
    "cell": {"regime", "gamma", "gamma1", "N", "P", "solver", "cg_tol", "cg_maxit", "eliminate_g"},
    "run": {"command", "out", "gammas", "threads", "seed", "displacement", "bw", "bending_tolerance",
            "A", "B", "tolerance"},
}

DEFAULTS = {
    "geometry": {"chart": "plane", "params": {}, "order": 6, "samples": 20},
    "material": {"family": "homogeneous", "phases": [{"lambda": 1.0, "mu": 1.0}], "direction": 1,
                 "theta": 0.5, "t_dependence": "none", "t_slope": 0.0},
    "cell": {"regime": "gamma", "gamma": 1.0, "N": 2, "P": 2, "solver": "cholesky", "eliminate_g": True},
    "run": {"command": "qhat", "threads": 1, "seed": 0, "gammas": [0.01, 0.1, 1.0, 10.0, 100.0],
            "tolerance": 0.02},
}


@dataclass
class RunConfig:
    geometry: dict = field(default_factory=dict)
    material: dict = field(default_factory=dict)
    cell: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    source: str = "<defaults>"

    def section(self, name: str) -> dict:
        return getattr(self, name)


def _merge(raw: dict, source: str) -> RunConfig:
    for sec, body in raw.items():
        if sec not in SCHEMA:
            raise ConfigParse(f"{source}: unknown section [{sec}]")
        if not isinstance(body, dict):
            raise ConfigParse(f"{source}: [{sec}] must be a table")
        bad = sorted(set(body) - SCHEMA[sec])
        if bad:
            raise ConfigParse(f"{source}: unknown key {sec}.{bad[0]}")
    out = {sec: {**DEFAULTS.get(sec, {}), **raw.get(sec, {})} for sec in SCHEMA}
    return RunConfig(**out, source=source)


def loads(text: str, source: str = "<string>") -> RunConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigParse(f"{source}: {exc}") from None
    return _merge(raw, source)


def load(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigParse(f"cannot read {p}: {exc.strerror}") from None
    return loads(text, str(p))


def defaults() -> RunConfig:
    return _merge({}, "<defaults>")
