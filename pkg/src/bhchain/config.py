"""Experiment configuration: a JSON file plus dotted ``--set`` overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fock import ModelParams, fock_dimension

HEAVY_DIM = 1000


class ConfigError(ValueError):
    pass


def default_u_grid() -> list[float]:
    """U = 0 plus 25 geometric points from 0.05 to 10."""
    return [0.0] + [float(u) for u in np.geomspace(0.05, 10, 25)]


DEFAULTS = {
    "model": {"L": 6, "N": 3, "J": 1.0, "U": 0.0, "gamma": 0.04, "dgamma": None},
    "run": {
        "method": "direct",  # "direct" (Krylov) or "propagate" (time evolution + extraction)
        "linear_response": True,  # direct method only: dgamma -> 0 limit
        "tol": 1e-6,
        "t_max": 1e5,
        "atol": 1e-12,
        "rtol": 1e-12,
        "direct_rtol": 1e-10,
        "direct_cap": 2500,
        "window": 0.6,
        "unfold_degree": 7,
        "checkpoint": True,
        "min_spectrum": 300,
    },
    "sweep": {"U": None, "N": None},
    "verify": {"sizes": [[4, 2], [6, 3]], "mutate_current_sign": False},
    "out": "out",
    "seed": 0,
    "jobs": 1,
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> dict:
    """Apply ``a.b.c=value``; value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override must look like key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config section {p!r} in {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = _parse_value(raw)
    return cfg


@dataclass
class ExperimentConfig:
    data: dict

    @classmethod
    def load(cls, path=None, overrides=(), out=None, jobs=None) -> "ExperimentConfig":
        cfg = copy.deepcopy(DEFAULTS)
        if path is not None:
            try:
                user = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            unknown = set(user) - set(DEFAULTS)
            if unknown:
                raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
            cfg = _merge(cfg, user)
        for o in overrides:
            apply_override(cfg, o)
        if out is not None:
            cfg["out"] = out
        if jobs is not None:
            cfg["jobs"] = jobs
        self = cls(cfg)
        self.params()  # validate
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        self = cls(_merge(DEFAULTS, d))
        self.params()
        return self

    def __getitem__(self, key):
        return self.data[key]

    @property
    def run(self) -> dict:
        return self.data["run"]

    @property
    def out(self) -> Path:
        return Path(self.data["out"])

    def params(self, **changes) -> ModelParams:
        m = dict(self.data["model"])
        m.update(changes)
        try:
            p = ModelParams(L=int(m["L"]), N=int(m["N"]), J=float(m["J"]), U=float(m["U"]),
                            gamma=float(m["gamma"]), dgamma=None if m["dgamma"] is None else float(m["dgamma"]))
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid model parameters: {exc}") from exc
        if p.L < 2:
            raise ConfigError(f"precondition failed: boundary driving needs L >= 2, got L={p.L}")
        if self.run["method"] not in ("direct", "propagate"):
            raise ConfigError(f"run.method must be 'direct' or 'propagate', got {self.run['method']!r}")
        return p

    def sweep_points(self) -> list[ModelParams]:
        us = self.data["sweep"]["U"]
        ns = self.data["sweep"]["N"]
        us = default_u_grid() if us is None else [float(u) for u in us]
        ns = [self.data["model"]["N"]] if ns is None else [int(n) for n in ns]
        if not us or not ns:
            raise ConfigError("sweep axes must be non-empty")
        return [self.params(N=n, U=u) for n in ns for u in us]

    def check_size(self, p: ModelParams, heavy: bool) -> None:
        dim = fock_dimension(p.L, p.N)
        if dim > HEAVY_DIM and not heavy:
            raise ConfigError(f"(L={p.L}, N={p.N}) has dimension {dim} > {HEAVY_DIM}; pass --heavy to run it")

    def header(self) -> str:
        return json.dumps(self.data, sort_keys=True)
