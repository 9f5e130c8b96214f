"""Strict experiment configuration (TOML).

Every key is declared in :data:`SCHEMA`; unknown keys, missing required
blocks and type mismatches raise :class:`ConfigError` naming the key.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from typing import Any

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXPERIMENTS = ("gen-path", "levy-check", "taylor-order", "check-viscosity", "convert", "solve-fd",
               "solve-characteristics", "feynman-kac", "compare", "envelope")

NUM = (int, float)
NUMS = "numbers"

# block -> key -> (type, default); default REQUIRED marks a mandatory key
REQUIRED = object()
SCHEMA: dict[str, dict[str, tuple]] = {
    "path": {"T": (NUM, 1.0), "N": (int, 4096), "refine": (int, 1), "count": (int, 1), "file": (str, "")},
    "coefficients": {"family": (str, REQUIRED), "params": (dict, {})},
    "field": {"family": (str, REQUIRED), "params": (dict, {}), "corrupt": (NUM, 0.0)},
    "initial": {"family": (str, REQUIRED), "params": (dict, {})},
    "upper": {"family": (str, REQUIRED), "params": (dict, {})},
    "lattice": {"delta_exps": (NUMS, REQUIRED), "coeffs": (NUMS, [-2, -1, 0, 1, 2]), "pairing": (str, "matched")},
    "points": {"t": (NUMS, []), "x": (NUMS, []), "count": (int, 0), "t_range": (NUMS, [0.1, 1.0]),
               "x_range": (NUMS, [-2.0, 2.0])},
    "grid": {"x_lo": (NUM, -10.0), "x_hi": (NUM, 10.0), "n_x": (int, 401), "boundary": (str, "dirichlet")},
    "solver": {"scheme": (str, "stratonovich"), "t_end": (NUM, 0.0), "record_every": (int, 1)},
    "mc": {"samples": (int, 10_000), "inner_mesh": (int, 50), "t": (NUM, REQUIRED), "box": (NUMS, [-10.0, 10.0]),
           "box_n": (int, 401)},
    "reduced": {"a": (NUM, 0.5), "b": (NUM, 0.0), "c": (NUM, 0.0), "psi": (NUM, 0.0)},
    "transform": {"lam": (NUM, 1.0)},
    "envelope": {"eps": (NUMS, REQUIRED)},
    "tolerances": {"chen": (NUM, 1e-10), "slope": (NUM, 1.2), "alpha": (NUM, 0.25), "tau": (NUM, 0.05),
                   "f_tol": (NUM, 1e-9), "order_gap": (NUM, 1e-6), "identity": (NUM, 1e-10),
                   "quota": (NUM, 0.8)},
}

TOP = {"experiment": str, "seed": int, "dims": NUMS, "output": str}

NEEDS: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    # experiment: (required blocks, optional blocks)
    "gen-path": (("path",), ()),
    "levy-check": (("path",), ("tolerances",)),
    "taylor-order": (("path", "coefficients", "field", "lattice", "points"), ("tolerances",)),
    "check-viscosity": (("path", "coefficients", "field", "lattice", "points"), ("tolerances",)),
    "convert": (("path", "coefficients", "field", "lattice", "points", "transform"), ("tolerances",)),
    "solve-fd": (("path", "coefficients", "initial", "grid"), ("solver",)),
    "solve-characteristics": (("path", "coefficients", "initial", "points", "mc"), ()),
    "feynman-kac": (("initial", "points", "mc", "reduced"), ()),
    "compare": (("path", "coefficients", "initial", "upper", "grid"), ("tolerances", "solver")),
    "envelope": (("path", "coefficients", "initial", "grid", "envelope"), ("solver",)),
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    dims: tuple[int, int]
    output: str
    blocks: dict = field(default_factory=dict)

    def block(self, name: str) -> dict:
        """Block values with schema defaults filled in."""
        given = self.blocks.get(name, {})
        return {k: copy.deepcopy(given.get(k, default)) for k, (_, default) in SCHEMA[name].items()}

    def has(self, name: str) -> bool:
        return name in self.blocks

    def to_dict(self) -> dict:
        out = {"experiment": self.experiment, "seed": self.seed, "dims": list(self.dims), "output": self.output}
        out.update(copy.deepcopy(self.blocks))
        return out


def _check_type(where: str, value: Any, kind) -> None:
    if kind is NUMS:
        ok = isinstance(value, list) and all(isinstance(v, NUM) and not isinstance(v, bool) for v in value)
    elif kind is dict:
        ok = isinstance(value, dict) and all(isinstance(v, NUM + (str, list)) for v in value.values())
    elif kind is NUM:
        ok = isinstance(value, NUM) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind) and not isinstance(value, bool)
    if not ok:
        raise ConfigError(f"key '{where}' has the wrong type ({type(value).__name__})")


def from_dict(doc: dict) -> ExperimentConfig:
    doc = copy.deepcopy(doc)
    for key in ("experiment", "seed"):
        if key not in doc:
            raise ConfigError(f"missing required key '{key}'")
    exp = doc["experiment"]
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment '{exp}' (key 'experiment')")
    blocks = {}
    for key, value in doc.items():
        if key in TOP:
            _check_type(key, value, TOP[key])
            continue
        if key not in SCHEMA:
            raise ConfigError(f"unknown key '{key}'")
        required, optional = NEEDS[exp]
        if key not in required + optional:
            raise ConfigError(f"block '{key}' is not used by experiment '{exp}'")
        if not isinstance(value, dict):
            raise ConfigError(f"key '{key}' must be a table")
        for sub, v in value.items():
            if sub not in SCHEMA[key]:
                raise ConfigError(f"unknown key '{key}.{sub}'")
            _check_type(f"{key}.{sub}", v, SCHEMA[key][sub][0])
        for sub, (_, default) in SCHEMA[key].items():
            if default is REQUIRED and sub not in value:
                raise ConfigError(f"missing required key '{key}.{sub}'")
        blocks[key] = value
    for name in NEEDS[exp][0]:
        if name not in blocks:
            raise ConfigError(f"experiment '{exp}' needs block '{name}'")
    seed = doc["seed"]
    if seed < 0 or seed >= 2 ** 64:
        raise ConfigError("key 'seed' must be an unsigned 64-bit integer")
    dims = doc.get("dims", [1, 1])
    if len(dims) != 2 or any(int(v) != v or v < 1 for v in dims):
        raise ConfigError("key 'dims' must be two positive integers [d, d']")
    return ExperimentConfig(exp, int(seed), (int(dims[0]), int(dims[1])), doc.get("output", "out"), blocks)


def parse_config(text: str) -> ExperimentConfig:
    """Parse TOML text; duplicate keys are rejected by the TOML grammar."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return from_dict(doc)
