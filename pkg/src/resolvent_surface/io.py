"""Run configuration and output files.

CSV files start with ``#`` comment lines carrying the schema version,
config hash and seed, followed by a header row; numbers are written with
17 significant digits. JSON documents carry the same keys at top level.
Timestamps only go to the ``.meta.json`` sidecar so that the data files
are reproducible byte for byte.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .dynamics import DEFAULT_TOL, Tolerances
from .models import ConfigError, HamiltonianModel

SCHEMA_VERSION = 1
OUT_ENV = "RESOLVENT_SURFACE_OUT"
TOP_KEYS = {"schema_version", "model", "seed", "tolerances", "params"}


def fmt(v) -> str:
    """One CSV cell: floats at 17 significant digits, ints and strings as is."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _plain(obj):
    """JSON-ready copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _plain(float(obj.real)), "im": _plain(float(obj.imag))}
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


@dataclass
class RunConfig:
    """Model, command parameters, tolerance overrides and seed of one run."""

    command: str
    model: HamiltonianModel | None
    params: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    seed: int = 0

    def tol(self) -> Tolerances:
        return Tolerances(**{**{f.name: getattr(DEFAULT_TOL, f.name) for f in fields(Tolerances)},
                             **self.tolerances})

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "command": self.command,
                "model": None if self.model is None else self.model.to_dict(),
                "params": copy.deepcopy(self.params), "tolerances": dict(self.tolerances),
                "seed": self.seed}

    @property
    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()[:16]

    def header(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "config_hash": self.hash, "seed": self.seed}


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    extra = set(doc) - TOP_KEYS
    if extra:
        raise ConfigError(f"{sorted(extra)[0]}: unexpected top-level key in config")
    if doc.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported {doc['schema_version']!r}")
    return doc


def check_tolerances(tols: dict) -> dict:
    names = {f.name for f in fields(Tolerances)}
    out = {}
    for key, value in tols.items():
        if key not in names:
            raise ConfigError(f"tolerances.{key}: unknown (allowed: {sorted(names)})")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"tolerances.{key}: expected a number")
        if not value > 0:
            raise ConfigError(f"tolerances.{key}: must be > 0")
        out[key] = int(value) if key == "max_steps" else float(value)
    return out


def output_dir(flag: str | None) -> str:
    d = flag or os.environ.get(OUT_ENV) or "."
    try:
        os.makedirs(d, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"out: cannot create {d}: {exc.strerror}") from None
    if not os.access(d, os.W_OK):
        raise ConfigError(f"out: directory {d} is not writable")
    return d


def write_csv(path, header, rows, cfg: RunConfig):
    with open(path, "w", newline="") as fh:
        for k, v in cfg.header().items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    """(meta dict, header, float array) of a file written by write_csv."""
    meta, lines = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].partition(":")
                meta[k.strip()] = v.strip()
            else:
                lines.append(line)
    rows = list(csv.reader(lines))
    data = np.array([[float(c) for c in r] for r in rows[1:]]) if len(rows) > 1 else np.empty((0, 0))
    return meta, rows[0], data


def write_json(path, payload: dict, cfg: RunConfig):
    doc = {**cfg.header(), "config": cfg.to_dict(), **payload}
    with open(path, "w") as fh:
        json.dump(_plain(doc), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def write_sidecar(path, cfg: RunConfig, outputs, argv=None):
    from . import __version__
    doc = {**cfg.header(), "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
           "argv": list(sys.argv if argv is None else argv), "outputs": list(outputs),
           "version": __version__, "python": platform.python_version(),
           "numpy": np.__version__}
    with open(path, "w") as fh:
        json.dump(_plain(doc), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path
