"""Hamiltonian model catalogue and its JSON configuration document.

All models are mechanical, ``H = |p|^2/2 + V(q)``, with

==================  ===================================================
kind                potential
==================  ===================================================
harmonic1d          omega^2 q^2 / 2
quartic1d           beta q^4 / 4
doublewell1d        -omega^2 q^2 / 2 + beta q^4 / 4
ho2d                (omega1^2 q1^2 + omega2^2 q2^2) / 2
coupledquartic2d    beta (q1^4 + q2^4) / 4 + coupling q1^2 q2^2 / 2
==================  ===================================================
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import _kernels as kern


class ConfigError(ValueError):
    """Invalid model or run configuration."""


class DomainError(ValueError):
    """Requested quantity does not exist for the given inputs."""


class IntegrationError(RuntimeError):
    """Trajectory integration failed (step underflow, overflow, budget)."""


KINDS = {
    "harmonic1d": kern.HARMONIC1D,
    "quartic1d": kern.QUARTIC1D,
    "doublewell1d": kern.DOUBLEWELL1D,
    "ho2d": kern.HO2D,
    "coupledquartic2d": kern.COUPLEDQUARTIC2D,
}

_PARAM_SLOTS = {
    "omega": kern.P_OMEGA,
    "omega1": kern.P_OMEGA1,
    "omega2": kern.P_OMEGA2,
    "beta": kern.P_BETA,
    "coupling": kern.P_COUPLING,
}

# parameters each kind reads, with defaults
_KIND_PARAMS = {
    "harmonic1d": {"omega": 1.0},
    "quartic1d": {"beta": 1.0},
    "doublewell1d": {"omega": 1.0, "beta": 1.0},
    "ho2d": {"omega1": 1.0, "omega2": math.sqrt(2.0)},
    "coupledquartic2d": {"beta": 1.0, "coupling": 8.0},
}

_POSITIVE = ("omega", "omega1", "omega2", "beta")

DOF = {
    "harmonic1d": 1,
    "quartic1d": 1,
    "doublewell1d": 1,
    "ho2d": 2,
    "coupledquartic2d": 2,
}

# degree of homogeneity of V, where V is homogeneous
HOMOGENEOUS_DEGREE = {
    "harmonic1d": 2,
    "quartic1d": 4,
    "ho2d": 2,
    "coupledquartic2d": 4,
}


@dataclass(frozen=True)
class HamiltonianModel:
    kind: str
    params: Mapping[str, float] = field(default_factory=dict)
    hbar: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(
                f"kind: unknown model kind {self.kind!r}; expected one of {sorted(KINDS)}")
        allowed = _KIND_PARAMS[self.kind]
        merged = dict(allowed)
        for key, value in dict(self.params).items():
            if key not in allowed:
                raise ConfigError(
                    f"params.{key}: not a parameter of {self.kind} "
                    f"(allowed: {sorted(allowed)})")
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ConfigError(f"params.{key}: expected a number, got {value!r}") from None
            if not math.isfinite(value):
                raise ConfigError(f"params.{key}: must be finite")
            if key in _POSITIVE and value <= 0:
                raise ConfigError(f"params.{key}: must be > 0, got {value}")
            merged[key] = value
        if self.kind == "coupledquartic2d" and merged["coupling"] <= -merged["beta"]:
            raise ConfigError("params.coupling: must exceed -beta for a bounded potential")
        try:
            hbar = float(self.hbar)
        except (TypeError, ValueError):
            raise ConfigError(f"hbar: expected a number, got {self.hbar!r}") from None
        if not (math.isfinite(hbar) and hbar > 0):
            raise ConfigError(f"hbar: must be a positive finite number, got {self.hbar!r}")
        object.__setattr__(self, "params", merged)
        object.__setattr__(self, "hbar", hbar)

    @property
    def code(self) -> int:
        return KINDS[self.kind]

    @property
    def dof(self) -> int:
        return DOF[self.kind]

    @property
    def param_vector(self) -> np.ndarray:
        vec = np.zeros(5)
        for key, value in self.params.items():
            vec[_PARAM_SLOTS[key]] = value
        return vec

    @property
    def homogeneous_degree(self):
        return HOMOGENEOUS_DEGREE.get(self.kind)

    def potential(self, q) -> float:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        L = self.dof
        return float(kern.potential(self.code, self.param_vector, q,
                                    np.zeros(L), np.zeros((L, L))))

    def energy(self, x) -> float:
        x = np.asarray(x, dtype=float)
        L = self.dof
        return 0.5 * float(x[L:] @ x[L:]) + self.potential(x[:L])

    def energies(self, xs) -> np.ndarray:
        xs = np.ascontiguousarray(np.atleast_2d(xs), dtype=float)
        return kern.hamiltonian_batch(self.code, self.param_vector, self.dof, xs)

    def velocity(self, x) -> np.ndarray:
        """Phase-space velocity J dH/dx."""
        _, g, _ = evaluate(self, x)
        L = self.dof
        return np.concatenate([g[L:], -g[:L]])

    @property
    def potential_minimum(self) -> float:
        if self.kind == "doublewell1d":
            w2 = self.params["omega"] ** 2
            return -w2 * w2 / (4.0 * self.params["beta"])
        return 0.0

    @property
    def barrier_energy(self):
        """Separatrix energy for the double well, else None."""
        return 0.0 if self.kind == "doublewell1d" else None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(sorted(self.params.items())),
                "hbar": self.hbar}

    def model_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, doc) -> "HamiltonianModel":
        if not isinstance(doc, Mapping):
            raise ConfigError("model: expected a JSON object")
        extra = set(doc) - {"kind", "params", "hbar"}
        if extra:
            raise ConfigError(f"{sorted(extra)[0]}: unexpected key in model document")
        if "kind" not in doc:
            raise ConfigError("kind: missing required key")
        if not isinstance(doc["kind"], str):
            raise ConfigError("kind: expected a string")
        params = doc.get("params", {})
        if not isinstance(params, Mapping):
            raise ConfigError("params: expected an object of name -> number")
        for key, value in params.items():
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"params.{key}: expected a number, got {value!r}")
        hbar = doc.get("hbar", 1.0)
        if isinstance(hbar, bool) or not isinstance(hbar, (int, float)):
            raise ConfigError(f"hbar: expected a number, got {hbar!r}")
        return cls(doc["kind"], dict(params), hbar)

    @classmethod
    def from_json(cls, text: str) -> "HamiltonianModel":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(doc)


def evaluate(model: HamiltonianModel, x):
    """Value, gradient dH/dx and Hessian of H at phase point ``x = (q, p)``."""
    x = np.asarray(x, dtype=float).ravel()
    L = model.dof
    if x.shape != (2 * L,):
        raise ConfigError(f"x: expected {2 * L} phase-space components, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DomainError("x: phase point must be finite")
    grad = np.zeros(L)
    hess = np.zeros((L, L))
    v = kern.potential(model.code, model.param_vector, x[:L].copy(), grad, hess)
    p = x[L:]
    value = 0.5 * float(p @ p) + v
    gradient = np.concatenate([grad, p])
    hessian = np.zeros((2 * L, 2 * L))
    hessian[:L, :L] = hess
    hessian[L:, L:] = np.eye(L)
    return value, gradient, hessian


def symplectic_j(L: int) -> np.ndarray:
    """Skew matrix with x ^ x' = (J x) . x' = p.q' - q.p'."""
    J = np.zeros((2 * L, 2 * L))
    J[:L, L:] = np.eye(L)
    J[L:, :L] = -np.eye(L)
    return J
