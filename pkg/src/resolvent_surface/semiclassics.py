"""Semiclassical sums over classical branches and periodic orbits.

Phases follow exp(i S/hbar + i theta) with theta = -(pi/2) * (caustic count)
for forward segments. Energy-domain terms add the stationary-phase
(pi/4) sign(d^2 S_t / dt^2).
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize as spo

from .doublephase import Branch, SegmentBranchSet, centre_action, continue_branch
from .dynamics import (DEFAULT_TOL, Tolerances, flow, initial_state, period_1dof, run_kernel,
                       shell_components, split_state)
from .models import ConfigError, DomainError, HamiltonianModel, IntegrationError
from .orbits import MarginalStabilityWarning, PeriodicOrbit, maslov_repetition

log = logging.getLogger(__name__)


@dataclass
class SCTerm:
    branch_id: str
    amplitude: float
    action: float
    maslov_phase: float
    hbar: float = 1.0
    weight: float = 1.0
    duration: float = 0.0
    caustic: bool = False

    @property
    def value(self) -> complex:
        if self.caustic:
            return 0j
        return self.weight * self.amplitude * np.exp(1j * (self.action / self.hbar + self.maslov_phase))

    def to_dict(self):
        v = self.value
        return {"branch_id": self.branch_id, "amplitude": self.amplitude, "action": self.action,
                "maslov_phase": self.maslov_phase, "weight": self.weight,
                "duration": self.duration, "caustic": self.caustic,
                "value": [v.real, v.imag]}


@dataclass(frozen=True)
class SmoothingSpec:
    """Gaussian smoothing in energy (width gamma) or a Gaussian time cutoff t_max."""

    kind: str = "gaussian_energy"
    width: float = 0.1

    def __post_init__(self):
        if self.kind not in ("gaussian_energy", "gaussian_time_cutoff"):
            raise ConfigError(f"smoothing.kind: unknown kind {self.kind!r}")
        if not self.width > 0:
            raise ConfigError("smoothing.width: must be positive")

    def energy_width(self, hbar: float) -> float:
        return self.width if self.kind == "gaussian_energy" else hbar / self.width

    def weight(self, t, hbar: float):
        g = self.energy_width(hbar)
        return np.exp(-0.5 * (np.asarray(t) * g / hbar) ** 2)

    def max_time(self, hbar: float, floor: float = 1e-17) -> float:
        """Duration beyond which the weight drops below ``floor``."""
        return hbar / self.energy_width(hbar) * math.sqrt(-2.0 * math.log(floor))


@dataclass
class SpectralFunction:
    grid: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    axis: str = "E"

    def __post_init__(self):
        if len(self.grid) != len(self.values) or len(self.grid) != len(self.counts):
            raise ValueError("sample count must match the grid")

    def write_csv(self, path):
        vals = np.asarray(self.values, dtype=complex)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([self.axis, "real", "imag", "terms"])
            for g, v, c in zip(self.grid, vals, self.counts):
                w.writerow([f"{g:.17g}", f"{v.real:.17g}", f"{v.imag:.17g}", int(c)])


# --- Maslov counting ------------------------------------------------------------------

@dataclass
class MaslovCount:
    count: int
    tangential: int = 0
    indeterminate: bool = False

    def phase(self, sign: float = 1.0) -> float:
        return -math.copysign(1.0, sign) * 0.5 * math.pi * self.count


def _jacobian_track(segment, representation):
    L = segment.dof
    Ms = segment.sample_m
    if representation == "centre":
        return np.linalg.det(np.eye(2 * L)[None] + Ms)
    if representation == "position":
        return np.linalg.det(Ms[:, :L, L:])
    raise ConfigError(f"representation: expected 'centre' or 'position', got {representation!r}")


def maslov_index(obj, representation: str = "centre", tang_tol: float = 1e-7,
                 floor: float = 1e-13) -> MaslovCount:
    """Caustic count along a sampled segment or a periodic orbit.

    Transverse zeros of the representation's Jacobian (det(1+M) for centres,
    det(dq+/dp-) for positions) count once. A zero where the sampled values
    touch zero without changing sign (parabolic vertex below ``tang_tol``
    relative to the track's scale) counts twice and is reported as
    tangential. Near-zero minima that are not resolved either way are
    reported as indeterminate.
    """
    if isinstance(obj, PeriodicOrbit):
        return MaslovCount(int(obj.maslov))
    if isinstance(obj, Branch):
        obj = obj.segment
    if len(obj.sample_m) < 2:
        return MaslovCount(0)
    d = _jacobian_track(obj, representation)[1:]
    t = obj.sample_t[1:]
    scale = np.max(np.abs(d))
    if scale == 0:
        return MaslovCount(0, indeterminate=True)
    v = np.where(np.abs(d) <= floor * scale, 0.0, d)
    s = np.sign(v)
    nz = s[s != 0]
    count = int(np.count_nonzero(nz[1:] != nz[:-1]))
    tangential = 0
    indeterminate = False
    a = np.abs(d) / scale
    for k in range(1, len(d) - 1):
        if a[k] <= a[k - 1] and a[k] < a[k + 1] and s[k - 1] == s[k + 1] != 0 and a[k] < 1e-2:
            # fit a parabola through the three samples; vertex near zero means a double root
            try:
                c = np.polyfit(t[k - 1:k + 2] - t[k], d[k - 1:k + 2] / scale, 2)
            except np.linalg.LinAlgError:
                indeterminate = True
                continue
            if c[0] == 0:
                continue
            vertex = c[2] - c[1] ** 2 / (4 * c[0])
            if abs(vertex) < tang_tol or np.sign(vertex) != s[k]:
                tangential += 1
            elif a[k - 1] < 1e-4 and a[k + 1] < 1e-4:
                indeterminate = True
    return MaslovCount(count + 2 * tangential, tangential, indeterminate)


# --- Weyl propagator -------------------------------------------------------------------

def _centre_time_newton(model, x, t, xm, tol, bv_tol=1e-11, max_iter=60):
    n = 2 * model.dof

    def resid(z):
        y = run_kernel(model, initial_state(z), t, tol)[0]
        xp, M, _ = split_state(y, model.dof)
        return 0.5 * (z + xp) - x, M

    xm = np.array(xm, dtype=float)
    try:
        F, M = resid(xm)
        for _ in range(max_iter):
            if np.max(np.abs(F)) < bv_tol:
                return xm
            d = np.linalg.solve(0.5 * (np.eye(n) + M), -F)
            lam = 1.0
            while lam > 1e-4:
                z = xm + lam * d
                if np.all(np.isfinite(z)):
                    Fz, Mz = resid(z)
                    if np.linalg.norm(Fz) < np.linalg.norm(F):
                        break
                lam *= 0.5
            else:
                return None
            xm, F, M = z, Fz, Mz
    except (IntegrationError, np.linalg.LinAlgError):
        return None
    return None


def _continued_seed(model, x, t, tol, steps=None):
    """Follow the branch that starts at x- = x for t = 0 out to time t."""
    v = model.velocity(x)
    steps = steps or max(8, int(abs(t) / 0.05))
    xm = np.array(x, dtype=float)
    for s in np.linspace(t / steps, t, steps):
        guess = xm - 0.5 * (t / steps) * v if np.allclose(xm, x) else xm
        xm = _centre_time_newton(model, x, s, guess, tol)
        if xm is None:
            return None
    return xm


def weyl_propagator(model: HamiltonianModel, x, t: float, seeds=None,
                    tol: Tolerances | None = None, caustic_tol: float = 1e-8,
                    n_samples: int = 400):
    """Semiclassical Weyl symbol of exp(-i H t / hbar) at centre ``x``.

    Returns (value, terms). Branches whose |det(1 + M)| falls below
    ``caustic_tol`` are kept in ``terms`` with ``caustic=True`` and add
    nothing to the value.
    """
    tol = tol or DEFAULT_TOL.tightened(1e-2)
    x = np.asarray(x, dtype=float)
    L = model.dof
    hbar = model.hbar
    if t == 0.0:
        return 1.0 + 0j, [SCTerm("b0", 1.0, 0.0, 0.0, hbar)]
    cands = []
    cont = _continued_seed(model, x, t, tol)
    if cont is not None:
        cands.append(cont)
    for s in ([x] if seeds is None else list(seeds) + [x]):
        xm = _centre_time_newton(model, x, t, s, tol)
        if xm is not None:
            cands.append(xm)
    sols = []
    for xm in cands:
        if not any(np.linalg.norm(xm - o) < 1e-7 for o in sols):
            sols.append(xm)
    terms = []
    for j, xm in enumerate(sols):
        seg = flow(model, xm, t, tol, n_samples=n_samples, check_energy=False)
        det = float(np.linalg.det(np.eye(2 * L) + seg.monodromy))
        S_t = centre_action(seg) - seg.energy * t
        mc = maslov_index(seg, "centre")
        caustic = abs(det) < caustic_tol
        amp = math.inf if caustic else 2.0 ** L / math.sqrt(abs(det))
        terms.append(SCTerm(f"b{j}", amp, S_t, mc.phase(t), hbar, duration=t, caustic=caustic))
    if not terms:
        terms.append(SCTerm("caustic", math.inf, 0.0, 0.0, hbar, duration=t, caustic=True))
    value = sum((tm.value for tm in terms), 0j)
    return value, terms


# --- Green function / spectral Wigner ---------------------------------------------------

def _time_amplitude(branch: Branch):
    seg = branch.segment
    L = seg.dof
    M = seg.monodromy
    if branch.representation == "centre":
        return 2.0 ** L / math.sqrt(abs(np.linalg.det(np.eye(2 * L) + M))), 0.0
    return 1.0 / math.sqrt(abs(np.linalg.det(M[:L, L:]))), -0.25 * math.pi * L


def _branch_duration_at(model, branch: Branch, E: float, tol, bv_tol=1e-11, max_iter=40):
    """Duration of the continuation of ``branch`` to energy E at fixed boundary."""
    return continue_branch(model, branch, E, tol, bv_tol, max_iter, build=False)


def time_curvature(model, branch: Branch, delta: float | None = None,
                   tol: Tolerances | None = None) -> float:
    """d^2 S_t / dt^2 = -dE/dt along the branch family, from t(E +- delta)."""
    tol = tol or DEFAULT_TOL.tightened(1e-2)
    E = branch.energy
    delta = delta or 1e-5 * max(1.0, abs(E))
    tp = _branch_duration_at(model, branch, E + delta, tol)
    tm = _branch_duration_at(model, branch, E - delta, tol)
    dt = tp - tm
    if dt == 0.0:
        return math.inf
    return -2.0 * delta / dt


def green_function(model: HamiltonianModel, branches: SegmentBranchSet, smoothing=None,
                   degenerate_tol: float = 1e-7, tol: Tolerances | None = None):
    """Stationary-phase energy-domain sum over a branch set.

    For centre branches the value is the Weyl symbol of the (smoothed)
    spectral projector delta(E - H); divide by (2 pi hbar)^L to compare
    with sum_n g(E - E_n) W_n(x). Returns (value, terms, flagged).
    """
    hbar = model.hbar
    terms, flagged = [], []
    for j, b in enumerate(branches):
        try:
            curv = time_curvature(model, b, tol=tol)
        except (DomainError, np.linalg.LinAlgError, IntegrationError) as exc:
            flagged.append((j, str(exc)))
            continue
        if not np.isfinite(curv) or abs(curv) < degenerate_tol:
            flagged.append((j, "degenerate stationary phase"))
            continue
        A_t, extra = _time_amplitude(b)
        B = A_t * math.sqrt(2 * math.pi * hbar / abs(curv)) / (2 * math.pi * hbar)
        if b.representation == "position":
            B /= (2 * math.pi * hbar) ** (model.dof / 2)
        mc = maslov_index(b, b.representation)
        theta = mc.phase(b.duration) + 0.25 * math.pi * math.copysign(1.0, curv) + extra
        w = 1.0 if smoothing is None else float(smoothing.weight(b.duration, hbar))
        terms.append(SCTerm(f"b{j}", B, b.action, theta, hbar, weight=w, duration=b.duration))
    value = sum((tm.value for tm in terms), 0j)
    return value, terms, flagged


def spectral_wigner(model, branches_pos: SegmentBranchSet, smoothing=None, **kw) -> float:
    """Real spectral Wigner function sum_n g(E - E_n) W_n(x) from forward branches.

    Backward branches are the complex conjugates of forward ones, so the
    full value is twice the real part of the forward sum.
    """
    value, _, _ = green_function(model, branches_pos, smoothing, **kw)
    return 2.0 * value.real / (2 * math.pi * model.hbar) ** model.dof


# --- periodic-orbit traces -------------------------------------------------------------

def continue_orbit(po: PeriodicOrbit, E: float, degree: float | None):
    """(action, period) of ``po`` at energy E.

    Homogeneous potentials of degree d scale exactly: S ~ E^(1/2 + 1/d),
    tau ~ E^(1/d - 1/2), with the monodromy unchanged. Otherwise a
    first-order continuation dS/dE = tau is used.
    """
    if degree is not None:
        lam = E / po.energy
        if lam <= 0:
            raise DomainError("scaling continuation needs energies of the same sign")
        return po.action * lam ** (0.5 + 1.0 / degree), po.period * lam ** (1.0 / degree - 0.5)
    return po.action + po.period * (E - po.energy), po.period


def _loop_data_1dof(model, E):
    out = []
    try:
        comps = shell_components(model, E)
    except DomainError:
        return out
    for c in range(len(comps)):
        tau, S = period_1dof(model, E, c)
        out.append((tau, S))
    return out


def _repetition_cap(tau_min, smoothing, hbar, cap):
    r_auto = max(1, int(smoothing.max_time(hbar) / tau_min) + 1)
    return r_auto if cap is None else min(cap, r_auto)


def trace_resolvent_osc(model: HamiltonianModel, E_grid, smoothing: SmoothingSpec,
                        orbits=None, repetition_cap: int | None = None,
                        baseline: SmoothingSpec | None = None, maslov_1dof: int = 2,
                        det_floor: float = 1e-8) -> SpectralFunction:
    """Smoothed oscillatory density of states from periodic orbits.

    1-DOF models use the shell loops at each energy (the orbit family
    reduction, amplitude tau/(pi hbar)). 2-DOF models sum over ``orbits``
    (an OrbitDatabase or list), continued in energy. ``baseline`` subtracts
    a second, wider smoothing so the result compares with
    exact_oscillatory_density.
    """
    E_grid = np.asarray(E_grid, dtype=float)
    hbar = model.hbar
    vals = np.zeros(len(E_grid))
    counts = np.zeros(len(E_grid), dtype=int)

    def window(t):
        w = smoothing.weight(t, hbar)
        if baseline is not None:
            w = w - baseline.weight(t, hbar)
        return w

    if model.dof == 1:
        deg = model.homogeneous_degree
        ref = None
        if deg is not None and np.all(E_grid > 0):
            E0 = float(np.median(E_grid))
            ref = (E0, _loop_data_1dof(model, E0))
        for i, E in enumerate(E_grid):
            if ref is not None:
                lam = E / ref[0]
                loops = [(t * lam ** (1 / deg - 0.5), S * lam ** (0.5 + 1 / deg)) for t, S in ref[1]]
            else:
                loops = _loop_data_1dof(model, E)
            for tau, S in loops:
                rmax = _repetition_cap(tau, smoothing, hbar, repetition_cap)
                r = np.arange(1, rmax + 1)
                amp = tau / (math.pi * hbar) * window(r * tau)
                vals[i] += np.sum(amp * np.cos(r * S / hbar - r * maslov_1dof * math.pi / 2))
                counts[i] += rmax
        return SpectralFunction(E_grid, vals, counts)

    if orbits is None:
        return SpectralFunction(E_grid, vals, counts)
    orbits = list(orbits)
    deg = model.homogeneous_degree
    if deg is None:
        warnings.warn("non-homogeneous model: first-order energy continuation of orbits",
                      stacklevel=2)
    usable = []
    for po in orbits:
        if po.marginal:
            warnings.warn(f"orbit {po.id} is marginally stable; excluded", MarginalStabilityWarning,
                          stacklevel=2)
            continue
        usable.append(po)
    for po in usable:
        acts, pers = np.vectorize(lambda E: continue_orbit(po, E, deg))(E_grid)
        rmax = _repetition_cap(float(np.min(pers)), smoothing, hbar, repetition_cap)
        for r in range(1, rmax + 1):
            det = po.stability_det(r)
            if abs(det) < det_floor:
                log.warning("orbit %s repetition %d: |det(M^r - 1)| below floor; skipped", po.id, r)
                continue
            sig = maslov_repetition(po, r)
            amp = pers / (math.pi * hbar) / math.sqrt(abs(det)) * window(r * pers)
            vals += amp * np.cos(r * acts / hbar - sig * math.pi / 2)
            counts += 1
    return SpectralFunction(E_grid, vals, counts)


def refine_peaks(model, smoothing, E_grid, values, orbits=None, **kw):
    """Local maxima of the SC density, polished by bounded scalar search."""
    E_grid = np.asarray(E_grid)
    idx = [k for k in range(1, len(values) - 1)
           if values[k] > values[k - 1] and values[k] >= values[k + 1] and values[k] > 0]

    def f(E):
        return -trace_resolvent_osc(model, [E], smoothing, orbits, **kw).values[0]

    peaks = []
    for k in idx:
        res = spo.minimize_scalar(f, bounds=(E_grid[k - 1], E_grid[k + 1]), method="bounded",
                                  options={"xatol": 1e-10})
        peaks.append(res.x)
    return np.array(peaks)


def fixed_time_trace_diagnostic(orbits, t: float, window: float, hbar: float = 1.0):
    """Literal fixed-t po terms (diagnostic only): orbits with r tau within ``window`` of t."""
    out = []
    for po in orbits:
        r = max(1, int(round(t / po.period)))
        if abs(r * po.period - t) <= window:
            det = po.stability_det(r)
            out.append(SCTerm(f"{po.id}^{r}", 1.0 / math.sqrt(abs(det)) if det else math.inf,
                              r * po.action, -0.5 * math.pi * maslov_repetition(po, r), hbar,
                              duration=r * po.period))
    return out


# --- grouped long-time sums ----------------------------------------------------------

@dataclass
class SecondaryTerm:
    """A secondary orbit with its composite combination and heteroclinic residual."""

    orbit: PeriodicOrbit
    combination: list
    s_het: float | None = None
    family: str = ""

    def composite(self, orbits: dict) -> float:
        return sum(k * orbits[p].action for p, k in self.combination)


@dataclass
class GroupedResult:
    grouped: complex
    direct: complex
    max_abs_difference: float
    per_term: np.ndarray = field(repr=False)


def measured_residuals(terms, orbits: dict):
    for tm in terms:
        tm.s_het = tm.orbit.action - tm.composite(orbits)
    return terms


def family_limit_residual(terms, orbits: dict) -> float:
    """Limit of S_total - sum k S_j over a winding family (Aitken extrapolation)."""
    r = np.array([tm.orbit.action - tm.composite(orbits) for tm in terms])
    if len(r) >= 3:
        d1, d2 = r[-1] - r[-2], r[-1] - 2 * r[-2] + r[-3]
        if d2 != 0:
            return float(r[-1] - d1 * d1 / d2)
    return float(r[-1])


def grouped_longtime_trace(orbits: dict, terms, smoothing: SmoothingSpec | None = None,
                           hbar: float = 1.0) -> GroupedResult:
    """Sum secondary-orbit terms directly and grouped as exp(i S_het) exp(i sum k S_j).

    Every term needs a residual ``s_het``; the per-term discrepancy is
    |exp(i (S_total - S_het - sum k S_j)/hbar) - 1| times the amplitude.
    """
    g, d = 0j, 0j
    diffs = []
    for tm in terms:
        if tm.s_het is None:
            raise ConfigError(f"term {tm.orbit.id}: no measured heteroclinic residual")
        po = tm.orbit
        det = po.stability_det(1)
        amp = po.period / (math.pi * hbar) / math.sqrt(abs(det))
        if smoothing is not None:
            amp *= float(smoothing.weight(po.period, hbar))
        mas = np.exp(-0.5j * math.pi * po.maslov)
        direct = amp * mas * np.exp(1j * po.action / hbar)
        grouped = amp * mas * np.exp(1j * tm.s_het / hbar) * np.exp(1j * tm.composite(orbits) / hbar)
        d += direct
        g += grouped
        diffs.append(abs(grouped - direct))
    diffs = np.array(diffs)
    return GroupedResult(g, d, float(abs(g - d)), diffs)
