"""Trajectories with tangent maps, energy-shell sampling, 1-DOF quadratures."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate as spi
from scipy import optimize as spo
from scipy.stats import norm, qmc

from . import _kernels as kern
from .models import DomainError, HamiltonianModel, IntegrationError, evaluate


@dataclass(frozen=True)
class Tolerances:
    rtol: float = 1e-10
    atol: float = 1e-10
    energy_tol: float = 1e-8
    symplectic_tol: float = 1e-6
    max_step: float = math.inf
    max_steps: int = 5_000_000

    def tightened(self, factor: float) -> "Tolerances":
        return replace(self, rtol=self.rtol * factor, atol=self.atol * factor)


DEFAULT_TOL = Tolerances()


@dataclass(frozen=True)
class PhasePoint:
    q: np.ndarray
    p: np.ndarray

    @classmethod
    def from_array(cls, x) -> "PhasePoint":
        x = np.asarray(x, dtype=float)
        L = x.size // 2
        return cls(x[:L].copy(), x[L:].copy())

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])


@dataclass
class TrajectorySegment:
    """An integrated orbit piece ``x_minus -> x_plus`` of duration ``t``.

    ``energy_action`` is int p.dq along the path; ``time_action`` is
    Hamilton's principal function int (p.dq - H dt).
    """

    x_minus: np.ndarray
    x_plus: np.ndarray
    duration: float
    energy: float
    energy_action: float
    monodromy: np.ndarray
    sample_t: np.ndarray = field(repr=False)
    sample_x: np.ndarray = field(repr=False)
    sample_m: np.ndarray = field(repr=False)
    caustic_crossings: int = 0
    nsteps: int = 0

    @property
    def time_action(self) -> float:
        return self.energy_action - self.energy * self.duration

    @property
    def dof(self) -> int:
        return self.x_minus.size // 2

    @property
    def centre(self) -> np.ndarray:
        return 0.5 * (self.x_plus + self.x_minus)

    @property
    def chord(self) -> np.ndarray:
        return self.x_plus - self.x_minus


def initial_state(x0, tangent=True) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float).ravel()
    n = x0.size
    parts = [x0]
    if tangent:
        parts.append(np.eye(n).ravel())
    parts.append(np.zeros(1))
    return np.concatenate(parts)


def run_kernel(model, y0, t_end, tol=DEFAULT_TOL, *, tangent=True, section=None,
               ncross=0, out_t=None, record_steps=False, t0=0.0):
    """Thin wrapper around the compiled integrator raising on failure."""
    if section is None:
        sidx, sval, sdir = -1, 0.0, 0
    else:
        sidx, sval, sdir = section
    out_t = np.empty(0) if out_t is None else np.ascontiguousarray(out_t, dtype=float)
    res = kern.integrate(model.code, model.param_vector, model.dof, tangent,
                         np.ascontiguousarray(y0, dtype=float), float(t0), float(t_end),
                         tol.rtol, tol.atol, tol.max_step, int(sidx), float(sval),
                         int(sdir), int(ncross), out_t, bool(record_steps),
                         int(tol.max_steps))
    status = res[2]
    if status != kern.STATUS_OK:
        reason = {kern.STATUS_MAX_STEPS: "step budget exhausted",
                  kern.STATUS_STEP_UNDERFLOW: "step size underflow",
                  kern.STATUS_NONFINITE: "non-finite state"}.get(status, "unknown")
        raise IntegrationError(f"integration failed: {reason} at t={res[1]:.6g}")
    return res


def split_state(y, L, tangent=True):
    n = 2 * L
    x = y[..., :n]
    if tangent:
        M = y[..., n:n + n * n].reshape(y.shape[:-1] + (n, n))
    else:
        M = None
    return x, M, y[..., -1]


def count_sign_changes(values, rel_floor=0.0) -> int:
    """Number of strict sign changes in a sampled sequence (zeros skipped)."""
    vals = np.asarray(values, dtype=float)
    if rel_floor > 0:
        scale = np.max(np.abs(vals)) if vals.size else 0.0
        vals = np.where(np.abs(vals) <= rel_floor * scale, 0.0, vals)
    s = np.sign(vals)
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def position_block_crossings(sample_m, L) -> int:
    """Sign changes of det(dq+/dp-) along a sampled path, start excluded."""
    if len(sample_m) < 2:
        return 0
    dets = np.linalg.det(sample_m[1:, :L, L:])
    return count_sign_changes(dets, rel_floor=1e-13)


def flow(model: HamiltonianModel, x0, t: float, tol: Tolerances = DEFAULT_TOL,
         n_samples: int | None = None, check_energy: bool = True) -> TrajectorySegment:
    """Integrate Hamilton's equations with the tangent map from ``x0`` for time ``t``.

    Samples are taken at every accepted step, or on a uniform grid of
    ``n_samples`` points when given.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    L = model.dof
    if x0.shape != (2 * L,):
        raise DomainError(f"x0: expected {2 * L} components")
    if not (np.all(np.isfinite(x0)) and math.isfinite(t)):
        raise DomainError("flow: x0 and t must be finite")
    E = model.energy(x0)
    y0 = initial_state(x0)
    if n_samples:
        grid = np.linspace(0.0, t, int(n_samples))
        res = run_kernel(model, y0, t, tol, out_t=grid)
        st, sy = grid[:len(res[6])], res[6]
    else:
        res = run_kernel(model, y0, t, tol, record_steps=True)
        st, sy = res[7], res[8]
    y = res[0]
    x, M, S = split_state(y, L)
    sx, sm, _ = split_state(sy, L)
    seg = TrajectorySegment(
        x_minus=x0.copy(), x_plus=x.copy(), duration=float(t), energy=E,
        energy_action=float(S), monodromy=M.copy(), sample_t=np.asarray(st),
        sample_x=np.asarray(sx), sample_m=np.asarray(sm),
        caustic_crossings=position_block_crossings(sm, L), nsteps=int(res[3]))
    if check_energy:
        drift = abs(model.energy(x) - E)
        if drift > tol.energy_tol * max(1.0, abs(E)):
            raise IntegrationError(f"energy drift {drift:.3g} exceeds energy_tol")
    return seg


def flow_point(model, x0, t, tol=DEFAULT_TOL):
    """Endpoint and monodromy only (no sampling)."""
    y0 = initial_state(x0)
    res = run_kernel(model, y0, t, tol)
    x, M, S = split_state(res[0], model.dof)
    return x.copy(), M.copy(), float(S)


# --- 1-DOF shells -----------------------------------------------------------

def turning_points(model: HamiltonianModel, E: float):
    """Sorted roots of V(q) = E for a 1-DOF model."""
    if model.dof != 1:
        raise DomainError("turning points are defined for 1-DOF models only")
    V = np.vectorize(model.potential)
    if E <= model.potential_minimum:
        raise DomainError(f"E={E} is not above the potential minimum {model.potential_minimum}")
    R = 1.0
    while V(R) <= E or V(-R) <= E:
        R *= 2.0
    grid = np.linspace(-R, R, 4001)
    g = V(grid) - E
    roots = []
    for i in range(len(grid) - 1):
        if g[i] == 0.0:
            roots.append(grid[i])
        elif g[i] * g[i + 1] < 0:
            roots.append(spo.brentq(lambda q: model.potential(q) - E, grid[i], grid[i + 1],
                                    xtol=1e-15, rtol=4 * np.finfo(float).eps))
    return np.array(roots)


def shell_components(model, E):
    """Intervals (a, b) of q where V < E; one per closed shell loop."""
    roots = turning_points(model, E)
    if len(roots) % 2:
        raise DomainError("unbounded or degenerate shell")
    return [(roots[2 * i], roots[2 * i + 1]) for i in range(len(roots) // 2)]


def _check_separatrix(model, E, rel=1e-12):
    Eb = model.barrier_energy
    if Eb is not None and abs(E - Eb) <= rel * max(1.0, abs(model.potential_minimum)):
        raise DomainError(f"E={E} lies on the separatrix; the period diverges")


def period_1dof(model: HamiltonianModel, E: float, component: int = 0):
    """Period and loop action of a closed 1-DOF shell loop by quadrature."""
    _check_separatrix(model, E)
    comps = shell_components(model, E)
    if not 0 <= component < len(comps):
        raise DomainError(f"component {component} not present at E={E}")
    a, b = comps[component]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)

    def kinetic(phi):
        q = mid - half * math.cos(phi)
        return max(2.0 * (E - model.potential(q)), 0.0)

    def f_tau(phi):
        k = kinetic(phi)
        s = half * math.sin(phi)
        return s / math.sqrt(k) if k > 0 else 0.0

    def f_act(phi):
        return math.sqrt(kinetic(phi)) * half * math.sin(phi)

    points = None
    Eb = model.barrier_energy
    if Eb is not None and E > Eb and a < 0 < b:
        points = [math.acos(mid / half)]
    opts = dict(epsabs=1e-14, epsrel=1e-13, limit=800, points=points)
    with warnings.catch_warnings():
        # the requested accuracy is near roundoff; quad reports that as a warning
        warnings.simplefilter("ignore", spi.IntegrationWarning)
        tau, _ = spi.quad(f_tau, 0.0, math.pi, **opts)
        act, _ = spi.quad(f_act, 0.0, math.pi, **opts)
    return 2.0 * tau, 2.0 * act


def shell_loop(model, E, component=0, n=400, tol=None):
    """Closed shell polyline uniform in arclength, plus period and length."""
    tol = tol or Tolerances(rtol=1e-12, atol=1e-13)
    comps = shell_components(model, E)
    if not 0 <= component < len(comps):
        raise DomainError(f"component {component} not present at E={E}")
    _check_separatrix(model, E)
    b = comps[component][1]
    x0 = np.array([b, 0.0])
    y0 = initial_state(x0, tangent=False)
    # right turning point: next crossing of p = 0 with pdot < 0 closes the loop
    res = run_kernel(model, y0, 1e6, tol, tangent=False, section=(1, 0.0, -1), ncross=1)
    tau = float(res[1])
    ndense = max(8 * n, 4000)
    tgrid = np.linspace(0.0, tau, ndense + 1)
    dense = run_kernel(model, y0, tau, tol, tangent=False, out_t=tgrid)[6][:, :2]
    vel = np.array([model.velocity(x) for x in dense])
    speed = np.hypot(vel[:, 0], vel[:, 1])
    arclen = spi.cumulative_simpson(speed, x=tgrid[:len(speed)], initial=0.0)
    total = float(arclen[-1])
    s_targets = np.linspace(0.0, total, n, endpoint=False)
    t_targets = np.interp(s_targets, arclen, tgrid[:len(speed)])
    t_targets[0] = 0.0
    pts = run_kernel(model, y0, tau, tol, tangent=False, out_t=t_targets)[6][:, :2].copy()
    pts = project_to_shell(model, pts, E)
    return pts, tau, total


def project_to_shell(model, pts, E, iters=3):
    """Newton steps along grad H onto H = E (moves points by O(H - E))."""
    pts = np.array(pts, dtype=float)
    for _ in range(iters):
        for i in range(len(pts)):
            h, g, _ = evaluate(model, pts[i])
            gg = g @ g
            if gg > 0:
                pts[i] -= (h - E) * g / gg
    return pts


@dataclass
class ShellSample:
    points: np.ndarray
    labels: np.ndarray
    energy: float

    def __len__(self):
        return len(self.points)


def energy_shell_sample(model: HamiltonianModel, E: float, n: int, seed: int = 0) -> ShellSample:
    """Points on H = E.

    1-DOF: closed polylines uniform in arclength, one label per loop.
    2-DOF: scrambled-Halton directions scaled radially onto the shell.
    """
    if n < 1:
        raise DomainError("n must be positive")
    if E <= model.potential_minimum:
        raise DomainError(f"E={E} below the potential minimum: the shell is empty")
    if model.dof == 1:
        comps = shell_components(model, E)
        loops = [shell_loop(model, E, c, n=max(8 * n, 400)) for c in range(len(comps))]
        lengths = np.array([lp[2] for lp in loops])
        counts = np.maximum(1, np.round(n * lengths / lengths.sum()).astype(int))
        counts[-1] = max(1, n - counts[:-1].sum())
        pts, labels = [], []
        for c, (lp, k) in enumerate(zip(loops, counts)):
            dense = lp[0]
            idx = np.linspace(0, len(dense), int(k), endpoint=False).astype(int)
            pts.append(dense[idx])
            labels.append(np.full(len(idx), c))
        pts = project_to_shell(model, np.vstack(pts), E)
        return ShellSample(pts, np.concatenate(labels), E)

    sampler = qmc.Halton(d=4, scramble=True, seed=seed)
    u = np.clip(sampler.random(n), 1e-12, 1 - 1e-12)
    d = norm.ppf(u)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts = np.empty((n, 4))
    for i, di in enumerate(d):
        R = 1.0
        while model.energy(R * di) < E:
            R *= 2.0
        r = spo.brentq(lambda s: model.energy(s * di) - E, 0.0, R, xtol=1e-15,
                       rtol=4 * np.finfo(float).eps)
        pts[i] = r * di
    pts = project_to_shell(model, pts, E, iters=2)
    return ShellSample(pts, np.zeros(n, dtype=int), E)


def first_return_time_1dof(model, E, component=0, tol=None):
    """Period from the flow: return of the right turning point to itself."""
    tol = tol or Tolerances(rtol=1e-12, atol=1e-13)
    b = shell_components(model, E)[component][1]
    y0 = initial_state(np.array([b, 0.0]), tangent=False)
    res = run_kernel(model, y0, 1e6, tol, tangent=False, section=(1, 0.0, -1), ncross=1)
    return float(res[1])
