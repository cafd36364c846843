"""Chord geometry of energy shells, centre-plane caustic maps, tongue probes
and translation leaves of integrable tori."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import _kernels as kern
from .doublephase import newton_centre, solve_segments_centre
from .dynamics import (DEFAULT_TOL, Tolerances, flow, initial_state, run_kernel, shell_components,
                       shell_loop)
from .models import ConfigError, DomainError, HamiltonianModel, evaluate
from .orbits import PeriodicOrbit, _segment_intersections

log = logging.getLogger(__name__)


# --- geometric chords ----------------------------------------------------------------

@dataclass
class ChordSet:
    centre: np.ndarray
    pairs: list = field(default_factory=list)   # [(x_a, x_b)] with midpoint = centre

    def __len__(self):
        return len(self.pairs)

    @property
    def chords(self) -> np.ndarray:
        """One chord per pair, xi = x_b - x_a (its partner is -xi)."""
        return np.array([b - a for a, b in self.pairs]).reshape(-1, 2)


class ShellCurve:
    """Closed polyline with a periodic cubic-spline parameterisation by arclength."""

    def __init__(self, pts, check: bool = True):
        pts = np.asarray(pts, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 8:
            raise ConfigError("shell: expected a closed polyline of shape (n >= 8, 2)")
        if np.linalg.norm(pts[0] - pts[-1]) < 1e-14:
            pts = pts[:-1]
        self.pts = pts
        closed = np.vstack([pts, pts[:1]])
        seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        if np.any(seg == 0):
            raise ConfigError("shell: repeated consecutive points")
        self.s = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self.s[-1])
        self.spacing = float(seg.mean())
        self.spline = CubicSpline(self.s, closed, bc_type="periodic")
        if check and self.self_intersecting():
            raise ConfigError("shell: polyline intersects itself")

    def self_intersecting(self) -> bool:
        closed = np.vstack([self.pts, self.pts[:1]])
        n = len(self.pts)
        for i, j, _, _ in _segment_intersections(closed, closed):
            if i != j and abs(i - j) not in (1, n - 1):
                return True
        return False

    def __call__(self, s, nu=0):
        return self.spline(np.mod(s, self.length), nu)


def _refine_pair(curve: ShellCurve, x, s1, s2, tol=1e-13, max_iter=30):
    for _ in range(max_iter):
        F = 0.5 * (curve(s1) + curve(s2)) - x
        if np.max(np.abs(F)) < tol:
            break
        Jm = 0.5 * np.column_stack([curve(s1, 1), curve(s2, 1)])
        try:
            d = np.linalg.solve(Jm, -F)
        except np.linalg.LinAlgError:
            break
        lim = 2.0 * curve.spacing
        step = max(1.0, np.max(np.abs(d)) / lim)
        s1 += d[0] / step
        s2 += d[1] / step
    return s1 % curve.length, s2 % curve.length


def geometric_chords(shell, x, refine: bool = True) -> ChordSet:
    """All chords of a closed 1-DOF shell curve whose midpoint is ``x``.

    The curve is intersected with its point reflection through x; each
    intersection is a chord endpoint, refined on the spline by Newton in
    the two arc parameters.
    """
    curve = shell if isinstance(shell, ShellCurve) else ShellCurve(shell)
    x = np.asarray(x, dtype=float)
    closed = np.vstack([curve.pts, curve.pts[:1]])
    refl = 2.0 * x - closed
    hits = _segment_intersections(closed, refl)
    out = ChordSet(x)
    seen = []
    for i, j, a, b in hits:
        s1 = curve.s[i] + a * (curve.s[i + 1] - curve.s[i])
        s2 = curve.s[j] + b * (curve.s[j + 1] - curve.s[j])
        if refine:
            s1, s2 = _refine_pair(curve, x, s1, s2)
        key = tuple(sorted((s1, s2)))
        if any(_arc_close(key, k, curve) for k in seen):
            continue
        seen.append(key)
        xa, xb = curve(key[0]), curve(key[1])
        out.pairs.append((xa, xb))
    return out


def _arc_close(k1, k2, curve, tol=None):
    tol = tol or 0.5 * curve.spacing

    def d(a, b):
        r = abs(a - b) % curve.length
        return min(r, curve.length - r)

    return d(k1[0], k2[0]) < tol and d(k1[1], k2[1]) < tol


# --- caustic scans ---------------------------------------------------------------------

@dataclass
class CausticGrid:
    axes: tuple
    u: np.ndarray
    v: np.ndarray
    counts: np.ndarray
    flags: np.ndarray
    cusp_candidates: np.ndarray
    failures: int = 0

    def classes(self, include_flagged: bool = False):
        c = self.counts if include_flagged else self.counts[~self.flags]
        return sorted(set(int(k) for k in np.unique(c)))

    def islands(self, count: int):
        """Connected components (4-neighbour) of unflagged cells with ``count``."""
        from scipy import ndimage
        mask = (self.counts == count) & ~self.flags
        lab, n = ndimage.label(mask)
        return lab, n

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "count", "flag", "cusp"])
            for a, ua in enumerate(self.u):
                for b, vb in enumerate(self.v):
                    w.writerow([f"{ua:.17g}", f"{vb:.17g}", int(self.counts[a, b]),
                                int(self.flags[a, b]), int(self.cusp_candidates[a, b])])

    def write_svg(self, path, cell=3):
        palette = ["#ffffff", "#9ecae1", "#4292c6", "#08519c", "#08306b"]
        na, nb = self.counts.shape
        rows = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{na * cell}" '
                f'height="{nb * cell}">']
        for a in range(na):
            for b in range(nb):
                c = "#d62728" if self.flags[a, b] else palette[min(int(self.counts[a, b]), 4)]
                rows.append(f'<rect x="{a * cell}" y="{(nb - 1 - b) * cell}" width="{cell}" '
                            f'height="{cell}" fill="{c}"/>')
        rows.append("</svg>")
        with open(path, "w") as fh:
            fh.write("\n".join(rows))


def _flag(counts):
    flags = np.zeros(counts.shape, dtype=bool)
    cusp = np.zeros(counts.shape, dtype=bool)
    for axis in (0, 1):
        d = np.diff(counts, axis=axis)
        jump = d != 0
        big = np.abs(d) >= 2
        sl_lo = [slice(None)] * 2
        sl_hi = [slice(None)] * 2
        sl_lo[axis] = slice(0, -1)
        sl_hi[axis] = slice(1, None)
        flags[tuple(sl_lo)] |= jump
        flags[tuple(sl_hi)] |= jump
        cusp[tuple(sl_lo)] |= big
        cusp[tuple(sl_hi)] |= big
    return flags, cusp


def _default_box(model, E):
    if model.dof == 1:
        comps = shell_components(model, E)
        qmax = max(abs(comps[0][0]), abs(comps[-1][1]))
        pmax = math.sqrt(2.0 * (E - model.potential_minimum))
        return ((-1.1 * qmax, 1.1 * qmax), (-1.1 * pmax, 1.1 * pmax))
    raise ConfigError("slice: 2-DOF scans need an explicit slice")


def caustic_scan(model: HamiltonianModel, E: float, ranges=None, resolution: int = 200,
                 shell_points: int = 2000, slice_spec=None, window_periods: float = 3.0,
                 tol: Tolerances = DEFAULT_TOL, n_seeds: int = 60) -> CausticGrid:
    """Chord-pair counts on a grid of centres.

    1-DOF: every shell component contributes its own chords, counted from
    the sign changes of H(2x - a) - E around the shell polyline. An even
    resolution keeps the symmetry point of symmetric shells off the grid.
    2-DOF: ``slice_spec`` (quantum.SliceSpec) selects a plane; counts are
    branches of solve_segments_centre with duration up to
    ``window_periods`` times the shortest period scale.
    """
    if model.dof == 1:
        ranges = ranges or _default_box(model, E)
        u = np.linspace(*ranges[0], resolution)
        v = np.linspace(*ranges[1], resolution)
        U, V = np.meshgrid(u, v, indexing="ij")
        centres = np.column_stack([U.ravel(), V.ravel()])
        counts = np.zeros(len(centres), dtype=np.int64)
        for c in range(len(shell_components(model, E))):
            pts, _, _ = shell_loop(model, E, c, n=shell_points)
            counts += kern.count_chords(model.code, model.param_vector, pts, centres, E)
        counts = counts.reshape(U.shape)
        flags, cusp = _flag(counts)
        return CausticGrid((0, 1), u, v, counts, flags, cusp)
    if slice_spec is None:
        raise ConfigError("slice: 2-DOF scans need a slice_spec")
    from .doublephase import _tau_min
    t_max = window_periods * _tau_min(model, E)
    u, v = slice_spec.axis_values()
    X = slice_spec.points()
    counts = np.zeros(X.shape[:2], dtype=np.int64)
    failures = 0
    for a in range(X.shape[0]):
        for b in range(X.shape[1]):
            try:
                bs = solve_segments_centre(model, X[a, b], E, (1e-9, t_max), tol=tol,
                                           n_seeds=n_seeds)
                counts[a, b] = len(bs)
                failures += bs.dropped
            except (DomainError, ConfigError) as exc:
                log.warning("cell (%d, %d): %s", a, b, exc)
                counts[a, b] = -1
                failures += 1
    flags, cusp = _flag(counts)
    return CausticGrid(tuple(slice_spec.axes), u, v, counts, flags, cusp, failures)


def caustic_scan_shell(shell, ranges, resolution: int = 100) -> CausticGrid:
    """Chord-pair counts for an arbitrary closed shell polyline.

    A reflected sample 2x - a crosses the curve where its inside/outside
    status changes, so half the cyclic number of status changes is the
    number of chord pairs centred on x.
    """
    curve = shell if isinstance(shell, ShellCurve) else ShellCurve(shell)
    u = np.linspace(*ranges[0], resolution)
    v = np.linspace(*ranges[1], resolution)
    counts = np.zeros((resolution, resolution), dtype=np.int64)
    pts = curve.pts
    for a, ua in enumerate(u):
        for b, vb in enumerate(v):
            inside = kern.in_polygon(pts, 2.0 * np.array([ua, vb]) - pts)
            counts[a, b] = np.count_nonzero(inside != np.roll(inside, 1)) // 2
    flags, cusp = _flag(counts)
    return CausticGrid((0, 1), u, v, counts, flags, cusp)


# --- tongues -----------------------------------------------------------------------

@dataclass
class TongueSample:
    offset: float
    chord_norm: float
    duration: float
    present: bool


def probe_direction(model, po: PeriodicOrbit, which="inward", phase: float = 0.0):
    """Base point on the orbit (``phase`` in periods from its start) and a
    unit centre-space direction there.

    ``inward``/``outward`` follow -grad H / +grad H (off the shell);
    ``unstable``/``stable`` are monodromy eigenvectors (tangent to it).
    """
    x0 = po.start_point(model)
    M = po.monodromy
    if phase:
        seg = flow(model, x0, phase * po.period, DEFAULT_TOL.tightened(1e-2), check_energy=False)
        x0, P = seg.x_plus, seg.monodromy
        M = P @ M @ np.linalg.inv(P)
    if not isinstance(which, str):
        u = np.asarray(which, dtype=float)
        return x0, u / np.linalg.norm(u)
    if which in ("inward", "outward"):
        g = evaluate(model, x0)[1]
        g = g / np.linalg.norm(g)
        return x0, (-g if which == "inward" else g)
    if which not in ("unstable", "stable"):
        raise ConfigError(f"direction: unknown {which!r}")
    w, V = np.linalg.eig(M)
    order = np.argsort(np.abs(w))
    k = order[-1] if which == "unstable" else order[0]
    vec = np.real(V[:, k])
    return x0, vec / np.linalg.norm(vec)


def tongue_probe(model: HamiltonianModel, po: PeriodicOrbit, k: int, offsets,
                 direction="inward", phase: float = 0.0, tol: Tolerances | None = None,
                 bv_tol: float = 1e-10, n_shifts: int = 41):
    """Near-return branches for centres displaced off a periodic point.

    The centre map (x-, t) -> (x- + phi_t(x-))/2 folds along the orbit:
    moving x- along the flow and changing t both move the centre along the
    flow, and centres off the shell are reached only at second order. So
    branches exist on one side of the shell (a thin tongue) and come in
    time-reversed pairs with durations k tau -+ dt. Seeds are the previous
    offset's solution plus points shifted along the orbit by sigma with
    duration k tau - 2 sigma. The shorter branch of the pair is reported.
    The first offset on each side without a branch marks the tongue edge;
    it and all larger offsets on that side are reported absent.
    """
    tol = tol or DEFAULT_TOL.tightened(1e-2)
    if model.dof != 2:
        raise DomainError("tongue probes need a 2-DOF model")
    x0, u = probe_direction(model, po, direction, phase)
    T = k * po.period
    offsets = np.asarray(offsets, dtype=float)
    shifts = np.linspace(-0.5, 0.5, n_shifts) * po.period
    shifted = [run_kernel(model, initial_state(x0, tangent=False), sg, tol, tangent=False)[0][:4]
               if sg != 0.0 else x0.copy() for sg in shifts]
    res = [None] * len(offsets)
    prev = {1.0: None, -1.0: None}
    edge = {1.0: False, -1.0: False}
    for i in np.argsort(np.abs(offsets)):
        d = offsets[i]
        if d == 0.0:
            res[i] = TongueSample(d, 0.0, T, True)
            continue
        sgn = 1.0 if d > 0 else -1.0
        if edge[sgn]:
            res[i] = TongueSample(d, math.nan, math.nan, False)
            continue
        seeds = [] if prev[sgn] is None else [prev[sgn]]
        seeds += [(z, T - 2 * sg) for z, sg in zip(shifted, shifts)]
        sol = None
        for z, t in seeds:
            cand = newton_centre(model, x0 + d * u, po.energy, z, t, tol, bv_tol, max_iter=40)
            if cand is None or not (0.5 * T <= cand[1] <= T + 1e-9):
                continue
            if sol is None or cand[1] > sol[1]:
                sol = cand
            if prev[sgn] is not None:
                break
        if sol is None:
            edge[sgn] = True
            res[i] = TongueSample(d, math.nan, math.nan, False)
            continue
        xm, t = sol
        prev[sgn] = (xm, t)
        y = run_kernel(model, initial_state(xm, tangent=False), t, tol, tangent=False)[0]
        res[i] = TongueSample(d, float(np.linalg.norm(y[:4] - xm)), float(t), True)
    return res


# --- integrable leaves -------------------------------------------------------------------

@dataclass
class IntegrableLeaf:
    actions: tuple
    frequencies: tuple
    times: np.ndarray
    theta_minus: np.ndarray
    theta_plus: np.ndarray

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "theta1_minus", "theta2_minus", "theta1_plus", "theta2_plus"])
            for t, a, b in zip(self.times, self.theta_minus, self.theta_plus):
                w.writerow([f"{t:.17g}"] + [f"{z:.17g}" for z in (*a, *b)])


def _circle_dist(a):
    a = np.mod(a, 2 * math.pi)
    return np.minimum(a, 2 * math.pi - a)


def integrable_leaf(omega1: float, omega2: float, actions=(1.0, 1.0), times=None,
                    theta0=(0.0, 0.0)) -> IntegrableLeaf:
    """Angle translations theta+ = theta- + omega t (mod 2 pi) on a torus."""
    if not (omega1 > 0 and omega2 > 0):
        raise ConfigError("frequencies must be positive")
    times = np.linspace(0.0, 2 * math.pi / omega2, 65) if times is None else np.asarray(times, float)
    w = np.array([omega1, omega2])
    th0 = np.broadcast_to(np.asarray(theta0, float), (len(times), 2))
    thp = np.mod(th0 + times[:, None] * w[None, :], 2 * math.pi)
    return IntegrableLeaf(tuple(actions), (omega1, omega2), times, np.array(th0), thp)


def closure_distance(omega1: float, omega2: float, t: float) -> float:
    """Distance of the angle shift (omega1 t, omega2 t) from the lattice 2 pi Z^2."""
    return float(np.hypot(_circle_dist(omega1 * t), _circle_dist(omega2 * t)))


def resonant_period(r: int, s: int, omega2: float) -> float:
    """Closure time 2 pi s / omega2 of an r:s resonant torus (omega1/omega2 = r/s)."""
    g = math.gcd(r, s)
    return 2 * math.pi * (s // g) / omega2


def closure_scan(omega1: float, omega2: float, K: int = 500):
    """Closure distance at t_k = 2 pi k / omega2, k = 1..K, with its running minimum."""
    k = np.arange(1, K + 1)
    t = 2 * math.pi * k / omega2
    d = np.hypot(_circle_dist(omega1 * t), _circle_dist(omega2 * t))
    return k, d, np.minimum.accumulate(d)


def convergent_denominators(x: float, n: int = 12):
    """Denominators of the continued-fraction convergents of x."""
    dens = []
    q0, q1 = 0, 1
    y = x
    for _ in range(n):
        a = math.floor(y)
        q0, q1 = q1, a * q1 + q0
        dens.append(q1)
        frac = y - a
        if frac < 1e-15:
            break
        y = 1.0 / frac
    return sorted(set(dens))
