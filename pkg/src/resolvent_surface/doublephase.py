"""Double phase space: centre/chord coordinates and boundary-value branches.

A branch is a trajectory segment of energy E meeting a boundary condition:
fixed end positions (q-, q+) or a fixed centre x = (x- + x+)/2. Energy
actions are int p.dq along the path; the centre action subtracts the chord
term, S_E(x) = int p.dq - p(x).xi_q, which is the symplectic area between
the path and its chord.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from .dynamics import (DEFAULT_TOL, Tolerances, TrajectorySegment, count_sign_changes, flow,
                       initial_state, period_1dof, position_block_crossings, run_kernel,
                       shell_components, split_state, energy_shell_sample)
from .models import ConfigError, DomainError, HamiltonianModel, IntegrationError, evaluate

log = logging.getLogger(__name__)


# --- coordinates -----------------------------------------------------------------

@dataclass(frozen=True)
class DoublePoint:
    x_minus: np.ndarray
    x_plus: np.ndarray

    def double_coordinates(self):
        """(P, Q) = ((-p-, p+), (q-, q+))."""
        L = self.x_minus.size // 2
        P = np.concatenate([-self.x_minus[L:], self.x_plus[L:]])
        Q = np.concatenate([self.x_minus[:L], self.x_plus[:L]])
        return P, Q


@dataclass(frozen=True)
class CentreChord:
    centre: np.ndarray
    chord: np.ndarray


def to_centre_chord(X: DoublePoint) -> CentreChord:
    xm = np.asarray(X.x_minus, dtype=float)
    xp = np.asarray(X.x_plus, dtype=float)
    return CentreChord(0.5 * (xp + xm), xp - xm)


def from_centre_chord(C: CentreChord) -> DoublePoint:
    x = np.asarray(C.centre, dtype=float)
    xi = np.asarray(C.chord, dtype=float)
    return DoublePoint(x - 0.5 * xi, x + 0.5 * xi)


def wedge(a, b) -> float:
    """Skew product a ^ b = p_a.q_b - q_a.p_b."""
    a = np.asarray(a)
    b = np.asarray(b)
    L = a.size // 2
    return float(a[L:] @ b[:L] - a[:L] @ b[L:])


def evolution_surface_sample(model, t: float, seeds, tol: Tolerances = DEFAULT_TOL):
    """Pairs (x-, x+ = phi_t(x-)) with the time action of each segment.

    Failures are reported per seed as ``(None, exception)``.
    """
    out = []
    for x0 in np.atleast_2d(seeds):
        try:
            if t == 0.0:
                out.append((DoublePoint(x0.copy(), x0.copy()), 0.0))
                continue
            y = run_kernel(model, initial_state(x0, tangent=False), t, tol, tangent=False)[0]
            xp, _, S = split_state(y, model.dof, tangent=False)
            out.append((DoublePoint(x0.copy(), xp.copy()), float(S) - model.energy(x0) * t))
        except (IntegrationError, DomainError) as exc:
            out.append((None, exc))
    return out


def double_action_loop(pairs) -> float:
    """Closed-loop integral of P.dQ over a cyclic list of DoublePoints (trapezoid)."""
    PQ = [X.double_coordinates() for X in pairs]
    P = np.array([a for a, _ in PQ])
    Q = np.array([b for _, b in PQ])
    dQ = np.roll(Q, -1, axis=0) - Q
    Pm = 0.5 * (P + np.roll(P, -1, axis=0))
    return float(np.sum(Pm * dQ))


# --- branches --------------------------------------------------------------------

@dataclass
class Branch:
    """A boundary-value solution with representation-specific data."""

    segment: TrajectorySegment
    representation: str
    action: float
    crossings: int
    degenerate: bool = False
    label: str = ""

    @property
    def duration(self) -> float:
        return self.segment.duration

    @property
    def chord(self) -> np.ndarray:
        return self.segment.chord

    @property
    def centre(self) -> np.ndarray:
        return self.segment.centre

    @property
    def energy(self) -> float:
        return self.segment.energy

    def to_dict(self):
        s = self.segment
        return {"duration": s.duration, "energy": s.energy, "energy_action": s.energy_action,
                "action": self.action, "representation": self.representation,
                "chord": s.chord.tolist(), "x_minus": s.x_minus.tolist(),
                "x_plus": s.x_plus.tolist(), "crossings": self.crossings,
                "degenerate": self.degenerate}


@dataclass
class SegmentBranchSet:
    boundary: dict
    energy: float
    window: tuple
    branches: list = field(default_factory=list)
    dropped: int = 0

    def __len__(self):
        return len(self.branches)

    def __iter__(self):
        return iter(self.branches)

    @property
    def durations(self) -> np.ndarray:
        return np.array([b.duration for b in self.branches])

    def to_list(self):
        return [b.to_dict() for b in self.branches]


def centre_action(segment: TrajectorySegment) -> float:
    """S_E(x) = int p.dq - p(x).xi_q for the segment's centre."""
    L = segment.dof
    pc = segment.centre[L:]
    return segment.energy_action - float(pc @ segment.chord[:L])


def centre_crossings(segment: TrajectorySegment) -> int:
    """Sign changes of det(1 + M(t)) along the sampled path (start excluded)."""
    n = 2 * segment.dof
    if len(segment.sample_m) < 2:
        return 0
    dets = np.linalg.det(np.eye(n)[None] + segment.sample_m[1:])
    return count_sign_changes(dets, rel_floor=1e-13)


def _segment(model, x0, t, tol):
    seg = flow(model, x0, t, tol, check_energy=False)
    return seg


def _dedupe(branches, t_sep, x_sep=1e-7):
    out = []
    for b in sorted(branches, key=lambda b: (abs(b.duration), b.duration)):
        dup = False
        for o in out:
            if abs(o.duration - b.duration) < t_sep and \
                    np.linalg.norm(o.segment.x_minus - b.segment.x_minus) < x_sep:
                dup = True
                break
        if not dup:
            out.append(b)
    return out


def _window(window):
    t0, t1 = float(window[0]), float(window[1])
    if not t0 < t1:
        raise ConfigError("window: expected (t_min, t_max) with t_min < t_max")
    return t0, t1


def _tau_min(model, E):
    if model.dof == 1:
        return min(period_1dof(model, E, c)[0] for c in range(len(shell_components(model, E))))
    # 2-DOF: crude scale from an axis oscillation
    from .quantum import _axis_extent
    R = _axis_extent(model, E)
    return 4.0 * R / math.sqrt(2.0 * (E - model.potential_minimum))


# position representation ----------------------------------------------------------

def solve_segments_position(model: HamiltonianModel, q_minus, q_plus, E: float, window,
                            tol: Tolerances = DEFAULT_TOL, bv_tol: float = 1e-9,
                            n_angles: int = 180) -> SegmentBranchSet:
    """Segments of energy E from q- to q+ with duration inside ``window``."""
    t0, t1 = _window(window)
    q_minus = np.atleast_1d(np.asarray(q_minus, dtype=float))
    q_plus = np.atleast_1d(np.asarray(q_plus, dtype=float))
    L = model.dof
    bs = SegmentBranchSet({"q_minus": q_minus.tolist(), "q_plus": q_plus.tolist()}, E, (t0, t1))
    kin = 2.0 * (E - model.potential(q_minus))
    if kin < 0 or 2.0 * (E - model.potential(q_plus)) < 0:
        return bs
    tau = _tau_min(model, E)
    sep = tau / 100.0
    found = []
    for tsign in (1.0, -1.0):
        lo, hi = (max(t0, 0.0), t1) if tsign > 0 else (t0, min(t1, 0.0))
        if hi <= lo:
            continue
        t_end = hi if tsign > 0 else lo
        if L == 1:
            ps = [math.sqrt(kin), -math.sqrt(kin)] if kin > 0 else [0.0]
            for p in ps:
                x0 = np.array([q_minus[0], p])
                res = run_kernel(model, initial_state(x0, tangent=False), t_end, tol,
                                 tangent=False, section=(0, q_plus[0], 0), ncross=0)
                for tc in res[4]:
                    if lo <= tc <= hi and abs(tc) > 0:
                        found.append(_position_branch(model, x0, tc, tol))
        else:
            found.extend(_position_2d(model, q_minus, q_plus, E, lo, hi, tsign, tol,
                                      bv_tol, n_angles, bs))
    bs.branches = [b for b in _dedupe(found, sep) if t0 <= b.duration <= t1]
    return bs


def _position_branch(model, x0, t, tol):
    seg = _segment(model, x0, t, tol)
    return Branch(seg, "position", seg.energy_action,
                  position_block_crossings(seg.sample_m, model.dof))


def _position_2d(model, qm, qp, E, lo, hi, tsign, tol, bv_tol, n_angles, bs):
    speed = math.sqrt(2.0 * (E - model.potential(qm)))
    angles = np.linspace(0.0, 2 * math.pi, n_angles, endpoint=False)
    t_end = hi if tsign > 0 else lo
    nsamp = max(400, int(abs(t_end) / _tau_min(model, E) * 400))
    grid = np.linspace(0.0, t_end, nsamp)
    out = []
    for a in angles:
        x0 = np.concatenate([qm, speed * np.array([math.cos(a), math.sin(a)])])
        ys = run_kernel(model, initial_state(x0, tangent=False), t_end, tol, tangent=False,
                        out_t=grid)[6]
        d = np.linalg.norm(ys[:, :2] - qp, axis=1)
        scale = np.max(np.linalg.norm(np.diff(ys[:, :2], axis=0), axis=1))
        for k in range(1, len(d) - 1):
            if d[k] <= d[k - 1] and d[k] <= d[k + 1] and d[k] < 4 * scale:
                sol = _newton_position_2d(model, qm, qp, speed, a, grid[k], tol, bv_tol)
                if sol is None:
                    bs.dropped += 1
                    continue
                a_s, t_s = sol
                if lo <= t_s <= hi and abs(t_s) > 0:
                    x_s = np.concatenate([qm, speed * np.array([math.cos(a_s), math.sin(a_s)])])
                    out.append(_position_branch(model, x_s, t_s, tol))
    return out


def _newton_position_2d(model, qm, qp, speed, a, t, tol, bv_tol, max_iter=30):
    for _ in range(max_iter):
        x0 = np.concatenate([qm, speed * np.array([math.cos(a), math.sin(a)])])
        try:
            y = run_kernel(model, initial_state(x0), t, tol)[0]
        except IntegrationError:
            return None
        x, M, _ = split_state(y, 2)
        r = x[:2] - qp
        if np.max(np.abs(r)) < bv_tol:
            return a, t
        dpa = speed * np.array([-math.sin(a), math.cos(a)])
        Jm = np.column_stack([M[:2, 2:] @ dpa, model.velocity(x)[:2]])
        try:
            d = np.linalg.solve(Jm, -r)
        except np.linalg.LinAlgError:
            return None
        step = max(1.0, np.max(np.abs(d)) / 0.5)
        a += d[0] / step
        t += d[1] / step
    return None


# centre representation ----------------------------------------------------------------

def solve_segments_centre(model: HamiltonianModel, x, E: float, window,
                          tol: Tolerances = DEFAULT_TOL, bv_tol: float = 1e-9,
                          n_seeds: int = 300, seed: int = 0, shell_points: int = 2000,
                          seeds=None) -> SegmentBranchSet:
    """Segments of energy E whose endpoints have midpoint ``x``."""
    t0, t1 = _window(window)
    x = np.asarray(x, dtype=float)
    bs = SegmentBranchSet({"centre": x.tolist()}, E, (t0, t1))
    if model.dof == 1:
        _centre_1d(model, x, E, t0, t1, tol, bv_tol, bs, shell_points)
    else:
        _centre_2d(model, x, E, t0, t1, tol, bv_tol, bs, n_seeds, seed, seeds)
    return bs


def _centre_1d(model, x, E, t0, t1, tol, bv_tol, bs, shell_points):
    comps = shell_components(model, E)
    found = []
    taus = []
    for c in range(len(comps)):
        tau, _ = period_1dof(model, E, c)
        taus.append(tau)
        b = comps[c][1]
        xa = np.array([b, 0.0])
        grid = np.linspace(0.0, tau, shell_points + 1)
        ys = run_kernel(model, initial_state(xa, tangent=False), tau, tol, tangent=False,
                        out_t=grid)[6][:, :2]
        ys = ys[:-1]
        sg = grid[:len(ys)]
        refl = 2.0 * x[None, :] - ys
        g = model.energies(refl) - E
        neg = g < 0
        idx = np.nonzero(neg != np.roll(neg, -1))[0]
        roots = []
        for i in idx:
            j = (i + 1) % len(ys)
            s_lo = sg[i]
            s_hi = sg[j] if j > i else tau
            roots.append(0.5 * (s_lo + s_hi))
        # partner of root s: the root whose shell point is 2x - x(s)
        pts = [_point_at(model, xa, s, tol) for s in roots]
        for i, s in enumerate(roots):
            target = 2.0 * x - pts[i]
            dists = [np.linalg.norm(target - pj) for pj in pts]
            j = int(np.argmin(dists))
            d0 = (roots[j] - s) % tau
            kmin = math.ceil((t0 - d0) / tau - 1e-12)
            kmax = math.floor((t1 - d0) / tau + 1e-12)
            for k in range(kmin, kmax + 1):
                t = d0 + k * tau
                if t == 0.0 and not (t0 <= 0.0 <= t1):
                    continue
                sol = _newton_centre_1d(model, xa, x, s, t, tau, tol, bv_tol)
                if sol is None:
                    bs.dropped += 1
                    continue
                xm, tt = sol
                if t0 <= tt <= t1:
                    found.append(_centre_branch(model, xm, tt, tol))
    sep = min(taus) / 100.0 if taus else 1e-6
    bs.branches = _dedupe(found, min(sep, 1e-6), x_sep=1e-6)


def _point_at(model, xa, s, tol):
    if s == 0.0:
        return xa.copy()
    y = run_kernel(model, initial_state(xa, tangent=False), s, tol, tangent=False)[0]
    return y[:2].copy()


def _newton_centre_1d(model, xa, x, s, t, tau, tol, bv_tol, max_iter=40):
    for _ in range(max_iter):
        xm = _point_at(model, xa, s % tau, tol)
        if t == 0.0:
            xp, M = xm, np.eye(2)
        else:
            y = run_kernel(model, initial_state(xm), t, tol)[0]
            xp, M, _ = split_state(y, 1)
        F = 0.5 * (xm + xp) - x
        if np.max(np.abs(F)) < bv_tol:
            return xm, t
        vm = model.velocity(xm)
        vp = model.velocity(xp)
        Jm = 0.5 * np.column_stack([vm + vp, vp])
        try:
            d = np.linalg.solve(Jm, -F)
        except np.linalg.LinAlgError:
            return None
        lim = 0.1 * tau
        step = max(1.0, np.max(np.abs(d)) / lim)
        s += d[0] / step
        t += d[1] / step
    return None


def _centre_branch(model, xm, t, tol):
    seg = _segment(model, xm, t, tol) if t != 0.0 else _zero_segment(model, xm)
    return Branch(seg, "centre", centre_action(seg), centre_crossings(seg))


def _zero_segment(model, x0):
    n = x0.size
    return TrajectorySegment(x0.copy(), x0.copy(), 0.0, model.energy(x0), 0.0, np.eye(n),
                             np.zeros(1), x0[None].copy(), np.eye(n)[None].copy(), 0, 0)


def newton_centre(model, x, E, xm, t, tol=DEFAULT_TOL, bv_tol=1e-9, max_iter=40, max_step=None):
    """Solve (x- + phi_t(x-))/2 = x, H(x-) = E for (x-, t); None on failure."""
    n = 2 * model.dof
    max_step = max_step or 0.5
    xm = np.array(xm, dtype=float)
    for _ in range(max_iter):
        try:
            y = run_kernel(model, initial_state(xm), t, tol)[0]
        except IntegrationError:
            return None
        xp, M, _ = split_state(y, model.dof)
        h, g, _ = evaluate(model, xm)
        F = np.concatenate([0.5 * (xm + xp) - x, [h - E]])
        if np.max(np.abs(F)) < bv_tol:
            return xm, t
        Jm = np.zeros((n + 1, n + 1))
        Jm[:n, :n] = 0.5 * (np.eye(n) + M)
        Jm[:n, n] = 0.5 * model.velocity(xp)
        Jm[n, :n] = g
        try:
            d = np.linalg.solve(Jm, -F)
        except np.linalg.LinAlgError:
            return None
        step = max(1.0, np.max(np.abs(d)) / max_step)
        xm = xm + d[:n] / step
        t = t + d[n] / step
    return None


def _centre_2d(model, x, E, t0, t1, tol, bv_tol, bs, n_seeds, seed, seeds):
    tau = _tau_min(model, E)
    found = []
    cands = []
    if seeds is not None:
        cands = [(np.asarray(a, float), float(b)) for a, b in seeds]
    else:
        shell = energy_shell_sample(model, E, n_seeds, seed=seed).points
        for tsign in (1.0, -1.0):
            lo, hi = (max(t0, 0.0), t1) if tsign > 0 else (t0, min(t1, 0.0))
            if hi <= lo:
                continue
            t_end = hi if tsign > 0 else lo
            grid = np.linspace(0.0, t_end, max(200, int(abs(t_end) / tau * 200)))
            for xm in shell:
                ys = run_kernel(model, initial_state(xm, tangent=False), t_end, tol,
                                tangent=False, out_t=grid)[6][:, :4]
                r = np.linalg.norm(0.5 * (xm[None] + ys) - x[None], axis=1)
                for k in range(1, len(r) - 1):
                    if r[k] <= r[k - 1] and r[k] <= r[k + 1] and r[k] < 0.25:
                        cands.append((xm, grid[k]))
        cands.sort(key=lambda c: abs(c[1]))
    for xm, t in cands:
        if any(abs(b.duration - t) < 1e-3 and
               np.linalg.norm(b.segment.x_minus - xm) < 1e-3 for b in found):
            continue
        sol = newton_centre(model, x, E, xm, t, tol, bv_tol)
        if sol is None:
            bs.dropped += 1
            continue
        xs, ts = sol
        if t0 <= ts <= t1 and ts != 0.0:
            found.append(_centre_branch(model, xs, ts, tol))
    bs.branches = _dedupe(found, 1e-6, x_sep=1e-6)


# --- Legendre transform via the time domain --------------------------------------------

def continue_branch(model, branch: Branch, E: float, tol: Tolerances = DEFAULT_TOL,
                    bv_tol: float = 1e-11, max_iter: int = 40, build: bool = True):
    """Continue ``branch`` to energy E keeping its boundary data fixed.

    Centre branches keep the centre, position branches keep (q-, q+).
    Returns the new Branch, or only its duration with ``build=False``.
    """
    seg = branch.segment
    L = model.dof
    n = 2 * L
    xm = seg.x_minus.copy()
    t = seg.duration
    qp = seg.x_plus[:L]
    x = seg.centre
    for _ in range(max_iter):
        y = run_kernel(model, initial_state(xm), t, tol)[0]
        xp, M, _ = split_state(y, L)
        h, g, _ = evaluate(model, xm)
        vp = model.velocity(xp)
        if branch.representation == "centre":
            F = np.concatenate([0.5 * (xm + xp) - x, [h - E]])
            Jm = np.zeros((n + 1, n + 1))
            Jm[:n, :n] = 0.5 * (np.eye(n) + M)
            Jm[:n, n] = 0.5 * vp
            Jm[n, :n] = g
            if np.max(np.abs(F)) < bv_tol:
                return _continued(model, branch, xm, t, tol, build)
            d = np.linalg.solve(Jm, -F)
            xm = xm + d[:n]
            t = t + d[n]
        else:
            F = np.concatenate([xp[:L] - qp, [h - E]])
            Jm = np.zeros((L + 1, L + 1))
            Jm[:L, :L] = M[:L, L:]
            Jm[:L, L] = vp[:L]
            Jm[L, :L] = g[L:]
            if np.max(np.abs(F)) < bv_tol:
                return _continued(model, branch, xm, t, tol, build)
            d = np.linalg.solve(Jm, -F)
            xm = xm.copy()
            xm[L:] += d[:L]
            t = t + d[L]
    raise DomainError("branch continuation in energy did not converge")


def _continued(model, branch, xm, t, tol, build):
    if not build:
        return t
    if branch.representation == "centre":
        return _centre_branch(model, xm, t, tol)
    return _position_branch(model, xm, t, tol)


@dataclass
class LegendreResult:
    energy_action: float
    duration: float
    time_action: float
    d2S_dt2: float
    degenerate: bool
    x_minus: np.ndarray


def _position_time_solve(model, qm, qp, t, p_guess, tol, bv_tol=1e-11, max_iter=40):
    L = model.dof
    p = np.array(p_guess, dtype=float)
    for _ in range(max_iter):
        x0 = np.concatenate([qm, p])
        y = run_kernel(model, initial_state(x0), t, tol)[0]
        x, M, S = split_state(y, L)
        r = x[:L] - qp
        if np.max(np.abs(r)) < bv_tol:
            return x0, float(S)
        try:
            p = p - np.linalg.solve(M[:L, L:], r)
        except np.linalg.LinAlgError:
            return None
    return None


def _centre_time_solve(model, x, t, xm_guess, tol, bv_tol=1e-11, max_iter=40):
    n = 2 * model.dof
    xm = np.array(xm_guess, dtype=float)
    for _ in range(max_iter):
        y = run_kernel(model, initial_state(xm), t, tol)[0]
        xp, M, S = split_state(y, model.dof)
        F = 0.5 * (xm + xp) - x
        if np.max(np.abs(F)) < bv_tol:
            return xm, float(S), xp
        try:
            xm = xm - np.linalg.solve(0.5 * (np.eye(n) + M), F)
        except np.linalg.LinAlgError:
            return None
    return None


def legendre_to_energy(model, branch: Branch, E: float | None = None,
                       tol: Tolerances | None = None, degenerate_tol: float = 1e-9,
                       max_iter: int = 40) -> LegendreResult:
    """Energy action of a branch family by stationarity of S_t + E t over t.

    The fixed-t boundary problem is solved along the family seeded by
    ``branch``; the duration with E(t) = E is found by secant iteration and
    S_E = S_t + E t is returned with the curvature d^2 S_t/dt^2 = -dE/dt.
    """
    tol = tol or DEFAULT_TOL.tightened(1e-2)
    E = branch.energy if E is None else E
    seg = branch.segment
    L = model.dof
    qm, qp = seg.x_minus[:L], seg.x_plus[:L]
    x = seg.centre

    def at(t, guess):
        if branch.representation == "position":
            sol = _position_time_solve(model, qm, qp, t, guess[L:], tol)
            if sol is None:
                raise DomainError(f"no position segment of duration {t:.6g} on this family")
            x0, S = sol
            Et = model.energy(x0)
            St = S - Et * t
        else:
            sol = _centre_time_solve(model, x, t, guess, tol)
            if sol is None:
                raise DomainError(f"no centred segment of duration {t:.6g} on this family")
            x0, S, xp = sol
            Et = model.energy(x0)
            St = S - float(0.5 * (x0 + xp)[L:] @ (xp - x0)[:L]) - Et * t
        return x0, Et, St

    t = seg.duration
    x0, Et, St = at(t, seg.x_minus)
    h = 1e-6 * max(1.0, abs(t))
    _, Eh, _ = at(t + h, x0)
    dEdt = (Eh - Et) / h
    for _ in range(max_iter):
        if abs(Et - E) < 1e-12 * max(1.0, abs(E)):
            break
        if abs(dEdt) < degenerate_tol:
            return LegendreResult(St + E * t, t, St, -dEdt, True, x0)
        dt = (E - Et) / dEdt
        t_new = t + dt
        x0n, En, Sn = at(t_new, x0)
        if abs(dt) > 1e-7 * max(1.0, abs(t)):
            dEdt = (En - Et) / dt
        t, x0, Et, St = t_new, x0n, En, Sn
        if abs(dt) < 1e-13 * max(1.0, abs(t)):
            break
    _, Ep, _ = at(t + h, x0)
    _, Em, _ = at(t - h, x0)
    dEdt = (Ep - Em) / (2 * h)
    return LegendreResult(St + Et * t, t, St, -dEdt, abs(dEdt) < degenerate_tol, x0)
