"""Periodic orbits of 2-DOF models on Poincare sections.

Section maps carry their 2x2 derivative, obtained from the full monodromy by
projecting out the flow direction at the landing point and the energy
gradient at the launch point. Orbits are converged by damped Newton on a
cyclic multi-shooting chain of section points.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (DEFAULT_TOL, Tolerances, count_sign_changes, initial_state, run_kernel,
                       split_state)
from .models import (ConfigError, DomainError, HamiltonianModel, IntegrationError, evaluate,
                     symplectic_j)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class ConvergenceError(RuntimeError):
    """Newton iteration failed; ``history`` holds the residual norms."""

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class MarginalStabilityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PoincareSection:
    """Surface ``q[index] == value`` crossed with ``sign(qdot[index]) == direction``.

    Section coordinates are ``(q_o, p_o)`` of the other degree of freedom;
    ``p[index]`` is fixed by the energy.
    """

    energy: float
    index: int = 0
    value: float = 0.0
    direction: int = 1
    transversality_tol: float = 1e-8

    @property
    def other(self) -> int:
        return 1 - self.index

    def lift(self, model: HamiltonianModel, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        x = np.zeros(4)
        x[self.index] = self.value
        x[self.other] = z[0]
        x[2 + self.other] = z[1]
        kin = 2.0 * (self.energy - model.potential(x[:2])) - z[1] ** 2
        if kin <= 0.0:
            raise DomainError(f"section point {z} is outside the energy shell")
        x[2 + self.index] = self.direction * math.sqrt(kin)
        return x

    def project(self, x) -> np.ndarray:
        x = np.asarray(x)
        return np.array([x[self.other], x[2 + self.other]])

    def contains(self, model, z) -> bool:
        x = np.zeros(2)
        x[self.index] = self.value
        x[self.other] = z[0]
        return 2.0 * (self.energy - model.potential(x)) - z[1] ** 2 > 0.0

    def launch_jacobian(self, model, x) -> np.ndarray:
        """d x / d z at a lifted point (4x2)."""
        _, g, _ = evaluate(model, x)
        i, o = self.index, self.other
        D = np.zeros((4, 2))
        D[o, 0] = 1.0
        D[2 + o, 1] = 1.0
        D[2 + i, 0] = -g[o] / g[2 + i]
        D[2 + i, 1] = -g[2 + o] / g[2 + i]
        return D

    def land_projector(self, model, x) -> np.ndarray:
        """Projects a final-state variation onto the section (4x4)."""
        v = model.velocity(x)
        vs = v[self.index]
        if abs(vs) < self.transversality_tol:
            raise DomainError("flow is tangent to the section at the crossing")
        P = np.eye(4)
        P -= np.outer(v, np.eye(4)[self.index]) / vs
        return P

    def to_dict(self):
        return {"energy": self.energy, "index": self.index, "value": self.value,
                "direction": self.direction}


@dataclass
class SectionStep:
    z0: np.ndarray
    z1: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    derivative: np.ndarray
    monodromy: np.ndarray
    time: float
    action: float


def section_map(model, section: PoincareSection, z, n: int = 1, tol: Tolerances = DEFAULT_TOL,
                backward: bool = False, t_max: float | None = None) -> SectionStep:
    """n-th return (or pre-image) of section point ``z`` with its derivative."""
    x0 = section.lift(model, z)
    y0 = initial_state(x0)
    t_max = t_max if t_max is not None else 1e4
    t_end = -t_max if backward else t_max
    res = run_kernel(model, y0, t_end, tol,
                     section=(section.index, section.value, section.direction), ncross=n)
    if len(res[4]) < n:
        raise DomainError(f"no {n}-th section return within |t| <= {t_max}")
    x1, M, S = split_state(res[0], 2)
    D0 = section.launch_jacobian(model, x0)
    P1 = section.land_projector(model, x1)
    Dfull = P1 @ M @ D0
    o = section.other
    DP = Dfull[[o, 2 + o], :]
    return SectionStep(np.asarray(z, float).copy(), section.project(x1), x0, x1.copy(), DP,
                       M.copy(), float(res[1]), float(S))


@dataclass
class PeriodicOrbit:
    """Closed orbit on a section. Actions are int p.dq (energy actions)."""

    id: str
    energy: float
    period: float
    action: float
    monodromy: np.ndarray
    reduced: np.ndarray
    points: np.ndarray
    section: PoincareSection
    maslov: int | None = None
    label: str = ""
    repetition: int = 1
    marginal: bool = False
    residual: float = 0.0
    iterations: int = 0
    segment_times: np.ndarray | None = None
    rotation: float | None = None

    @property
    def eigenvalues(self) -> np.ndarray:
        ev = np.linalg.eigvals(self.reduced)
        return ev[np.argsort(-np.abs(ev))]

    @property
    def lyapunov_log(self) -> float:
        """log|lambda| of the expanding reduced eigenvalue."""
        return float(np.log(np.max(np.abs(self.eigenvalues))))

    @property
    def hyperbolic(self) -> bool:
        ev = self.eigenvalues
        return bool(np.all(np.abs(ev.imag) < 1e-12) and abs(ev[0].real) > 1 + 1e-4)

    @property
    def residue(self) -> float:
        """Greene's residue (2 - tr)/4."""
        return float((2.0 - np.trace(self.reduced)) / 4.0)

    def stability_det(self, r: int = 1) -> float:
        """|det(M_red^r - 1)|."""
        Mr = np.linalg.matrix_power(self.reduced, r)
        return abs(float(np.linalg.det(Mr - np.eye(2))))

    def start_point(self, model) -> np.ndarray:
        return self.section.lift(model, self.points[0])

    def to_dict(self) -> dict:
        return {
            "id": self.id, "energy": self.energy, "period": self.period,
            "action": self.action, "monodromy": self.monodromy.tolist(),
            "reduced": self.reduced.tolist(), "points": self.points.tolist(),
            "section": self.section.to_dict(), "maslov": self.maslov,
            "label": self.label, "repetition": self.repetition, "rotation": self.rotation,
            "marginal": self.marginal, "residual": self.residual,
            "eigenvalues": [float(v.real) for v in self.eigenvalues]
            if np.all(np.abs(self.eigenvalues.imag) < 1e-12) else None,
        }

    @classmethod
    def from_dict(cls, d) -> "PeriodicOrbit":
        return cls(id=d["id"], energy=d["energy"], period=d["period"], action=d["action"],
                   monodromy=np.array(d["monodromy"]), reduced=np.array(d["reduced"]),
                   points=np.array(d["points"]), section=PoincareSection(**d["section"]),
                   maslov=d.get("maslov"), label=d.get("label", ""),
                   repetition=d.get("repetition", 1), marginal=d.get("marginal", False),
                   residual=d.get("residual", 0.0), rotation=d.get("rotation"))


def _chain_residual(model, section, Z, n_per, tol):
    steps = [section_map(model, section, z, n_per, tol) for z in Z]
    m = len(Z)
    r = np.concatenate([steps[i].z1 - Z[(i + 1) % m] for i in range(m)])
    return steps, r


def _chain_jacobian(steps):
    m = len(steps)
    Jm = np.zeros((2 * m, 2 * m))
    for i, st in enumerate(steps):
        Jm[2 * i:2 * i + 2, 2 * i:2 * i + 2] = st.derivative
        j = (i + 1) % m
        Jm[2 * i:2 * i + 2, 2 * j:2 * j + 2] -= np.eye(2)
    return Jm


def newton_chain(model, section, Z, n_per=1, tol=DEFAULT_TOL, po_tol=1e-10, max_iter=50):
    """Damped Newton on the cyclic chain ``P(z_i) = z_{i+1}``."""
    Z = [np.asarray(z, float).copy() for z in Z]
    history = []
    try:
        steps, r = _chain_residual(model, section, Z, n_per, tol)
    except (DomainError, IntegrationError) as exc:
        raise ConvergenceError(f"initial chain not integrable: {exc}", history) from None
    it = 0
    while True:
        rn = float(np.max(np.abs(r)))
        history.append(rn)
        if rn < po_tol:
            return Z, steps, history, it
        if it >= max_iter:
            raise ConvergenceError(
                f"no convergence after {max_iter} iterations (residual {rn:.3g})", history)
        it += 1
        Jm = _chain_jacobian(steps)
        try:
            dz = np.linalg.solve(Jm, -r)
        except np.linalg.LinAlgError:
            dz = np.linalg.lstsq(Jm, -r, rcond=None)[0]
        lam = 1.0
        accepted = False
        while lam > 1e-4:
            Zt = [Z[i] + lam * dz[2 * i:2 * i + 2] for i in range(len(Z))]
            try:
                st, rt = _chain_residual(model, section, Zt, n_per, tol)
            except (DomainError, IntegrationError):
                lam *= 0.5
                continue
            if np.max(np.abs(rt)) < (1.0 - 0.25 * lam) * rn or rn < 1e3 * po_tol:
                Z, steps, r = Zt, st, rt
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            raise ConvergenceError(f"line search failed at residual {rn:.3g}", history)


def orbit_from_chain(model, section, Z, steps, label="", oid=None, history=(), iterations=0):
    M = np.eye(4)
    R = np.eye(2)
    for st in steps:
        M = st.monodromy @ M
        R = st.derivative @ R
    period = sum(st.time for st in steps)
    action = sum(st.action for st in steps)
    po = PeriodicOrbit(
        id=oid or "", energy=section.energy, period=period, action=action,
        monodromy=M, reduced=R, points=np.array(Z), section=section, label=label,
        residual=float(history[-1]) if history else 0.0, iterations=iterations,
        segment_times=np.array([st.time for st in steps]))
    ev = po.eigenvalues
    if np.all(np.abs(ev.imag) < 1e-12) and abs(abs(ev[0].real) - 1.0) < 1e-4:
        po.marginal = True
        warnings.warn(f"orbit {po.id or label}: |lambda| within 1e-4 of 1 (marginal stability)",
                      MarginalStabilityWarning, stacklevel=2)
    elif np.any(np.abs(ev.imag) > 1e-12) and abs(np.trace(R) - 2.0) < 1e-8:
        po.marginal = True
    if not po.id:
        po.id = f"po-{po.period:.8f}-{po.points[0][0]:+.6f}-{po.points[0][1]:+.6f}"
    return po


def find_po(model: HamiltonianModel, section: PoincareSection, guess, E: float | None = None,
            n_points: int | None = None, tol: Tolerances = DEFAULT_TOL, po_tol: float = 1e-10,
            max_iter: int = 50, label: str = "", with_maslov: bool = True) -> PeriodicOrbit:
    """Converge a periodic orbit from a section guess.

    ``guess`` is a single section point or a sequence of them (one per
    section crossing, multi-shooting). A single point with ``n_points > 1``
    is expanded into a chain by iterating the section map.
    """
    if model.dof != 2:
        raise DomainError("find_po requires a 2-DOF model")
    if E is not None and abs(E - section.energy) > 0:
        section = PoincareSection(E, section.index, section.value, section.direction)
    guess = np.asarray(guess, dtype=float)
    if guess.ndim == 1:
        Z = [guess]
        for _ in range((n_points or 1) - 1):
            Z.append(section_map(model, section, Z[-1], 1, tol).z1)
    else:
        Z = list(guess)
    Z, steps, history, it = newton_chain(model, section, Z, 1, tol, po_tol, max_iter)
    po = orbit_from_chain(model, section, Z, steps, label=label, history=history, iterations=it)
    if with_maslov:
        po.maslov = maslov_index_po(model, po, tol)
    return po


def repetition(po: PeriodicOrbit, r: int) -> PeriodicOrbit:
    """r-fold traversal of ``po`` (no integration)."""
    if r < 1:
        raise ConfigError("repetition: r must be >= 1")
    if r == 1:
        return po
    return PeriodicOrbit(
        id=f"{po.id}^{r}", energy=po.energy, period=r * po.period, action=r * po.action,
        monodromy=np.linalg.matrix_power(po.monodromy, r),
        reduced=np.linalg.matrix_power(po.reduced, r),
        points=np.concatenate([po.points] * r), section=po.section,
        maslov=None if po.maslov is None else maslov_repetition(po, r), label=po.label,
        repetition=po.repetition * r, marginal=po.marginal, residual=po.residual,
        rotation=None if po.rotation is None else r * po.rotation)


# --- Maslov index ------------------------------------------------------------

def unstable_direction(M: np.ndarray, flow_vec: np.ndarray):
    """Real eigenvector of the full monodromy with the largest |eigenvalue|."""
    ev, V = np.linalg.eig(M)
    k = int(np.argmax(np.abs(ev)))
    if abs(ev[k].imag) > 1e-9 or abs(abs(ev[k]) - 1.0) < 1e-6:
        return None, ev[k]
    w = np.real(V[:, k])
    return w / np.linalg.norm(w), float(ev[k].real)


def plane_crossings(model, x0, M_samples, x_samples, w0) -> int:
    """Sign changes of det[qdot(t), (M(t) w0)_q] along one traversal."""
    L = model.dof
    vals = []
    for x, M in zip(x_samples, M_samples):
        qdot = model.velocity(x)[:L]
        if L == 1:
            vals.append(qdot[0])
        else:
            wq = (M @ w0)[:L]
            wq = wq / (np.linalg.norm(M @ w0) + 1e-300)
            vals.append(qdot[0] * wq[1] - qdot[1] * wq[0])
    vals = np.array(vals)
    s = np.sign(vals)
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def _transverse_frame(model, x):
    """Symplectic-complement projections of the normal position and momentum
    displacements; the first frame coordinate vanishes exactly where the
    projection onto configuration space is singular."""
    _, g, _ = evaluate(model, x)
    J = symplectic_j(2)
    v = J @ g
    qd = x[2:]
    n = np.array([-qd[1], qd[0]]) / np.linalg.norm(qd)
    wvg = (J @ v) @ g

    def proj(u):
        return u - ((J @ u) @ g) / wvg * v + ((J @ u) @ v) / wvg * g

    e1 = proj(np.concatenate([n, [0.0, 0.0]]))
    e2 = proj(np.concatenate([[0.0, 0.0], n]))
    return e1, e2, J


def transverse_path(model, po: PeriodicOrbit, tol: Tolerances = DEFAULT_TOL,
                    samples_per_return: int = 400):
    """Linearized transverse flow ``Psi(t)`` (2x2) in a co-moving frame."""
    x0 = po.start_point(model)
    n = max(200, samples_per_return * len(po.points))
    grid = np.linspace(0.0, po.period, n + 1)
    out = run_kernel(model, initial_state(x0), po.period, tol, out_t=grid)[6]
    xs, Ms, _ = split_state(out, 2)
    f1, f2, J = _transverse_frame(model, x0)
    Psi = np.empty((len(xs), 2, 2))
    for k, (x, M) in enumerate(zip(xs, Ms)):
        e1, e2, _ = _transverse_frame(model, x)
        w12 = (J @ e1) @ e2
        for j, f in enumerate((f1, f2)):
            u = M @ f
            Psi[k, 0, j] = ((J @ u) @ e2) / w12
            Psi[k, 1, j] = ((J @ e1) @ u) / w12
    return grid[:len(xs)], Psi


def _vertical_crossings(Psi, u):
    c1 = Psi[:, 0, :] @ u
    return count_sign_changes(c1)


def maslov_data(model, po: PeriodicOrbit, tol: Tolerances = DEFAULT_TOL, periods: int = 200):
    """(maslov index, transverse rotation angle) of a closed orbit.

    Hyperbolic orbits: zeros of the normal position component along the
    unstable direction over one period. Elliptic orbits: the rotation angle
    Phi of the transverse flow is estimated from the mean number of
    vertical crossings over many periods and snapped to ``2 pi m +- alpha``;
    the index is ``2 floor(Phi / 2 pi) + 1``.
    """
    _, Psi = transverse_path(model, po, tol)
    A = Psi[-1]
    tr = float(np.trace(A))
    if abs(tr) > 2.0:
        ev, V = np.linalg.eig(A)
        w = np.real(V[:, int(np.argmax(np.abs(ev)))])
        return _vertical_crossings(Psi, w), None
    u = np.array([1.0, 0.3])
    u /= np.linalg.norm(u)
    total = 0
    for _ in range(periods):
        path = Psi @ u
        s = np.sign(path[:, 0])
        s = s[s != 0]
        total += int(np.count_nonzero(s[1:] != s[:-1]))
        u = A @ u
        u /= np.linalg.norm(u)
    est = math.pi * total / periods
    alpha = math.acos(max(-1.0, min(1.0, tr / 2.0)))
    m0 = int(math.floor(est / (2 * math.pi)))
    cands = [2 * math.pi * m + sgn * alpha for m in (m0 - 1, m0, m0 + 1, m0 + 2)
             for sgn in (1, -1)]
    phi = min((c for c in cands if c > 0), key=lambda c: abs(c - est))
    return 2 * int(math.floor(phi / (2 * math.pi))) + 1, phi


def maslov_index_po(model, po: PeriodicOrbit, tol: Tolerances = DEFAULT_TOL) -> int:
    """Maslov index of one traversal; also stores the rotation angle of
    elliptic orbits on ``po.rotation``."""
    sigma, phi = maslov_data(model, po, tol)
    po.rotation = phi
    return sigma


def maslov_repetition(po: PeriodicOrbit, r: int) -> int:
    if po.rotation is not None:
        return 2 * int(math.floor(r * po.rotation / (2 * math.pi))) + 1
    return r * po.maslov


# --- orbit database ------------------------------------------------------------

@dataclass
class OrbitDatabase:
    model: HamiltonianModel
    energy: float
    orbits: list = field(default_factory=list)

    def add(self, po: PeriodicOrbit):
        self.orbits.append(po)

    def __iter__(self):
        return iter(self.orbits)

    def __len__(self):
        return len(self.orbits)

    def by_id(self, oid) -> PeriodicOrbit:
        for po in self.orbits:
            if po.id == oid:
                return po
        raise KeyError(oid)

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "model": self.model.to_dict(),
                "model_hash": self.model.model_hash(), "energy": self.energy,
                "orbits": [po.to_dict() for po in self.orbits]}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: unsupported {d.get('schema_version')!r}")
        model = HamiltonianModel.from_dict(d["model"])
        if d.get("model_hash") != model.model_hash():
            raise ConfigError("model_hash: does not match the stored model")
        return cls(model, d["energy"], [PeriodicOrbit.from_dict(o) for o in d["orbits"]])

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --- invariant manifolds -----------------------------------------------------

@dataclass
class ManifoldStrand:
    """Polyline of one branch of W^u or W^s on the section.

    Point ``i`` is ``F^n(z* + s e)`` with ``n = floor(sigma)`` and
    ``s = eps |lam|^(sigma - n)``; ``F`` is the orbit's return map (or its
    inverse for stable strands), applied once per unit of ``sigma``.
    """

    po_id: str
    stable: bool
    points: np.ndarray
    sigma: np.ndarray
    eps: float
    eigenvector: np.ndarray
    multiplier: float
    base: np.ndarray
    crossings_per_map: int

    @property
    def arc_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))


def _strand_map(model, section, z, n, backward, tol):
    step = section_map(model, section, z, n, tol, backward=backward) if n else None
    return step


def strand_point(model, strand: ManifoldStrand, section, sigma, tol=DEFAULT_TOL, derivative=False):
    """Point (and d/dsigma) of a strand at parameter ``sigma``."""
    n = int(math.floor(sigma))
    lam = abs(strand.multiplier)
    s = strand.eps * lam ** (sigma - n)
    z0 = strand.base + s * strand.eigenvector
    if n == 0:
        z, D = z0, np.eye(2)
    else:
        st = section_map(model, section, z0, n * strand.crossings_per_map, tol,
                         backward=strand.stable)
        z, D = st.z1, st.derivative
    if derivative:
        return z, D @ strand.eigenvector * s * math.log(lam)
    return z


def grow_manifold(model, po: PeriodicOrbit, stable: bool = False, arc_length: float = 2.0,
                  fineness: float = 0.02, eps: float = 1e-5, eps_min: float = 1e-12,
                  side: int = 1, tol: Tolerances = DEFAULT_TOL, max_points: int = 20000,
                  max_maps: int = 40) -> ManifoldStrand:
    """Grow one branch of the unstable (or stable) manifold of ``po``.

    ``fineness`` bounds the spacing between consecutive strand points;
    ``side`` picks the branch (+1 or -1 along the eigenvector).
    """
    if not po.hyperbolic:
        raise DomainError(f"orbit {po.id}: manifolds need a hyperbolic orbit (|lambda| > 1 + 1e-4)")
    section = po.section
    m = len(po.points)
    R = po.reduced
    lam = float(po.eigenvalues[0].real)
    if lam < 0:
        m *= 2
        R = R @ R
        lam = lam * lam
    ev, V = np.linalg.eig(R)
    k = int(np.argmax(np.abs(ev))) if not stable else int(np.argmin(np.abs(ev)))
    e = np.real(V[:, k])
    e = side * e / np.linalg.norm(e)
    base = po.points[0].copy()
    # shrink eps until the first image follows the linear prediction
    while True:
        try:
            z1 = section_map(model, section, base + eps * e, m, tol, backward=stable).z1
            dev = np.linalg.norm(z1 - (base + lam * eps * e)) / (lam * eps)
        except (DomainError, IntegrationError):
            dev = np.inf
        if dev <= 0.1:
            break
        eps *= 0.1
        if eps < eps_min:
            raise DomainError(f"manifold seed leaves the linear regime for every eps >= {eps_min}")
    strand = ManifoldStrand(po.id, stable, np.empty((0, 2)), np.empty(0), eps, e, lam, base, m)

    sig = list(np.linspace(0.0, 1.0, 9, endpoint=False))
    pts = [strand_point(model, strand, section, s, tol) for s in sig]
    total = sum(np.linalg.norm(pts[i + 1] - pts[i]) for i in range(len(pts) - 1))
    # extend one fundamental domain at a time, then refine
    n_dom = 1
    while total < arc_length and n_dom < max_maps:
        new_sig = list(np.linspace(n_dom, n_dom + 1, 9, endpoint=False))
        try:
            new_pts = [strand_point(model, strand, section, s, tol) for s in new_sig]
        except (DomainError, IntegrationError):
            break
        sig += new_sig
        pts += new_pts
        i = len(sig) - len(new_sig) - 1
        while i < len(sig) - 1 and len(sig) < max_points:
            if np.linalg.norm(pts[i + 1] - pts[i]) > fineness:
                smid = 0.5 * (sig[i] + sig[i + 1])
                if smid - sig[i] < 1e-12:
                    i += 1
                    continue
                sig.insert(i + 1, smid)
                pts.insert(i + 1, strand_point(model, strand, section, smid, tol))
            else:
                i += 1
        seglen = np.linalg.norm(np.diff(np.array(pts), axis=0), axis=1)
        total = float(seglen.sum())
        n_dom += 1
    pts = np.array(pts)
    sig = np.array(sig)
    seglen = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    keep = cum <= arc_length
    keep[:2] = True
    strand.points = pts[keep]
    strand.sigma = sig[keep]
    return strand


def _segment_intersections(A, B):
    """All (i, j, a, b) with A[i] + a (A[i+1]-A[i]) == B[j] + b (B[j+1]-B[j])."""
    out = []
    a0, a1 = A[:-1], A[1:]
    b0, b1 = B[:-1], B[1:]
    lo_a, hi_a = np.minimum(a0, a1), np.maximum(a0, a1)
    lo_b, hi_b = np.minimum(b0, b1), np.maximum(b0, b1)
    for i in range(len(a0)):
        cand = np.nonzero(np.all(lo_b <= hi_a[i], axis=1) & np.all(hi_b >= lo_a[i], axis=1))[0]
        da = a1[i] - a0[i]
        for j in cand:
            db = b1[j] - b0[j]
            den = da[0] * (-db[1]) - da[1] * (-db[0])
            if den == 0.0:
                continue
            r = b0[j] - a0[i]
            a = (r[0] * (-db[1]) - r[1] * (-db[0])) / den
            b = (da[0] * r[1] - da[1] * r[0]) / den
            if 0.0 <= a < 1.0 and 0.0 <= b < 1.0:
                out.append((i, int(j), a, b))
    return out


@dataclass
class HeteroclinicLink:
    id: str
    source: str
    target: str
    point: np.ndarray
    sigma_u: float
    sigma_s: float
    stub: np.ndarray
    stub_times: np.ndarray
    n_before: int
    n_after: int
    rank: int = 0

    @property
    def stub_duration(self) -> float:
        return float(np.sum(self.stub_times))

    def to_dict(self):
        return {"id": self.id, "source": self.source, "target": self.target,
                "point": self.point.tolist(), "stub": self.stub.tolist(),
                "stub_duration": self.stub_duration, "rank": self.rank}


def find_heteroclinic(model, strand_u: ManifoldStrand, strand_s: ManifoldStrand,
                      section: PoincareSection, tol: Tolerances = DEFAULT_TOL,
                      newton_tol: float = 1e-11, max_iter: int = 30,
                      approach_radius: float | None = None) -> list:
    """Crossings of an unstable strand of A with a stable strand of B.

    Each crossing is refined by Newton on the pair of strand parameters.
    The transition stub runs from the last point within ``approach_radius``
    of A to the first point within it of B.
    """
    if strand_u.stable or not strand_s.stable:
        raise ConfigError("find_heteroclinic: expects (unstable strand, stable strand)")
    links = []
    for i, j, a, b in _segment_intersections(strand_u.points, strand_s.points):
        su = strand_u.sigma[i] + a * (strand_u.sigma[i + 1] - strand_u.sigma[i])
        ss = strand_s.sigma[j] + b * (strand_s.sigma[j + 1] - strand_s.sigma[j])
        ok = False
        for _ in range(max_iter):
            try:
                zu, du = strand_point(model, strand_u, section, su, tol, derivative=True)
                zs, ds = strand_point(model, strand_s, section, ss, tol, derivative=True)
            except (DomainError, IntegrationError):
                break
            r = zu - zs
            if np.max(np.abs(r)) < newton_tol:
                ok = True
                break
            Jm = np.column_stack([du, -ds])
            try:
                d = np.linalg.solve(Jm, -r)
            except np.linalg.LinAlgError:
                break
            su += d[0]
            ss += d[1]
        if not ok:
            log.info("heteroclinic crossing %d/%d did not refine", i, j)
            continue
        if any(abs(l.sigma_u - su) < 1e-7 and abs(l.sigma_s - ss) < 1e-7 for l in links):
            continue
        links.append(_build_link(model, strand_u, strand_s, section, zu, su, ss, tol,
                                 approach_radius))
    links.sort(key=lambda l: l.stub_duration)
    for rank, l in enumerate(links):
        l.rank = rank
        l.id = f"{l.source}->{l.target}#{rank}"
    return links


def _build_link(model, su_strand, ss_strand, section, h, su, ss, tol, radius):
    mu = su_strand.crossings_per_map
    ms = ss_strand.crossings_per_map
    if radius is None:
        radius = 0.05 * max(1.0, np.max(np.abs(su_strand.points)))
    back, back_t = [h], []
    z = h
    for _ in range(int(math.floor(su)) * mu + mu):
        st = section_map(model, section, z, 1, tol, backward=True)
        back.append(st.z1)
        back_t.append(-st.time)
        z = st.z1
        if np.linalg.norm(z - su_strand.base) < radius:
            break
    fwd, fwd_t = [], []
    z = h
    for _ in range(int(math.floor(ss)) * ms + ms):
        st = section_map(model, section, z, 1, tol)
        fwd.append(st.z1)
        fwd_t.append(st.time)
        z = st.z1
        if np.linalg.norm(z - ss_strand.base) < radius:
            break
    stub = np.array(back[::-1] + fwd)
    times = np.array(back_t[::-1] + fwd_t)
    return HeteroclinicLink("", su_strand.po_id, ss_strand.po_id, h.copy(), su, ss, stub,
                            times, len(back) - 1, len(fwd))


# --- secondary orbits ----------------------------------------------------------

@dataclass
class SecondaryBlueprint:
    """Cyclic circuit: wind ``k`` times around each po, then follow its link."""

    sequence: list
    links: list
    result: PeriodicOrbit | None = None

    def validate(self, orbits: dict, links: dict):
        if not self.sequence or not self.links:
            raise ConfigError("blueprint: needs at least one po and one link (not a circuit)")
        if len(self.sequence) != len(self.links):
            raise ConfigError("blueprint: one link per po entry is required")
        for pid, k in self.sequence:
            if pid not in orbits:
                raise ConfigError(f"blueprint: unknown po id {pid!r}")
            if k < 1:
                raise ConfigError(f"blueprint: windings for {pid!r} must be >= 1")
        n = len(self.sequence)
        for i, lid in enumerate(self.links):
            if lid not in links:
                raise ConfigError(f"blueprint: unknown link id {lid!r}")
            lk = links[lid]
            if lk.source != self.sequence[i][0] or lk.target != self.sequence[(i + 1) % n][0]:
                raise ConfigError(f"blueprint: link {lid!r} does not join "
                                  f"{self.sequence[i][0]} -> {self.sequence[(i + 1) % n][0]}")

    def label(self, windings=None) -> str:
        ks = windings or [k for _, k in self.sequence]
        return " ".join(f"{pid}^{k}|{lid}" for (pid, _), k, lid in zip(self.sequence, ks, self.links))


def _excursion(link: HeteroclinicLink, src: PeriodicOrbit, dst: PeriodicOrbit, radius):
    def far(z, po):
        return np.min(np.linalg.norm(po.points - z, axis=1)) > radius
    idx = [i for i, z in enumerate(link.stub) if far(z, src) and far(z, dst)]
    if not idx:
        return link.stub[len(link.stub) // 2:len(link.stub) // 2 + 1]
    return link.stub[idx[0]:idx[-1] + 1]


def build_secondary_po(model, blueprint: SecondaryBlueprint, windings, orbits: dict, links: dict,
                       tol: Tolerances = DEFAULT_TOL, po_tol: float = 1e-10, max_iter: int = 50,
                       excursion_radius: float = 0.1, with_maslov: bool = False) -> PeriodicOrbit:
    """Converge the po shadowing ``blueprint`` with the given windings."""
    blueprint.validate(orbits, links)
    if isinstance(windings, int):
        windings = [windings] * len(blueprint.sequence)
    if len(windings) != len(blueprint.sequence) or min(windings) < 1:
        raise ConfigError("windings: one positive integer per blueprint entry")
    chain = []
    section = None
    n = len(blueprint.sequence)
    for i, ((pid, _), k) in enumerate(zip(blueprint.sequence, windings)):
        po = orbits[pid]
        section = section or po.section
        chain.extend(list(po.points) * k)
        link = links[blueprint.links[i]]
        dst = orbits[blueprint.sequence[(i + 1) % n][0]]
        chain.extend(list(_excursion(link, po, dst, excursion_radius)))
    try:
        Z, steps, history, it = newton_chain(model, section, chain, 1, tol, po_tol, max_iter)
    except ConvergenceError as exc:
        raise ConvergenceError(
            f"secondary orbit {blueprint.label(windings)} did not converge: {exc}; "
            f"try larger windings", exc.history) from None
    label = blueprint.label(windings)
    po = orbit_from_chain(model, section, Z, steps, label=label, oid=f"sec[{label}]",
                          history=history, iterations=it)
    if with_maslov:
        po.maslov = maslov_index_po(model, po, tol)
    return po


def composite_action(orbits: dict, combination) -> float:
    """Sum of k S_j over ``(po id, k)`` pairs."""
    total = 0.0
    for pid, k in combination:
        if pid not in orbits:
            raise ConfigError(f"composite_action: unknown po id {pid!r}")
        total += k * orbits[pid].action
    return total


@dataclass
class LimitReport:
    windings: list
    actions: list
    action_differences: np.ndarray
    action_errors: np.ndarray
    error_ratios: np.ndarray
    expected_ratio: float
    period_differences: np.ndarray
    log_lambda_rel_error: np.ndarray
    residuals: np.ndarray

    @property
    def errors_monotone(self) -> bool:
        return bool(np.all(np.diff(self.action_errors) < 0))

    @property
    def ratio_estimate(self) -> float:
        return float(np.exp(np.mean(np.log(self.error_ratios))))

    def to_dict(self):
        return {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v)
                for k, v in self.__dict__.items()}


def secondary_limit_check(family, orbits: dict, blueprint: SecondaryBlueprint) -> LimitReport:
    """Convergence of a winding family ``[(windings, po), ...]`` to its blueprint limits."""
    if len(family) < 3:
        raise ConfigError("secondary_limit_check: needs at least 3 family members")
    family = sorted(family, key=lambda kp: sum(kp[0]) if not isinstance(kp[0], int) else kp[0])
    ids = [pid for pid, _ in blueprint.sequence]
    wl, acts, periods, loglam, resid, comp_logs = [], [], [], [], [], []
    for w, po in family:
        w = [w] * len(ids) if isinstance(w, int) else list(w)
        wl.append(w)
        acts.append(po.action)
        periods.append(po.period)
        loglam.append(po.lyapunov_log)
        combo = list(zip(ids, w))
        resid.append(po.action - composite_action(orbits, combo))
        comp_logs.append(sum(k * orbits[p].lyapunov_log for p, k in combo))
    W = np.array(wl)
    dW = np.diff(W, axis=0)
    S_inc = np.array([sum(dk * orbits[p].action for p, dk in zip(ids, row)) for row in dW])
    T_inc = np.array([sum(dk * orbits[p].period for p, dk in zip(ids, row)) for row in dW])
    dS = np.diff(acts)
    err = np.abs(dS - S_inc)
    ratios = err[1:] / err[:-1]
    inc_logs = [sum(dk * orbits[p].lyapunov_log for p, dk in zip(ids, row)) for row in dW]
    expected = float(np.exp(-np.mean(inc_logs)))
    rel = np.abs(np.array(loglam) - np.array(comp_logs)) / np.array(comp_logs)
    return LimitReport(wl, acts, dS, err, ratios, expected, np.diff(periods) - T_inc, rel,
                       np.array(resid))


# --- orbit database scan ---------------------------------------------------------

def crossing_signature(model, po: PeriodicOrbit, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """Distinct phase points where the orbit crosses q1 = 0 or q2 = 0."""
    x0 = po.start_point(model)
    pts = []
    for idx in (0, 1):
        if abs(x0[idx]) < 1e-9 and abs(x0[idx + 2]) < 1e-9:
            continue    # orbit lies inside this plane: no transverse crossings
        res = run_kernel(model, initial_state(x0, tangent=False), po.period * (1 - 1e-9), tol,
                         tangent=False, section=(idx, 0.0, 0), ncross=0)
        pts.extend(list(res[5][:, :4]))
    pts.append(x0.copy())
    # collapse repeats (simultaneous crossings of both sections)
    uniq = []
    for x in pts:
        if not any(np.linalg.norm(x - u) < 1e-7 for u in uniq):
            uniq.append(x)
    return np.array(uniq)


def same_orbit(sig_a, sig_b, atol=1e-6) -> bool:
    if len(sig_a) != len(sig_b):
        return False
    if len(sig_a) == 0:
        return True
    d = np.linalg.norm(sig_a[:, None, :] - sig_b[None, :, :], axis=2)
    return bool(np.all(d.min(axis=1) < atol) and np.all(d.min(axis=0) < atol))


def _is_primitive(points, atol=1e-7):
    m = len(points)
    for d in range(1, m):
        if m % d == 0 and np.all(np.abs(points[d:] - points[:-d]) < atol):
            return False
    return True


def scan_orbits(model, E: float, max_crossings: int = 3, grid: int = 40,
                sections=None, tol: Tolerances = DEFAULT_TOL, po_tol: float = 1e-10,
                max_period: float | None = None, with_maslov: bool = True) -> OrbitDatabase:
    """Periodic orbits of period up to ``max_crossings`` section returns.

    Fixed points of P^n are seeded from local minima of |P^n z - z| over a
    grid inside the section domain and converged by multi-shooting Newton.
    Duplicates (the same orbit seen from another section or starting
    point) are merged by comparing their crossing sets.
    """
    if model.dof != 2:
        raise DomainError("scan_orbits requires a 2-DOF model")
    if sections is None:
        sections = [PoincareSection(E, 0, 0.0, 1), PoincareSection(E, 1, 0.0, 1)]
    db = OrbitDatabase(model, E)
    sigs = []
    for section in sections:
        x = np.zeros(2)
        # extent of the section domain along the free coordinate
        qmax = 1.0
        while True:
            x[section.other] = qmax
            if model.potential(x) > E:
                break
            qmax *= 1.5
        pmax = math.sqrt(2.0 * E)
        grid = grid + 1 - grid % 2  # odd, so the symmetry lines are sampled
        qs = np.linspace(-qmax, qmax, grid)
        ps = np.linspace(-pmax, pmax, grid)
        Zg = np.array([[q, p] for q in qs for p in ps])
        inside = np.array([section.contains(model, z) for z in Zg])
        for n in range(1, max_crossings + 1):
            res = np.full(len(Zg), np.inf)
            for i, z in enumerate(Zg):
                if not inside[i]:
                    continue
                try:
                    res[i] = np.linalg.norm(section_map(model, section, z, n, tol).z1 - z)
                except (DomainError, IntegrationError):
                    pass
            R = res.reshape(grid, grid)
            seeds = []
            for a in range(grid):
                for b in range(grid):
                    v = R[a, b]
                    if not np.isfinite(v):
                        continue
                    nb = R[max(a - 1, 0):a + 2, max(b - 1, 0):b + 2]
                    if v <= np.min(nb) and v < 0.5 * qmax:
                        seeds.append(Zg[a * grid + b])
            for z in seeds:
                try:
                    Zc = [z]
                    for _ in range(n - 1):
                        Zc.append(section_map(model, section, Zc[-1], 1, tol).z1)
                    Zc, steps, hist, it = newton_chain(model, section, Zc, 1, tol, po_tol, 40)
                except (ConvergenceError, DomainError, IntegrationError):
                    continue
                if not _is_primitive(np.array(Zc)):
                    continue
                # orbits lying inside the section plane are not transverse to it
                vs = [abs(section.lift(model, zc)[2 + section.index]) for zc in Zc]
                if min(vs) < 1e-3 * math.sqrt(2.0 * E):
                    continue
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", MarginalStabilityWarning)
                    po = orbit_from_chain(model, section, Zc, steps, history=hist, iterations=it)
                if max_period is not None and po.period > max_period:
                    continue
                try:
                    sig = crossing_signature(model, po, tol)
                except IntegrationError:
                    continue
                if any(abs(o.period - po.period) < 1e-6 and same_orbit(sig, s)
                       for o, s in zip(db.orbits, sigs)):
                    continue
                if with_maslov:
                    po.maslov = maslov_index_po(model, po, tol)
                db.add(po)
                sigs.append(sig)
    _close_under_symmetry(model, db, sigs, sections, tol, po_tol, with_maslov)
    db.orbits.sort(key=lambda o: (round(o.period, 8), o.action))
    for i, po in enumerate(db.orbits):
        po.id = f"p{i:02d}"
        po.label = po.label or f"n{len(po.points)}"
    return db


def symmetry_ops(model) -> list:
    """Linear phase-space maps taking orbits to orbits (time reversal included)."""
    ops = []
    swaps = [np.eye(4)]
    if model.kind == "coupledquartic2d" or (
            model.kind == "ho2d" and model.params["omega1"] == model.params["omega2"]):
        swaps.append(np.eye(4)[[1, 0, 3, 2]])
    for P in swaps:
        for s1 in (1, -1):
            for s2 in (1, -1):
                for tr in (1, -1):
                    D = np.diag([s1, s2, tr * s1, tr * s2]).astype(float)
                    ops.append(D @ P)
    return ops


def _close_under_symmetry(model, db, sigs, sections, tol, po_tol, with_maslov):
    ops = symmetry_ops(model)
    i = 0
    while i < len(db.orbits):
        po, sig = db.orbits[i], sigs[i]
        for S in ops:
            img = sig @ S.T
            if any(abs(o.period - po.period) < 1e-6 and same_orbit(img, s2)
                   for o, s2 in zip(db.orbits, sigs)):
                continue
            new = None
            for section in sections:
                on = [x for x in img if abs(x[section.index] - section.value) < 1e-9
                      and x[2 + section.index] * section.direction > 0]
                for x in on:
                    try:
                        new = find_po(model, section, section.project(x),
                                      n_points=len(on), tol=tol, po_tol=po_tol,
                                      with_maslov=False)
                    except (ConvergenceError, DomainError):
                        new = None
                    if new is not None and abs(new.period - po.period) > 1e-6:
                        new = None
                    if new is not None:
                        break
                if new is not None:
                    break
            if new is None:
                log.warning("symmetric partner of %s not recovered", po.id or po.period)
                continue
            nsig = crossing_signature(model, new, tol)
            if with_maslov:
                new.maslov = maslov_index_po(model, new, tol)
            db.add(new)
            sigs.append(nsig)
        i += 1
