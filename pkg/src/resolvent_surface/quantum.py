"""Exact quantum reference: oscillator-basis spectra, Wigner and chord symbols.

Matrix elements come from ladder-operator algebra. Position powers are
formed in a basis four states larger than requested and then truncated, so
that q^2 and q^4 are exact within the kept block.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import optimize as spo

from . import _kernels as kern
from .models import DomainError, HamiltonianModel


class SpectrumConvergenceError(RuntimeError):
    pass


class ResolutionError(ValueError):
    pass


class AliasingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BasisSpec:
    """Oscillator basis of ``n_basis`` states per degree of freedom.

    For 2-DOF models the basis is the triangle ``n1 + n2 < n_basis``.
    ``omega=None`` picks the frequency whose basis ellipse just covers the
    classical shell at the highest energy the basis can represent.
    """

    n_basis: int = 80
    omega: float | None = None
    delta_n: int = 10

    def __post_init__(self):
        if self.n_basis < 4:
            raise DomainError("n_basis must be >= 4")
        if self.delta_n < 1:
            raise DomainError("delta_n must be >= 1")


def _q_ladder(n):
    off = np.sqrt(np.arange(1, n, dtype=float))
    return np.diag(off, 1) + np.diag(off, -1)


def _one_dof_blocks(N, omega, hbar):
    """q^2, q^4 and p^2 in the lowest N oscillator states."""
    Q = math.sqrt(hbar / (2.0 * omega)) * _q_ladder(N + 4)
    Q2f = Q @ Q
    Q4 = (Q2f @ Q2f)[:N, :N]
    Q2 = Q2f[:N, :N]
    n = np.arange(N, dtype=float)
    P2 = np.diag(hbar * omega * (n + 0.5))
    off2 = np.sqrt((n[:-2] + 1.0) * (n[:-2] + 2.0))
    P2 -= 0.5 * hbar * omega * (np.diag(off2, 2) + np.diag(off2, -2))
    return Q2, Q4, P2


def _axis_extent(model, E):
    """Largest |q_i| reachable at energy E along a coordinate axis."""
    L = model.dof
    best = 0.0
    for i in range(L):
        def f(r, i=i):
            q = np.zeros(L)
            q[i] = r
            return model.potential(q) - E
        R = 1.0
        while f(R) < 0:
            R *= 2.0
        best = max(best, spo.brentq(f, 0.0, R) if f(0.0) < 0 else 0.0)
    return best


def auto_omega(model: HamiltonianModel, N: int) -> float:
    """Basis frequency matching the basis ellipse to the classical shell."""
    if model.kind == "harmonic1d":
        return model.params["omega"]
    if model.kind == "ho2d":
        return math.sqrt(model.params["omega1"] * model.params["omega2"])
    hbar = model.hbar
    target = (2 * N + 1) * hbar / 2.0

    def g(E):
        return _axis_extent(model, E) * math.sqrt(2.0 * (E - model.potential_minimum)) - target

    lo = model.potential_minimum + 1e-9
    hi = max(1.0, abs(model.potential_minimum)) + 1.0
    while g(hi) < 0:
        hi *= 2.0
    E = spo.brentq(g, lo, hi)
    return math.sqrt(2.0 * (E - model.potential_minimum)) / _axis_extent(model, E)


def _basis_states(model, N):
    if model.dof == 1:
        return np.arange(N)[:, None]
    return np.array([(a, b) for s in range(N) for a in range(s + 1) for b in [s - a]])


def _hamiltonian_blocks(model, N, omega):
    """Parity blocks ``[(labels, index array, H)]`` of the Hamiltonian matrix."""
    hbar = model.hbar
    par = model.params
    Q2, Q4, P2 = _one_dof_blocks(N, omega, hbar)
    states = _basis_states(model, N)
    out = []
    if model.dof == 1:
        if model.kind == "harmonic1d":
            Hf = 0.5 * P2 + 0.5 * par["omega"] ** 2 * Q2
        elif model.kind == "quartic1d":
            Hf = 0.5 * P2 + 0.25 * par["beta"] * Q4
        else:
            Hf = 0.5 * P2 - 0.5 * par["omega"] ** 2 * Q2 + 0.25 * par["beta"] * Q4
        for parity in (0, 1):
            idx = np.nonzero(states[:, 0] % 2 == parity)[0]
            out.append(((parity,), idx, Hf[np.ix_(idx, idx)]))
        return states, out
    if model.kind == "ho2d":
        w1, w2 = par["omega1"], par["omega2"]
        A1 = 0.5 * P2 + 0.5 * w1 ** 2 * Q2
        A2 = 0.5 * P2 + 0.5 * w2 ** 2 * Q2
        C = None
    else:
        A1 = A2 = 0.5 * P2 + 0.25 * par["beta"] * Q4
        C = 0.5 * par["coupling"]
    for p1 in (0, 1):
        for p2 in (0, 1):
            idx = np.nonzero((states[:, 0] % 2 == p1) & (states[:, 1] % 2 == p2))[0]
            a, b = states[idx, 0], states[idx, 1]
            same_a = a[:, None] == a[None, :]
            same_b = b[:, None] == b[None, :]
            H = A1[np.ix_(a, a)] * same_b + A2[np.ix_(b, b)] * same_a
            if C is not None:
                H = H + C * Q2[np.ix_(a, a)] * Q2[np.ix_(b, b)]
            out.append(((p1, p2), idx, H))
    return states, out


def _solve(model, N, omega, vectors=True):
    states, blocks = _hamiltonian_blocks(model, N, omega)
    evals, labels, vecs, rank = [], [], [], []
    for lab, idx, H in blocks:
        if len(idx) == 0:
            continue
        if vectors:
            w, V = sla.eigh(H)
            full = np.zeros((len(states), len(w)))
            full[idx] = V
            vecs.append(full)
        else:
            w = sla.eigh(H, eigvals_only=True)
        evals.append(w)
        labels.extend([lab] * len(w))
        rank.extend(range(len(w)))
    e = np.concatenate(evals)
    order = np.argsort(e, kind="stable")
    V = np.hstack(vecs)[:, order] if vectors else None
    return e[order], [labels[i] for i in order], [rank[i] for i in order], V, states


@dataclass
class SpectrumResult:
    model: HamiltonianModel
    energies: np.ndarray
    vectors: np.ndarray = field(repr=False)
    states: np.ndarray = field(repr=False)
    omega: float = 1.0
    n_basis: int = 0
    shifts: np.ndarray = field(default=None, repr=False)
    n_converged: int = 0
    labels: list = field(default_factory=list, repr=False)
    spectrum_tol: float = 1e-8

    @property
    def converged_energy(self) -> float:
        """Energy below which every level is converged."""
        if self.n_converged == 0:
            return -math.inf
        return float(self.energies[self.n_converged - 1])

    def to_dict(self):
        return {"energies": self.energies[:self.n_converged].tolist(),
                "shifts": self.shifts[:self.n_converged].tolist(),
                "n_converged": self.n_converged, "omega": self.omega,
                "n_basis": self.n_basis, "spectrum_tol": self.spectrum_tol}


def diagonalize(model: HamiltonianModel, basis: BasisSpec = BasisSpec(), n_levels: int | None = None,
                e_max: float | None = None, spectrum_tol: float = 1e-8) -> SpectrumResult:
    """Eigenvalues and eigenvectors with a convergence check at N + delta_n.

    Levels are matched between the two basis sizes inside each parity
    block. The requested levels (lowest ``n_levels`` or all below
    ``e_max``) must shift by less than ``spectrum_tol``.
    """
    N = basis.n_basis
    omega = basis.omega or auto_omega(model, N)
    e, labels, rank, V, states = _solve(model, N, omega)
    e2, labels2, rank2, _, _ = _solve(model, N + basis.delta_n, omega, vectors=False)
    ref = {}
    for val, lab, r in zip(e2, labels2, rank2):
        ref[(lab, r)] = val
    shifts = np.array([abs(val - ref[(lab, r)]) for val, lab, r in zip(e, labels, rank)])
    scale = np.maximum(1.0, np.abs(e))
    ok = shifts <= spectrum_tol * scale
    n_conv = int(np.argmin(ok)) if not np.all(ok) else len(e)
    if n_levels is None and e_max is None:
        n_levels = max(4, len(e) // 4) if model.dof == 1 else max(4, len(e) // 8)
    if e_max is not None:
        req = int(np.searchsorted(e, e_max, side="right"))
    else:
        req = int(n_levels)
    if req > len(e):
        raise SpectrumConvergenceError(f"requested {req} levels but the basis holds {len(e)}")
    if req > n_conv:
        bad = int(np.argmax(shifts[:req] / scale[:req]))
        raise SpectrumConvergenceError(
            f"levels above index {n_conv} not converged; worst level {bad} "
            f"(E={e[bad]:.10g}) shifts by {shifts[bad]:.3g} between N={N} and "
            f"N={N + basis.delta_n}")
    return SpectrumResult(model, e, V, states, omega, N, shifts, n_conv, labels, spectrum_tol)


# --- wavefunctions -------------------------------------------------------------

def hermite_functions(nmax, q, omega, hbar):
    """Oscillator eigenfunctions phi_0..phi_{nmax-1} at points ``q`` (nmax, len(q))."""
    q = np.asarray(q, dtype=float)
    xi = q * math.sqrt(omega / hbar)
    out = np.empty((nmax, q.size))
    out[0] = (omega / (math.pi * hbar)) ** 0.25 * np.exp(-0.5 * xi * xi)
    if nmax > 1:
        out[1] = math.sqrt(2.0) * xi * out[0]
    for k in range(1, nmax - 1):
        out[k + 1] = math.sqrt(2.0 / (k + 1)) * xi * out[k] - math.sqrt(k / (k + 1)) * out[k - 1]
    return out


def wavefunction(spec: SpectrumResult, level: int, q) -> np.ndarray:
    """psi_level at 1-DOF points ``q`` or 2-DOF points ``q`` of shape (..., 2)."""
    if level >= spec.n_converged:
        warnings.warn(f"level {level} is not converged", RuntimeWarning, stacklevel=2)
    c = spec.vectors[:, level]
    hbar = spec.model.hbar
    N = spec.n_basis
    if spec.model.dof == 1:
        phi = hermite_functions(N, np.ravel(q), spec.omega, hbar)
        return (c @ phi).reshape(np.shape(q))
    q = np.asarray(q, dtype=float)
    pts = q.reshape(-1, 2)
    phi1 = hermite_functions(N, pts[:, 0], spec.omega, hbar)
    phi2 = hermite_functions(N, pts[:, 1], spec.omega, hbar)
    a, b = spec.states[:, 0], spec.states[:, 1]
    vals = np.einsum("s,sk,sk->k", c, phi1[a], phi2[b])
    return vals.reshape(q.shape[:-1])


def wavefunction_grid_2d(spec: SpectrumResult, level: int, q1, q2) -> np.ndarray:
    """psi on the product grid ``q1 x q2`` (len(q1), len(q2))."""
    N = spec.n_basis
    hbar = spec.model.hbar
    phi1 = hermite_functions(N, q1, spec.omega, hbar)
    phi2 = hermite_functions(N, q2, spec.omega, hbar)
    C = np.zeros((N, N))
    C[spec.states[:, 0], spec.states[:, 1]] = spec.vectors[:, level]
    return phi1.T @ C @ phi2


# --- Wigner functions -----------------------------------------------------------

@dataclass
class WignerGrid:
    q: np.ndarray
    p: np.ndarray
    W: np.ndarray
    hbar: float = 1.0

    @property
    def dq(self) -> float:
        return float(self.q[1] - self.q[0])

    @property
    def dp(self) -> float:
        return float(self.p[1] - self.p[0])

    @property
    def norm(self) -> float:
        return float(self.W.sum() * self.dq * self.dp)

    def marginal_q(self) -> np.ndarray:
        return self.W.sum(axis=1) * self.dp

    def marginal_p(self) -> np.ndarray:
        return self.W.sum(axis=0) * self.dq


def default_q_grid(model, E, n=256, margin_lengths=4.0):
    """Grid covering the allowed region at E plus a few tunnelling lengths."""
    if model.dof != 1:
        raise DomainError("default_q_grid is for 1-DOF models")
    R = _axis_extent(model, E)
    if model.kind == "doublewell1d":
        R = max(R, float(np.max(np.abs(_turning(model, E)))))
    # tunnelling length: hbar / sqrt(2 |V'(R)| * hbar)^(2/3)
    h = 1e-6 * max(R, 1.0)
    dV = abs(model.potential(R + h) - model.potential(R - h)) / (2 * h)
    ell = (model.hbar ** 2 / max(dV, 1e-12)) ** (1.0 / 3.0)
    half = R + margin_lengths * ell
    return np.linspace(-half, half, n)


def _turning(model, E):
    from .dynamics import turning_points
    return turning_points(model, E)


def reciprocal_p_grid(q_grid, hbar):
    """p grid whose spacing makes the Wigner p-sum an exact marginal."""
    nq = len(q_grid)
    dq = q_grid[1] - q_grid[0]
    dp = math.pi * hbar / (nq * dq)
    return (np.arange(nq) - nq // 2) * dp


def wigner_of_state(psi, q_grid, hbar: float = 1.0, p_grid=None, check: bool = True) -> WignerGrid:
    """W(q, p) = (1/pi hbar) int dy psi*(q+y) psi(q-y) exp(2ipy/hbar) on the grid."""
    q_grid = np.asarray(q_grid, dtype=float)
    psi = np.asarray(psi, dtype=complex)
    dq = float(q_grid[1] - q_grid[0])
    if not np.allclose(np.diff(q_grid), dq, rtol=1e-9, atol=0):
        raise DomainError("q_grid must be uniform")
    nrm = float(np.sum(np.abs(psi) ** 2) * dq)
    if abs(nrm - 1.0) > 1e-6:
        raise DomainError(f"psi is not normalized on the grid (norm {nrm:.8f})")
    if p_grid is None:
        p_grid = reciprocal_p_grid(q_grid, hbar)
    W = kern.wigner(psi, dq, np.asarray(p_grid, dtype=float), hbar)
    wg = WignerGrid(q_grid, np.asarray(p_grid, dtype=float), W, hbar)
    if check and len(p_grid) > 1 and abs(wg.norm - 1.0) > 1e-3:
        raise ResolutionError(f"Wigner grid too coarse: normalization {wg.norm:.6f}")
    return wg


def eigenstate_wigner(spec: SpectrumResult, level: int, q_grid, p_grid=None) -> WignerGrid:
    psi = wavefunction(spec, level, q_grid)
    dq = q_grid[1] - q_grid[0]
    psi = psi / math.sqrt(np.sum(np.abs(psi) ** 2) * dq)
    return wigner_of_state(psi, q_grid, spec.model.hbar, p_grid)


@dataclass
class ChordGrid:
    xi_q: np.ndarray
    xi_p: np.ndarray
    chi: np.ndarray
    hbar: float = 1.0

    def value_at_origin(self) -> complex:
        a = int(np.argmin(np.abs(self.xi_q)))
        b = int(np.argmin(np.abs(self.xi_p)))
        return complex(self.chi[a, b])


def _chord_kernels(wg: WignerGrid):
    hbar = wg.hbar
    nq, npn = len(wg.q), len(wg.p)
    dxi_p = 2 * math.pi * hbar / (nq * wg.dq)
    dxi_q = 2 * math.pi * hbar / (npn * wg.dp)
    xi_p = (np.arange(nq) - nq // 2) * dxi_p
    xi_q = (np.arange(npn) - npn // 2) * dxi_q
    Kq = np.exp(-1j * np.outer(xi_p, wg.q) / hbar)
    Kp = np.exp(1j * np.outer(xi_q, wg.p) / hbar)
    return xi_q, xi_p, Kq, Kp


def chord_symbol(wg: WignerGrid, warn: bool = True) -> ChordGrid:
    """chi(xi) = int W(x) exp(i x^xi / hbar) dx with x^xi = p xi_q - q xi_p."""
    edge = max(np.max(np.abs(wg.W[[0, -1], :])), np.max(np.abs(wg.W[:, [0, -1]])))
    if warn and edge > 1e-6 * np.max(np.abs(wg.W)):
        warnings.warn("Wigner function does not vanish at the grid edge; chord symbol "
                      "will alias (energy above the grid Nyquist limit)", AliasingWarning,
                      stacklevel=2)
    xi_q, xi_p, Kq, Kp = _chord_kernels(wg)
    chi = wg.dq * wg.dp * (Kp @ wg.W.T @ Kq.T)
    return ChordGrid(xi_q, xi_p, chi, wg.hbar)


def wigner_from_chord(cg: ChordGrid, like: WignerGrid) -> WignerGrid:
    """Inverse transform back onto the grid of ``like``."""
    xi_q, xi_p, Kq, Kp = _chord_kernels(like)
    dxq = xi_q[1] - xi_q[0]
    dxp = xi_p[1] - xi_p[0]
    fac = dxq * dxp / (2 * math.pi * like.hbar) ** 2
    Wt = fac * (Kp.conj().T @ cg.chi @ Kq.conj())
    return WignerGrid(like.q, like.p, Wt.T.real, like.hbar)


# --- energy-domain objects ---------------------------------------------------------
def wigner_at_points(spec: SpectrumResult, level: int, points, dy: float | None = None,
                     y_max: float | None = None) -> np.ndarray:
    """W_level at arbitrary phase-space points (rows (q, p)) of a 1-DOF spectrum.

    The y integral is a trapezoid sum with step ``dy`` out to ``y_max``
    (defaults: a fifth of the shortest wavelength of the integrand, which
    oscillates with momentum up to p_max + |p|, and the classical extent
    plus a margin), using the basis expansion directly.
    """
    if spec.model.dof != 1:
        raise DomainError("wigner_at_points is for 1-DOF spectra")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    hbar = spec.model.hbar
    E = float(spec.energies[level])
    if y_max is None:
        y_max = 2.0 * _axis_extent(spec.model, E) + 4.0
    p_max = math.sqrt(2.0 * max(E - spec.model.potential_minimum, 1e-12))
    out = np.empty(len(pts))
    for k, (q, p) in enumerate(pts):
        h = dy or 0.2 * math.pi * hbar / (p_max + abs(p))
        y = np.arange(-int(y_max / h), int(y_max / h) + 1) * h
        a = wavefunction(spec, level, q + y)
        b = wavefunction(spec, level, q - y)
        out[k] = (np.sum(np.conj(a) * b * np.exp(2j * p * y / hbar)) * h).real / (math.pi * hbar)
    return out


def ray_profile(spec: SpectrumResult, level: int, angle: float, s, **kw) -> np.ndarray:
    """W_level along the ray (s cos angle, s sin angle)."""
    s = np.asarray(s, dtype=float)
    pts = np.column_stack([s * math.cos(angle), s * math.sin(angle)])
    return wigner_at_points(spec, level, pts, **kw)


def outermost_inflection(s, W) -> float:
    """Largest s where the sampled profile changes curvature sign.

    For an Airy-type edge the inflection of Ai sits exactly at the turning
    point, so this locates the classical shell rather than the inner
    main maximum.
    """
    s = np.asarray(s, dtype=float)
    d2 = np.gradient(np.gradient(W, s), s)
    # start from the outermost local extremum of significant size
    big = np.abs(W) > 0.05 * np.max(np.abs(W))
    ext = [i for i in range(1, len(W) - 1) if big[i]
           and (W[i] - W[i - 1]) * (W[i + 1] - W[i]) <= 0]
    i0 = ext[-1] if ext else int(np.argmax(np.abs(W)))
    sgn = np.sign(d2[i0])
    for i in range(i0, len(s) - 1):
        if np.sign(d2[i + 1]) != sgn and d2[i + 1] != 0:
            return float(s[i] + (s[i + 1] - s[i]) * d2[i] / (d2[i] - d2[i + 1]))
    raise ResolutionError("no inflection beyond the outermost extremum")


def gaussian(x, gamma):
    return np.exp(-0.5 * (x / gamma) ** 2) / (math.sqrt(2 * math.pi) * gamma)


def _check_window(spec: SpectrumResult, lo, hi, gamma):
    need = hi + 8.0 * gamma
    if spec.converged_energy < need:
        raise SpectrumConvergenceError(
            f"energy window up to {hi:.6g} (+8 gamma) touches unconverged levels; "
            f"converged only below {spec.converged_energy:.6g}")


def exact_resolvent_trace_smoothed(spec: SpectrumResult, E_grid, gamma: float) -> np.ndarray:
    """Gaussian-smoothed level density sum_n g_gamma(E - E_n)."""
    E_grid = np.asarray(E_grid, dtype=float)
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    _check_window(spec, E_grid.min(), E_grid.max(), gamma)
    levels = spec.energies[:spec.n_converged]
    return gaussian(E_grid[:, None] - levels[None, :], gamma).sum(axis=1)


def exact_oscillatory_density(spec, E_grid, gamma, gamma_wide):
    """Smoothed density minus a wide-Gaussian smooth baseline."""
    return (exact_resolvent_trace_smoothed(spec, E_grid, gamma)
            - exact_resolvent_trace_smoothed(spec, E_grid, gamma_wide))


def exact_spectral_wigner(spec: SpectrumResult, E: float, gamma: float, q_grid, p_grid=None,
                          weight_floor: float = 1e-12) -> WignerGrid:
    """sum_n g_gamma(E - E_n) W_n(x) for a 1-DOF model."""
    _check_window(spec, E, E, gamma)
    if spec.model.dof != 1:
        raise DomainError("use exact_spectral_wigner_slice for 2-DOF models")
    levels = spec.energies[:spec.n_converged]
    w = gaussian(E - levels, gamma)
    keep = np.nonzero(w > weight_floor * w.max())[0]
    total = None
    for n in keep:
        wg = eigenstate_wigner(spec, int(n), q_grid, p_grid)
        total = w[n] * wg.W if total is None else total + w[n] * wg.W
    return WignerGrid(wg.q, wg.p, total, spec.model.hbar)


def exact_spectral_wigner_points(spec: SpectrumResult, E: float, gamma: float, points,
                                 weight_floor: float = 1e-12) -> np.ndarray:
    """sum_n g_gamma(E - E_n) W_n at arbitrary 1-DOF phase-space points."""
    _check_window(spec, E, E, gamma)
    levels = spec.energies[:spec.n_converged]
    w = gaussian(E - levels, gamma)
    keep = np.nonzero(w > weight_floor * w.max())[0]
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    total = np.zeros(len(pts))
    for n in keep:
        total += w[n] * wigner_at_points(spec, int(n), pts)
    return total


@dataclass(frozen=True)
class SliceSpec:
    """2-D slice of a 4-D centre space: ``base`` with coordinates ``axes``
    varied over ``ranges`` at ``shape`` points."""

    base: tuple = (0.0, 0.0, 0.0, 0.0)
    axes: tuple = (0, 2)
    ranges: tuple = ((-1.0, 1.0), (-1.0, 1.0))
    shape: tuple = (41, 41)

    def axis_values(self):
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.ranges, self.shape)]

    def points(self):
        u, v = self.axis_values()
        X = np.tile(np.asarray(self.base, float), (len(u), len(v), 1))
        X[:, :, self.axes[0]] = u[:, None]
        X[:, :, self.axes[1]] = v[None, :]
        return X


def wigner_2d_at(psi_grid, q1, q2, x, hbar):
    """Wigner function of a 2-DOF state (sampled on a product grid) at
    phase point ``x``; q is snapped to the nearest grid node."""
    d1, d2 = q1[1] - q1[0], q2[1] - q2[0]
    i = int(round((x[0] - q1[0]) / d1))
    j = int(round((x[1] - q2[0]) / d2))
    n1, n2 = psi_grid.shape
    if not (0 <= i < n1 and 0 <= j < n2):
        return 0.0
    a = np.arange(-min(i, n1 - 1 - i), min(i, n1 - 1 - i) + 1)
    b = np.arange(-min(j, n2 - 1 - j), min(j, n2 - 1 - j) + 1)
    plus = psi_grid[np.ix_(i + a, j + b)]
    minus = psi_grid[np.ix_(i - a, j - b)]
    phase = np.exp(2j * (x[2] * a[:, None] * d1 + x[3] * b[None, :] * d2) / hbar)
    val = np.sum(np.conj(plus) * minus * phase) * d1 * d2 / (math.pi * hbar) ** 2
    return float(val.real)


def exact_spectral_wigner_slice(spec: SpectrumResult, E: float, gamma: float, slice_spec: SliceSpec,
                                q_grid_points: int = 96, weight_floor: float = 1e-8) -> np.ndarray:
    """sum_n g_gamma(E - E_n) W_n on a 2-D slice of the 4-D centre space."""
    if spec.model.dof != 2:
        raise DomainError("slice Wigner functions are for 2-DOF models")
    _check_window(spec, E, E, gamma)
    R = _axis_extent(spec.model, E + 8 * gamma) * 1.3
    q1 = np.linspace(-R, R, q_grid_points)
    q2 = q1.copy()
    levels = spec.energies[:spec.n_converged]
    w = gaussian(E - levels, gamma)
    keep = np.nonzero(w > weight_floor * w.max())[0]
    X = slice_spec.points()
    out = np.zeros(X.shape[:2])
    for n in keep:
        psi = wavefunction_grid_2d(spec, int(n), q1, q2)
        psi /= math.sqrt(np.sum(np.abs(psi) ** 2) * (q1[1] - q1[0]) * (q2[1] - q2[0]))
        for a in range(X.shape[0]):
            for b in range(X.shape[1]):
                out[a, b] += w[n] * wigner_2d_at(psi, q1, q2, X[a, b], spec.model.hbar)
    return out
