"""Hot numerical kernels.

Every function here is written in the subset of Python that numba compiles;
with ``RESOLVENT_SURFACE_NUMBA=0`` the same code runs interpreted. The chord
counter, polygon test and Wigner quadrature also have vectorized numpy twins
(``*_np``); the ``count_chords``, ``in_polygon`` and ``wigner`` dispatchers
pick whichever path is active.

State layout for trajectories (``n = 2L``)::

    y[0:L]            q
    y[L:n]            p
    y[n:n + n*n]      monodromy, row-major (only when ``tangent``)
    y[-1]             energy action  S_E = int p.dq

In Henon mode (``mode == 1``) one extra slot holds the time and the
independent variable is the section coordinate ``y[sidx]``.
"""
import math

import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop

from ._accel import NUMBA_ENABLED, njit

HARMONIC1D = 0
QUARTIC1D = 1
DOUBLEWELL1D = 2
HO2D = 3
COUPLEDQUARTIC2D = 4

# parameter vector slots
P_OMEGA = 0
P_OMEGA1 = 1
P_OMEGA2 = 2
P_BETA = 3
P_COUPLING = 4

STATUS_OK = 0
STATUS_MAX_STEPS = 2
STATUS_STEP_UNDERFLOW = 3
STATUS_NONFINITE = 4

_NS = 12
RK_A = np.ascontiguousarray(_dop.A[:_NS, :_NS])
RK_B = np.ascontiguousarray(_dop.B)
RK_C = np.ascontiguousarray(_dop.C[:_NS])
RK_E3 = np.ascontiguousarray(_dop.E3)
RK_E5 = np.ascontiguousarray(_dop.E5)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_ERR_EXP = -1.0 / 8.0


@njit
def potential(kind, par, q, grad, hess):
    """V(q); fills ``grad`` (L,) and ``hess`` (L, L) in place."""
    if kind == HARMONIC1D:
        w2 = par[P_OMEGA] ** 2
        grad[0] = w2 * q[0]
        hess[0, 0] = w2
        return 0.5 * w2 * q[0] ** 2
    elif kind == QUARTIC1D:
        b = par[P_BETA]
        grad[0] = b * q[0] ** 3
        hess[0, 0] = 3.0 * b * q[0] ** 2
        return 0.25 * b * q[0] ** 4
    elif kind == DOUBLEWELL1D:
        w2 = par[P_OMEGA] ** 2
        b = par[P_BETA]
        grad[0] = -w2 * q[0] + b * q[0] ** 3
        hess[0, 0] = -w2 + 3.0 * b * q[0] ** 2
        return -0.5 * w2 * q[0] ** 2 + 0.25 * b * q[0] ** 4
    elif kind == HO2D:
        a = par[P_OMEGA1] ** 2
        c = par[P_OMEGA2] ** 2
        grad[0] = a * q[0]
        grad[1] = c * q[1]
        hess[0, 0] = a
        hess[0, 1] = 0.0
        hess[1, 0] = 0.0
        hess[1, 1] = c
        return 0.5 * (a * q[0] ** 2 + c * q[1] ** 2)
    else:
        b = par[P_BETA]
        k = par[P_COUPLING]
        x = q[0]
        z = q[1]
        grad[0] = b * x ** 3 + k * x * z * z
        grad[1] = b * z ** 3 + k * x * x * z
        hess[0, 0] = 3.0 * b * x * x + k * z * z
        hess[1, 1] = 3.0 * b * z * z + k * x * x
        hess[0, 1] = 2.0 * k * x * z
        hess[1, 0] = hess[0, 1]
        return 0.25 * b * (x ** 4 + z ** 4) + 0.5 * k * x * x * z * z


@njit
def rhs(kind, par, L, tangent, y, mode, sidx, out, grad, hess):
    n = 2 * L
    potential(kind, par, y[:L], grad, hess)
    for i in range(L):
        out[i] = y[L + i]
        out[L + i] = -grad[i]
    off = n
    if tangent:
        # dM/dt = J Hess(H) M with Hess(H) = diag(Hess V, I)
        for c in range(n):
            for i in range(L):
                out[off + i * n + c] = y[off + (L + i) * n + c]
                s = 0.0
                for j in range(L):
                    s += hess[i, j] * y[off + j * n + c]
                out[off + (L + i) * n + c] = -s
        off += n * n
    pp = 0.0
    for i in range(L):
        pp += y[L + i] * y[L + i]
    out[off] = pp
    m = off + 1
    if mode == 1:
        fs = out[sidx]
        for k in range(m):
            out[k] = out[k] / fs
        out[m] = 1.0 / fs


@njit
def _rk_step(kind, par, L, tangent, mode, sidx, y, f, h, K, ynew, fnew,
             ytmp, grad, hess, rtol, atol):
    m = y.shape[0]
    for k in range(m):
        K[0, k] = f[k]
    for s in range(1, _NS):
        for k in range(m):
            acc = 0.0
            for j in range(s):
                acc += RK_A[s, j] * K[j, k]
            ytmp[k] = y[k] + h * acc
        rhs(kind, par, L, tangent, ytmp, mode, sidx, K[s], grad, hess)
    for k in range(m):
        acc = 0.0
        for j in range(_NS):
            acc += RK_B[j] * K[j, k]
        ynew[k] = y[k] + h * acc
    rhs(kind, par, L, tangent, ynew, mode, sidx, fnew, grad, hess)
    for k in range(m):
        K[_NS, k] = fnew[k]
    e5 = 0.0
    e3 = 0.0
    for k in range(m):
        sc = atol + rtol * max(abs(y[k]), abs(ynew[k]))
        a5 = 0.0
        a3 = 0.0
        for j in range(_NS + 1):
            a5 += RK_E5[j] * K[j, k]
            a3 += RK_E3[j] * K[j, k]
        e5 += (a5 / sc) ** 2
        e3 += (a3 / sc) ** 2
    if not (math.isfinite(e5) and math.isfinite(e3)):
        return np.inf
    if e5 == 0.0 and e3 == 0.0:
        return 0.0
    return abs(h) * e5 / math.sqrt((e5 + 0.01 * e3) * m)


@njit
def _initial_step(kind, par, L, tangent, y, f, direction, rtol, atol,
                  grad, hess):
    m = y.shape[0]
    d0 = 0.0
    d1 = 0.0
    for k in range(m):
        sc = atol + abs(y[k]) * rtol
        d0 += (y[k] / sc) ** 2
        d1 += (f[k] / sc) ** 2
    d0 = math.sqrt(d0 / m)
    d1 = math.sqrt(d1 / m)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    y1 = np.empty(m)
    for k in range(m):
        y1[k] = y[k] + h0 * direction * f[k]
    f1 = np.empty(m)
    rhs(kind, par, L, tangent, y1, 0, 0, f1, grad, hess)
    d2 = 0.0
    for k in range(m):
        sc = atol + abs(y[k]) * rtol
        d2 += ((f1[k] - f[k]) / sc) ** 2
    d2 = math.sqrt(d2 / m) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    return min(100.0 * h0, h1)


@njit
def _henon_to_section(kind, par, L, tangent, sidx, sval, y, t, rtol, atol,
                      grad, hess):
    """Integrate from ``y`` with ``y[sidx]`` as clock until it equals sval."""
    m = y.shape[0]
    z = np.empty(m + 1)
    for k in range(m):
        z[k] = y[k]
    z[m] = t
    fz = np.empty(m + 1)
    rhs(kind, par, L, tangent, z, 1, sidx, fz, grad, hess)
    K = np.empty((_NS + 1, m + 1))
    znew = np.empty(m + 1)
    fnew = np.empty(m + 1)
    ztmp = np.empty(m + 1)
    u = y[sidx]
    total = sval - u
    hdir = 1.0 if total >= 0.0 else -1.0
    h_abs = abs(total)
    done = 0.0
    ok = True
    for _ in range(200):
        remaining = abs(total) - done
        if remaining <= 0.0:
            break
        h_try = min(h_abs, remaining)
        err = _rk_step(kind, par, L, tangent, 1, sidx, z, fz, hdir * h_try,
                       K, znew, fnew, ztmp, grad, hess, rtol, atol)
        if err < 1.0:
            done += h_try
            for k in range(m + 1):
                z[k] = znew[k]
                fz[k] = fnew[k]
            if err == 0.0:
                h_abs = h_try * _MAX_FACTOR
            else:
                h_abs = h_try * min(_MAX_FACTOR, _SAFETY * err ** _ERR_EXP)
        else:
            if not math.isfinite(err):
                h_abs = h_try * _MIN_FACTOR
            else:
                h_abs = h_try * max(_MIN_FACTOR, _SAFETY * err ** _ERR_EXP)
            if h_abs < 1e-14 * (abs(u) + abs(sval) + 1.0):
                ok = False
                break
    else:
        ok = False
    z[sidx] = sval
    return z[:m].copy(), z[m], ok


@njit
def integrate(kind, par, L, tangent, y0, t0, t_end, rtol, atol, max_step,
              sidx, sval, sdir, ncross, out_t, record_steps, max_steps):
    """Adaptive DOP853 integration with optional section stop and output grid.

    Stops at ``t_end`` or at the ``ncross``-th crossing of ``y[sidx] == sval``
    whose coordinate velocity has sign ``sdir`` (0 accepts either sign).
    Returns ``(y, t, status, nsteps, cross_t, cross_y, out_y, rec_t, rec_y)``.
    """
    m = y0.shape[0]
    grad = np.zeros(L)
    hess = np.zeros((L, L))
    y = y0.copy()
    f = np.empty(m)
    rhs(kind, par, L, tangent, y, 0, 0, f, grad, hess)
    K = np.empty((_NS + 1, m))
    ynew = np.empty(m)
    fnew = np.empty(m)
    ytmp = np.empty(m)

    nc_cap = max(ncross, 4)
    cross_t = np.empty(nc_cap)
    cross_y = np.empty((nc_cap, m))
    nc = 0

    n_out = out_t.shape[0]
    out_y = np.empty((n_out, m))
    io = 0

    cap = 256 if record_steps else 1
    rec_t = np.empty(cap)
    rec_y = np.empty((cap, m))
    nrec = 0
    if record_steps:
        rec_t[0] = t0
        rec_y[0, :] = y
        nrec = 1

    t = t0
    direction = 1.0 if t_end >= t0 else -1.0
    while io < n_out and out_t[io] == t0:
        out_y[io, :] = y
        io += 1
    status = STATUS_OK
    steps = 0
    if t_end == t0:
        return y, t, status, steps, cross_t[:0], cross_y[:0], out_y[:io], rec_t[:nrec], rec_y[:nrec]

    h_abs = _initial_step(kind, par, L, tangent, y, f, direction, rtol, atol,
                          grad, hess)
    finished = False
    while not finished:
        if direction * (t - t_end) >= 0.0:
            break
        if steps >= max_steps:
            status = STATUS_MAX_STEPS
            break
        t_target = t_end
        if io < n_out and direction * (out_t[io] - t_target) < 0.0:
            t_target = out_t[io]
        if h_abs > max_step:
            h_abs = max_step
        min_step = 10.0 * abs(np.nextafter(t, direction * np.inf) - t)
        rejected = False
        accepted = False
        t_new = t
        while not accepted:
            if h_abs < min_step:
                status = STATUS_STEP_UNDERFLOW
                break
            t_new = t + h_abs * direction
            if direction * (t_new - t_target) > 0.0:
                t_new = t_target
            h = t_new - t
            err = _rk_step(kind, par, L, tangent, 0, 0, y, f, h, K, ynew,
                           fnew, ytmp, grad, hess, rtol, atol)
            if err < 1.0:
                if err == 0.0:
                    factor = _MAX_FACTOR
                else:
                    factor = min(_MAX_FACTOR, _SAFETY * err ** _ERR_EXP)
                if rejected:
                    factor = min(1.0, factor)
                h_abs = abs(h) * factor
                accepted = True
            else:
                if math.isfinite(err):
                    h_abs = abs(h) * max(_MIN_FACTOR, _SAFETY * err ** _ERR_EXP)
                else:
                    h_abs = abs(h) * _MIN_FACTOR
                rejected = True
        if status != STATUS_OK:
            break
        for k in range(m):
            if not math.isfinite(ynew[k]):
                status = STATUS_NONFINITE
        if status != STATUS_OK:
            break
        steps += 1

        if sidx >= 0:
            g0 = y[sidx] - sval
            g1 = ynew[sidx] - sval
            if g0 != 0.0 and g0 * g1 <= 0.0:
                yc, tc, ok = _henon_to_section(kind, par, L, tangent, sidx,
                                               sval, y, t, rtol, atol,
                                               grad, hess)
                rhs(kind, par, L, tangent, yc, 0, 0, ytmp, grad, hess)
                vel = ytmp[sidx]
                if ok and (sdir == 0 or vel * sdir > 0.0):
                    if nc >= nc_cap:
                        nc_cap *= 2
                        ct2 = np.empty(nc_cap)
                        cy2 = np.empty((nc_cap, m))
                        ct2[:nc] = cross_t[:nc]
                        cy2[:nc, :] = cross_y[:nc, :]
                        cross_t = ct2
                        cross_y = cy2
                    cross_t[nc] = tc
                    cross_y[nc, :] = yc
                    nc += 1
                    if nc >= ncross and ncross > 0:
                        for k in range(m):
                            y[k] = yc[k]
                        t = tc
                        finished = True
                elif not ok:
                    status = STATUS_STEP_UNDERFLOW
                    break
        if not finished:
            t = t_new
            for k in range(m):
                y[k] = ynew[k]
                f[k] = fnew[k]
            if io < n_out and t == out_t[io]:
                out_y[io, :] = y
                io += 1
        if record_steps:
            if nrec >= cap:
                cap2 = 2 * cap
                rt2 = np.empty(cap2)
                ry2 = np.empty((cap2, m))
                rt2[:nrec] = rec_t[:nrec]
                ry2[:nrec, :] = rec_y[:nrec, :]
                rec_t = rt2
                rec_y = ry2
                cap = cap2
            rec_t[nrec] = t
            rec_y[nrec, :] = y
            nrec += 1
    return y, t, status, steps, cross_t[:nc], cross_y[:nc], out_y[:io], rec_t[:nrec], rec_y[:nrec]


@njit
def hamiltonian_batch(kind, par, L, xs):
    """H at each row of ``xs`` (N, 2L)."""
    npts = xs.shape[0]
    out = np.empty(npts)
    grad = np.zeros(L)
    hess = np.zeros((L, L))
    for i in range(npts):
        v = potential(kind, par, xs[i, :L], grad, hess)
        kin = 0.0
        for j in range(L):
            kin += xs[i, L + j] ** 2
        out[i] = 0.5 * kin + v
    return out


@njit
def chord_sign_changes(kind, par, shell, centres, energy):
    """Count chords of a 1-DOF shell centred on each point of ``centres``.

    For shell samples a_i the reflected point 2x - a_i lies on the shell
    exactly where H(2x - a_i) - E changes sign; each chord contributes two
    such changes (one per endpoint), so the number of chord pairs is half
    the cyclic sign-change count.
    """
    n = shell.shape[0]
    ncen = centres.shape[0]
    counts = np.zeros(ncen, dtype=np.int64)
    grad = np.zeros(1)
    hess = np.zeros((1, 1))
    q = np.empty(1)
    for c in range(ncen):
        x0 = 2.0 * centres[c, 0]
        x1 = 2.0 * centres[c, 1]
        q[0] = x0 - shell[n - 1, 0]
        pm = x1 - shell[n - 1, 1]
        prev = 0.5 * pm * pm + potential(kind, par, q, grad, hess) - energy
        changes = 0
        for i in range(n):
            q[0] = x0 - shell[i, 0]
            pm = x1 - shell[i, 1]
            cur = 0.5 * pm * pm + potential(kind, par, q, grad, hess) - energy
            if (prev < 0.0) != (cur < 0.0):
                changes += 1
            prev = cur
        counts[c] = changes // 2
    return counts


@njit
def points_in_polygon(poly, pts):
    """Even-odd rule point-in-polygon test for a closed polyline."""
    n = poly.shape[0]
    npts = pts.shape[0]
    inside = np.zeros(npts, dtype=np.bool_)
    for k in range(npts):
        px = pts[k, 0]
        py = pts[k, 1]
        c = False
        j = n - 1
        for i in range(n):
            yi = poly[i, 1]
            yj = poly[j, 1]
            if (yi > py) != (yj > py):
                xcross = poly[j, 0] + (py - yj) * (poly[i, 0] - poly[j, 0]) / (yi - yj)
                if px < xcross:
                    c = not c
            j = i
        inside[k] = c
    return inside


@njit
def wigner_quadrature(psi, dq, p_grid, hbar):
    """W(q_i, p_k) = 1/(pi hbar) sum_y psi*(q+y) psi(q-y) exp(2ipy/hbar) dq.

    ``psi`` is sampled on a uniform grid with spacing ``dq``; shifts ``y``
    run over grid multiples so that q +/- y stay on the grid.
    """
    nq = psi.shape[0]
    npk = p_grid.shape[0]
    W = np.zeros((nq, npk))
    pref = dq / (math.pi * hbar)
    for i in range(nq):
        jmax = min(i, nq - 1 - i)
        for k in range(npk):
            # y = 0 term plus symmetric pairs +/- y give a real cosine sum;
            # the phase exp(2 i p j dq / hbar) is advanced by one rotation per j
            acc = (psi[i].conjugate() * psi[i]).real
            ang = 2.0 * p_grid[k] * dq / hbar
            rc, rs = math.cos(ang), math.sin(ang)
            c, s = 1.0, 0.0
            for j in range(1, jmax + 1):
                c, s = c * rc - s * rs, s * rc + c * rs
                prod = psi[i + j].conjugate() * psi[i - j]
                acc += 2.0 * (prod.real * c - prod.imag * s)
            W[i, k] = pref * acc
    return W


# --- vectorized numpy twins ---------------------------------------------------

def potential_np(kind, par, q):
    """V at each row of ``q`` (..., L)."""
    q = np.asarray(q, dtype=float)
    if kind == HARMONIC1D:
        return 0.5 * par[P_OMEGA] ** 2 * q[..., 0] ** 2
    if kind == QUARTIC1D:
        return 0.25 * par[P_BETA] * q[..., 0] ** 4
    if kind == DOUBLEWELL1D:
        x2 = q[..., 0] ** 2
        return -0.5 * par[P_OMEGA] ** 2 * x2 + 0.25 * par[P_BETA] * x2 * x2
    if kind == HO2D:
        return 0.5 * (par[P_OMEGA1] ** 2 * q[..., 0] ** 2 + par[P_OMEGA2] ** 2 * q[..., 1] ** 2)
    a2 = q[..., 0] ** 2
    b2 = q[..., 1] ** 2
    return 0.25 * par[P_BETA] * (a2 * a2 + b2 * b2) + 0.5 * par[P_COUPLING] * a2 * b2


def chord_sign_changes_np(kind, par, shell, centres, energy, chunk=2048):
    counts = np.empty(len(centres), dtype=np.int64)
    for s in range(0, len(centres), chunk):
        c = centres[s:s + chunk]
        refl = 2.0 * c[:, None, :] - shell[None, :, :]
        g = 0.5 * refl[..., 1] ** 2 + potential_np(kind, par, refl[..., :1]) - energy
        neg = g < 0.0
        counts[s:s + chunk] = np.count_nonzero(neg != np.roll(neg, 1, axis=1), axis=1) // 2
    return counts


def points_in_polygon_np(poly, pts):
    xi, yi = poly[:, 0], poly[:, 1]
    xj, yj = np.roll(xi, 1), np.roll(yi, 1)
    px, py = pts[:, 0:1], pts[:, 1:2]
    straddle = (yi > py) != (yj > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = xj + (py - yj) * (xi - xj) / (yi - yj)
    hits = straddle & (px < xcross)
    return (np.count_nonzero(hits, axis=1) % 2).astype(bool)


def wigner_quadrature_np(psi, dq, p_grid, hbar):
    psi = np.asarray(psi, dtype=complex)
    nq = len(psi)
    W = np.empty((nq, len(p_grid)))
    pref = dq / (math.pi * hbar)
    for i in range(nq):
        jmax = min(i, nq - 1 - i)
        j = np.arange(1, jmax + 1)
        prod = np.conj(psi[i + j]) * psi[i - j]
        ang = 2.0 * np.outer(p_grid, j) * dq / hbar
        acc = abs(psi[i]) ** 2 + 2.0 * (np.cos(ang) @ prod.real - np.sin(ang) @ prod.imag)
        W[i] = pref * acc
    return W


def count_chords(kind, par, shell, centres, energy):
    shell = np.ascontiguousarray(shell, dtype=float)
    centres = np.ascontiguousarray(centres, dtype=float)
    if NUMBA_ENABLED:
        return chord_sign_changes(kind, par, shell, centres, float(energy))
    return chord_sign_changes_np(kind, par, shell, centres, float(energy))


def in_polygon(poly, pts):
    poly = np.ascontiguousarray(poly, dtype=float)
    pts = np.ascontiguousarray(pts, dtype=float)
    if NUMBA_ENABLED:
        return points_in_polygon(poly, pts)
    return points_in_polygon_np(poly, pts)


def wigner(psi, dq, p_grid, hbar):
    psi = np.ascontiguousarray(psi, dtype=complex)
    p_grid = np.ascontiguousarray(p_grid, dtype=float)
    if NUMBA_ENABLED:
        return wigner_quadrature(psi, float(dq), p_grid, float(hbar))
    return wigner_quadrature_np(psi, float(dq), p_grid, float(hbar))
