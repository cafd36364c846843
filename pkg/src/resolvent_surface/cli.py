"""Command-line front end: ``resolvent-surface GROUP COMMAND [options]``.

Every option of a command is also a key of the ``params`` object of a JSON
config file (``--config``); flags override file values. Exit status is 0 on
success, 1 for configuration errors, 2 when a solver does not converge and
3 for numerical failures, with a one-line ``<kind>: <reason>`` on stderr.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_NUMERICAL = 0, 1, 2, 3
PREFIX = {EXIT_CONFIG: "config-error", EXIT_CONVERGENCE: "nonconvergence",
          EXIT_NUMERICAL: "numerical-failure"}

REQUIRED = object()


def _vec(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _flag(text):
    if isinstance(text, bool):
        return text
    return str(text).strip().lower() in ("1", "true", "yes", "on")


# (name, type, default, help); type is float, int, str, _vec or _flag
COMMANDS = {
    "model validate": [],
    "shell sample": [
        ("energy", float, REQUIRED, "shell energy"),
        ("n", int, 200, "number of points")],
    "segment solve": [
        ("energy", float, REQUIRED, "segment energy"),
        ("representation", str, "centre", "centre or position"),
        ("centre", _vec, None, "centre point x (centre representation)"),
        ("q_minus", _vec, None, "initial position (position representation)"),
        ("q_plus", _vec, None, "final position (position representation)"),
        ("t_min", float, 1e-6, "shortest duration"),
        ("t_max", float, None, "longest duration (default: three shortest periods)"),
        ("n_seeds", int, 300, "shell seeds for 2-DOF centre solves")],
    "caustic scan": [
        ("energy", float, REQUIRED, "shell energy"),
        ("resolution", int, 200, "grid points per axis"),
        ("ranges", _vec, None, "x1min,x1max,x2min,x2max"),
        ("slice_base", _vec, None, "2-DOF: base centre (4 numbers)"),
        ("slice_axes", _vec, None, "2-DOF: the two varied coordinates"),
        ("shell_points", int, 2000, "shell polyline samples"),
        ("svg", _flag, False, "also write a decorative SVG map")],
    "leaf": [
        ("omega1", float, REQUIRED, "first torus frequency"),
        ("omega2", float, REQUIRED, "second torus frequency"),
        ("k_max", int, 500, "closure scan length in units of 2 pi / omega2"),
        ("n_times", int, 65, "translation samples over one omega2 period")],
    "orbit find": [
        ("energy", float, REQUIRED, "orbit energy"),
        ("guess", _vec, REQUIRED, "section point(s) q,p[,q,p...]"),
        ("section_index", int, 0, "section coordinate q_i = 0"),
        ("n_points", int, 1, "section crossings per period")],
    "orbit db": [
        ("energy", float, REQUIRED, "scan energy"),
        ("max_crossings", int, 2, "longest orbits in section returns"),
        ("grid", int, 21, "seed grid per section axis"),
        ("maslov", _flag, True, "compute Maslov indices")],
    "orbit manifold": [
        ("db", str, REQUIRED, "orbit database JSON"),
        ("orbit", str, REQUIRED, "orbit id"),
        ("stable", _flag, False, "grow the stable manifold"),
        ("side", int, 1, "branch along +1 or -1 times the eigenvector"),
        ("arc_length", float, 2.0, "strand length on the section"),
        ("fineness", float, 0.02, "largest spacing between strand points")],
    "orbit link": [
        ("db", str, REQUIRED, "orbit database JSON"),
        ("source", str, REQUIRED, "orbit whose unstable manifold is used"),
        ("target", str, None, "orbit whose stable manifold is used (default: source)"),
        ("arc_length", float, 3.0, "strand length"),
        ("fineness", float, 0.02, "largest spacing between strand points")],
    "orbit secondary": [
        ("db", str, REQUIRED, "orbit database JSON"),
        ("orbit", str, REQUIRED, "primitive orbit of the homoclinic circuit"),
        ("link_rank", int, 0, "which homoclinic link (sorted by stub duration)"),
        ("windings", _vec, "2,3,4,5,6", "winding numbers of the family"),
        ("max_iter", int, 50, "Newton iterations per member"),
        ("arc_length", float, 3.0, "manifold strand length"),
        ("fineness", float, 0.02, "largest spacing between strand points")],
    "sc weyl": [
        ("centre", _vec, REQUIRED, "centre point x"),
        ("time", float, REQUIRED, "propagation time")],
    "sc green": [
        ("energy", float, REQUIRED, "energy"),
        ("representation", str, "centre", "centre or position"),
        ("centre", _vec, None, "centre point"),
        ("q_minus", _vec, None, "initial position"),
        ("q_plus", _vec, None, "final position"),
        ("gamma", float, None, "Gaussian energy smoothing width (none: bare sum)"),
        ("t_max", float, None, "longest duration (default from gamma or three periods)")],
    "sc trace": [
        ("e_min", float, REQUIRED, "lowest energy"),
        ("e_max", float, REQUIRED, "highest energy"),
        ("n_energy", int, 2001, "energy samples"),
        ("gamma", float, 0.05, "Gaussian energy smoothing width"),
        ("gamma_wide", float, None, "baseline width subtracted (none: no baseline)"),
        ("db", str, None, "orbit database (2-DOF)"),
        ("repetition_cap", int, None, "largest repetition")],
    "exact spectrum": [
        ("n_basis", int, 80, "oscillator states per degree of freedom"),
        ("n_levels", int, None, "levels required to converge"),
        ("e_max", float, None, "converge every level below this energy"),
        ("spectrum_tol", float, 1e-8, "relative level shift tolerance")],
    "exact wigner": [
        ("level", int, REQUIRED, "eigenstate index"),
        ("n_grid", int, 256, "q grid points"),
        ("n_basis", int, 80, "oscillator basis size")],
    "exact trace": [
        ("e_min", float, REQUIRED, "lowest energy"),
        ("e_max", float, REQUIRED, "highest energy"),
        ("n_energy", int, 2001, "energy samples"),
        ("gamma", float, 0.05, "Gaussian energy smoothing width"),
        ("gamma_wide", float, None, "baseline width subtracted (none: full density)"),
        ("n_basis", int, 80, "oscillator basis size"),
        ("spectrum_tol", float, 1e-6, "relative level shift tolerance")],
    "compare trace": [
        ("e_min", float, REQUIRED, "lowest energy"),
        ("e_max", float, REQUIRED, "highest energy"),
        ("n_energy", int, 2001, "energy samples"),
        ("gamma", float, 0.05, "Gaussian energy smoothing width"),
        ("gamma_wide", float, None, "baseline width (default 6 gamma for 2-DOF, none for 1-DOF)"),
        ("db", str, None, "orbit database (2-DOF)"),
        ("n_basis", int, 80, "oscillator basis size"),
        ("spectrum_tol", float, 1e-6, "relative level shift tolerance")],
    "compare wigner": [
        ("energy", float, REQUIRED, "energy"),
        ("gamma", float, 0.3, "Gaussian energy smoothing width"),
        ("centres", _vec, None, "centre points q,p,q,p,..."),
        ("n_centres", int, 10, "random interior centres if none are given"),
        ("n_basis", int, 80, "oscillator basis size")],
}


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_CONFIG, f"arguments: {message}")


def _common(parser):
    g = parser.add_argument_group("run options")
    g.add_argument("--config", help="JSON config file (model, params, tolerances, seed)")
    g.add_argument("--out", help="output directory (default $RESOLVENT_SURFACE_OUT or .)")
    g.add_argument("--stem", help="output file stem (default: command name)")
    g.add_argument("--seed", type=int, help="random seed")
    g.add_argument("--threads", type=int, help="cap on worker threads")
    g.add_argument("--kind", help="model kind")
    g.add_argument("--hbar", type=float, help="Planck constant")
    g.add_argument("--param", action="append", default=[], metavar="NAME=VALUE",
                   help="model parameter (repeatable)")
    g.add_argument("--tol", action="append", default=[], metavar="NAME=VALUE",
                   help="integrator tolerance override (repeatable)")


def build_parser():
    parser = _Parser(prog="resolvent-surface",
                     description="Semiclassical propagators, resolvents and orbit sums.")
    groups = parser.add_subparsers(dest="group", metavar="GROUP")
    groups.required = True
    subs = {}
    for name, opts in COMMANDS.items():
        group, _, cmd = name.partition(" ")
        if not cmd:
            p = groups.add_parser(group, help=f"{group} command")
        else:
            if group not in subs:
                gp = groups.add_parser(group, help=f"{group} commands")
                subs[group] = gp.add_subparsers(dest="cmd", metavar="COMMAND")
                subs[group].required = True
            p = subs[group].add_parser(cmd, help=f"{group} {cmd}")
        p.set_defaults(command=name)
        _common(p)
        for key, typ, default, help_ in opts:
            flag = "--" + key.replace("_", "-")
            if typ is _flag:
                p.add_argument(flag, dest=key, nargs="?", const=True, default=None, type=_flag,
                               help=help_)
            else:
                p.add_argument(flag, dest=key, default=None, type=str, help=help_)
    return parser


def _kv(items, what):
    out = {}
    for item in items:
        k, sep, v = item.partition("=")
        if not sep:
            raise CliError(EXIT_CONFIG, f"{what}: expected NAME=VALUE, got {item!r}")
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise CliError(EXIT_CONFIG, f"{what}.{k.strip()}: expected a number, got {v!r}") from None
    return out


def resolve_config(args):
    """Merge defaults, config file and flags into a RunConfig."""
    from .io import RunConfig, check_tolerances, load_config_file
    from .models import HamiltonianModel

    doc = load_config_file(args.config) if args.config else {}
    spec = COMMANDS[args.command]
    params = {}
    file_params = doc.get("params", {})
    if not isinstance(file_params, dict):
        raise CliError(EXIT_CONFIG, "params: expected an object")
    names = {k for k, *_ in spec}
    for key in file_params:
        if key not in names:
            raise CliError(EXIT_CONFIG, f"params.{key}: not an option of '{args.command}'")
    for key, typ, default, _ in spec:
        raw = getattr(args, key)
        if raw is None:
            raw = file_params.get(key, default)
        if raw is REQUIRED:
            raise CliError(EXIT_CONFIG, f"params.{key}: required (flag --{key.replace('_', '-')})")
        if raw is not None:
            try:
                raw = typ(raw)
            except (TypeError, ValueError):
                raise CliError(EXIT_CONFIG, f"params.{key}: cannot parse {raw!r}") from None
        params[key] = raw

    mdoc = dict(doc.get("model") or {})
    if args.kind is not None:
        if mdoc.get("kind") not in (None, args.kind):
            mdoc["params"] = {}
        mdoc["kind"] = args.kind
    if args.hbar is not None:
        mdoc["hbar"] = args.hbar
    if args.param:
        mdoc["params"] = {**dict(mdoc.get("params", {})), **_kv(args.param, "params")}
    needs_model = args.command != "leaf"
    model = None
    if needs_model:
        if "kind" not in mdoc:
            raise CliError(EXIT_CONFIG, "kind: no model given (use --kind or a config file)")
        model = HamiltonianModel.from_dict(mdoc)
    tols = check_tolerances({**doc.get("tolerances", {}), **_kv(args.tol, "tolerances")})
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise CliError(EXIT_CONFIG, f"seed: expected a non-negative integer, got {seed!r}")
    return RunConfig(args.command, model, params, tols, seed)


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise CliError(EXIT_CONFIG, "threads: must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ[var] = str(n)


def _cap_numba(n):
    if n is None:
        return
    from . import _accel
    if _accel.NUMBA_ENABLED:
        try:
            _accel.numba.set_num_threads(min(n, _accel.numba.config.NUMBA_NUM_THREADS))
        except (ValueError, AttributeError):
            pass


# --- commands ---------------------------------------------------------------------

class Run:
    """Output bookkeeping for one command."""

    def __init__(self, cfg, out_dir, stem):
        self.cfg = cfg
        self.dir = out_dir
        self.stem = stem or cfg.command.replace(" ", "_")
        self.outputs = []
        self.summary = {}

    def path(self, suffix):
        return os.path.join(self.dir, f"{self.stem}{suffix}")

    def csv(self, header, rows, suffix=".csv"):
        from .io import write_csv
        self.outputs.append(write_csv(self.path(suffix), header, rows, self.cfg))

    def json(self, payload, suffix=".json"):
        from .io import write_json
        self.outputs.append(write_json(self.path(suffix), payload, self.cfg))

    def finish(self):
        from .io import write_sidecar
        write_sidecar(self.path(".meta.json"), self.cfg, self.outputs)


def _window(model, E, t_min, t_max):
    from .doublephase import _tau_min
    if t_max is None:
        t_max = 3.0 * _tau_min(model, E)
    return (t_min, t_max)


def _need(p, key, n, what):
    v = p.get(key)
    if v is None or len(v) != n:
        raise CliError(EXIT_CONFIG, f"params.{key}: {what} needs {n} numbers")
    return v


def _load_db(path, model):
    from .orbits import OrbitDatabase
    if not os.path.exists(path):
        raise CliError(EXIT_CONFIG, f"params.db: database {path} does not exist")
    db = OrbitDatabase.load(path)
    if db.model.to_dict() != model.to_dict():
        raise CliError(EXIT_CONFIG, "params.db: database was built for a different model")
    return db


def cmd_model_validate(run, model, p):
    run.json({"model": model.to_dict(), "model_hash": model.model_hash(), "dof": model.dof})
    run.summary = {"model": model.to_dict()}


def cmd_shell_sample(run, model, p):
    from .dynamics import energy_shell_sample
    s = energy_shell_sample(model, p["energy"], p["n"], seed=run.cfg.seed)
    L = model.dof
    header = [f"q{i + 1}" for i in range(L)] + [f"p{i + 1}" for i in range(L)] + ["component"]
    run.csv(header, [list(x) + [int(c)] for x, c in zip(s.points, s.labels)])
    run.summary = {"points": len(s)}


def _segments(model, p, tol, seed):
    from .doublephase import solve_segments_centre, solve_segments_position
    E = p["energy"]
    win = _window(model, E, p.get("t_min", 1e-6), p["t_max"])
    L = model.dof
    if p["representation"] == "centre":
        x = _need(p, "centre", 2 * L, "a centre point")
        return solve_segments_centre(model, x, E, win, tol, n_seeds=p.get("n_seeds", 300),
                                     seed=seed)
    if p["representation"] == "position":
        qm = _need(p, "q_minus", L, "an initial position")
        qp = _need(p, "q_plus", L, "a final position")
        return solve_segments_position(model, qm, qp, E, win, tol)
    raise CliError(EXIT_CONFIG, "params.representation: expected 'centre' or 'position'")


def cmd_segment_solve(run, model, p):
    bs = _segments(model, p, run.cfg.tol(), run.cfg.seed)
    run.json({"window": list(bs.window), "branches": bs.to_list(),
              "dropped": bs.dropped})
    run.summary = {"branches": len(bs.branches)}


def cmd_caustic_scan(run, model, p):
    from .caustics import caustic_scan
    from .quantum import SliceSpec
    ranges = None
    if p["ranges"] is not None:
        r = _need(p, "ranges", 4, "the scan box")
        ranges = ((r[0], r[1]), (r[2], r[3]))
    slice_spec = None
    if model.dof == 2:
        base = p["slice_base"] or [0.0, 0.0, 0.0, 0.0]
        axes = tuple(int(a) for a in (p["slice_axes"] or [0, 2]))
        slice_spec = SliceSpec(tuple(base), axes, ranges or ((-1.0, 1.0), (-1.0, 1.0)),
                               (p["resolution"], p["resolution"]))
    grid = caustic_scan(model, p["energy"], ranges, p["resolution"], p["shell_points"],
                        slice_spec, tol=run.cfg.tol())
    rows = [(ua, vb, int(grid.counts[a, b]), bool(grid.flags[a, b]),
             bool(grid.cusp_candidates[a, b]))
            for a, ua in enumerate(grid.u) for b, vb in enumerate(grid.v)]
    run.csv(["x1", "x2", "count", "flag", "cusp"], rows)
    if p["svg"]:
        grid.write_svg(run.path(".svg"))
        run.outputs.append(run.path(".svg"))
    run.summary = {"classes": grid.classes(), "failures": int(grid.failures),
                   "flagged": int(grid.flags.sum())}


def cmd_leaf(run, model, p):
    from .caustics import closure_scan, integrable_leaf
    w1, w2 = p["omega1"], p["omega2"]
    leaf = integrable_leaf(w1, w2, times=None if p["n_times"] is None else
                           [2 * math.pi / w2 * k / (p["n_times"] - 1) for k in range(p["n_times"])])
    run.csv(["t", "theta1_minus", "theta2_minus", "theta1_plus", "theta2_plus"],
            [[t, *a, *b] for t, a, b in zip(leaf.times, leaf.theta_minus, leaf.theta_plus)],
            suffix="_translations.csv")
    k, d, dmin = closure_scan(w1, w2, p["k_max"])
    run.csv(["k", "t", "distance", "running_min"],
            [[int(a), 2 * math.pi * a / w2, b, c] for a, b, c in zip(k, d, dmin)],
            suffix="_closure.csv")
    run.summary = {"min_distance": float(dmin[-1])}


def cmd_orbit_find(run, model, p):
    from .orbits import PoincareSection, find_po
    g = p["guess"]
    if len(g) % 2:
        raise CliError(EXIT_CONFIG, "params.guess: needs (q, p) pairs")
    sec = PoincareSection(p["energy"], p["section_index"], 0.0, 1)
    guess = g if len(g) == 2 else [g[i:i + 2] for i in range(0, len(g), 2)]
    po = find_po(model, sec, guess, n_points=p["n_points"], tol=run.cfg.tol())
    run.json({"orbit": po.to_dict()})
    run.summary = {"period": po.period, "action": po.action, "maslov": po.maslov}


def cmd_orbit_db(run, model, p):
    from .io import write_json
    from .orbits import scan_orbits
    db = scan_orbits(model, p["energy"], p["max_crossings"], p["grid"], tol=run.cfg.tol(),
                     with_maslov=p["maslov"])
    # the database document itself is loadable by OrbitDatabase.load
    doc = db.to_dict()
    doc.pop("schema_version")
    run.outputs.append(write_json(run.path(".json"), doc, run.cfg))
    run.summary = {"orbits": len(db)}


def cmd_orbit_manifold(run, model, p):
    from .orbits import grow_manifold
    db = _load_db(p["db"], model)
    po = db.by_id(p["orbit"])
    st = grow_manifold(model, po, stable=p["stable"], arc_length=p["arc_length"],
                       fineness=p["fineness"], side=p["side"], tol=run.cfg.tol())
    run.csv(["sigma", "q", "p"], [[s, z[0], z[1]] for s, z in zip(st.sigma, st.points)])
    run.summary = {"points": len(st.points), "arc_length": st.arc_length}


def _links(model, db, src, dst, p, tol):
    from .orbits import find_heteroclinic, grow_manifold
    a, b = db.by_id(src), db.by_id(dst)
    su = grow_manifold(model, a, False, p["arc_length"], p["fineness"], tol=tol)
    ss = grow_manifold(model, b, True, p["arc_length"], p["fineness"], tol=tol)
    return find_heteroclinic(model, su, ss, a.section, tol)


def cmd_orbit_link(run, model, p):
    db = _load_db(p["db"], model)
    links = _links(model, db, p["source"], p["target"] or p["source"], p, run.cfg.tol())
    run.json({"links": [lk.to_dict() for lk in links]})
    run.summary = {"links": len(links)}


def cmd_orbit_secondary(run, model, p):
    from .orbits import SecondaryBlueprint, build_secondary_po, secondary_limit_check
    db = _load_db(p["db"], model)
    tol = run.cfg.tol()
    links = _links(model, db, p["orbit"], p["orbit"], p, tol)
    if p["link_rank"] >= len(links):
        raise CliError(EXIT_CONVERGENCE,
                       f"found {len(links)} homoclinic links; rank {p['link_rank']} unavailable")
    lk = links[p["link_rank"]]
    po = db.by_id(p["orbit"])
    bp = SecondaryBlueprint([(po.id, 1)], [lk.id])
    family = []
    for k in p["windings"]:
        k = int(k)
        family.append((k, build_secondary_po(model, bp, k, {po.id: po}, {lk.id: lk}, tol,
                                                   max_iter=p["max_iter"])))
    out = {"link": lk.to_dict(), "family": [{"windings": k, **s.to_dict()} for k, s in family]}
    if len(family) >= 3:
        out["limits"] = secondary_limit_check(family, {po.id: po}, bp).to_dict()
    run.json(out)
    run.summary = {"members": len(family)}


def cmd_sc_weyl(run, model, p):
    from .semiclassics import weyl_propagator
    x = _need(p, "centre", 2 * model.dof, "a centre point")
    value, terms = weyl_propagator(model, x, p["time"], tol=run.cfg.tol())
    run.json({"value": complex(value), "terms": [t.to_dict() for t in terms]})
    run.summary = {"re": value.real, "im": value.imag, "terms": len(terms)}


def cmd_sc_green(run, model, p):
    from .semiclassics import SmoothingSpec, green_function
    sm = None if p["gamma"] is None else SmoothingSpec("gaussian_energy", p["gamma"])
    q = dict(p)
    if q["t_max"] is None and sm is not None:
        q["t_max"] = sm.max_time(model.hbar, 1e-8)
    bs = _segments(model, q, run.cfg.tol(), run.cfg.seed)
    value, terms, flagged = green_function(model, bs, sm)
    run.json({"value": complex(value), "terms": [t.to_dict() for t in terms],
              "flagged": [{"branch": j, "reason": r} for j, r in flagged]})
    run.summary = {"re": value.real, "im": value.imag, "terms": len(terms),
                   "flagged": len(flagged)}


def _energy_grid(p):
    import numpy as np
    if not p["e_max"] > p["e_min"]:
        raise CliError(EXIT_CONFIG, "params.e_max: must exceed e_min")
    return np.linspace(p["e_min"], p["e_max"], p["n_energy"])


def _sc_trace(model, p, E):
    from .semiclassics import SmoothingSpec, trace_resolvent_osc
    sm = SmoothingSpec("gaussian_energy", p["gamma"])
    base = None if p["gamma_wide"] is None else SmoothingSpec("gaussian_energy", p["gamma_wide"])
    orbits = None
    if model.dof == 2:
        if not p.get("db"):
            raise CliError(EXIT_CONFIG, "params.db: 2-DOF traces need an orbit database")
        orbits = list(_load_db(p["db"], model))
    return sm, trace_resolvent_osc(model, E, sm, orbits, p.get("repetition_cap"), base)


def cmd_sc_trace(run, model, p):
    from .semiclassics import refine_peaks
    E = _energy_grid(p)
    sm, sf = _sc_trace(model, p, E)
    run.csv(["E", "d_osc", "terms"], zip(E, sf.values, sf.counts))
    if model.dof == 1:
        pk = refine_peaks(model, sm, E, sf.values)
        run.json({"peaks": list(pk)}, suffix="_peaks.json")
    run.summary = {"points": len(E)}


def _spectrum(model, p, e_top=None):
    from .quantum import BasisSpec, diagonalize
    e_max = e_top if e_top is not None else p.get("e_max")
    return diagonalize(model, BasisSpec(n_basis=p.get("n_basis", 80)), n_levels=p.get("n_levels"),
                       e_max=e_max, spectrum_tol=p.get("spectrum_tol", 1e-8))


def cmd_exact_spectrum(run, model, p):
    s = _spectrum(model, p)
    n = s.n_converged
    run.csv(["n", "E", "shift"], [[i, s.energies[i], s.shifts[i]] for i in range(n)])
    run.summary = {"levels": n, "omega": s.omega}


def cmd_exact_wigner(run, model, p):
    from .models import DomainError
    from .quantum import default_q_grid, eigenstate_wigner
    if model.dof != 1:
        raise DomainError("exact wigner grids are for 1-DOF models")
    s = _spectrum(model, {**p, "n_levels": p["level"] + 1})
    qg = default_q_grid(model, s.energies[p["level"]], p["n_grid"])
    wg = eigenstate_wigner(s, p["level"], qg)
    run.csv(["q", "p", "W"], [[q, pp, wg.W[i, j]] for i, q in enumerate(wg.q)
                              for j, pp in enumerate(wg.p)])
    run.summary = {"energy": float(s.energies[p["level"]]), "norm": wg.norm}


def _exact_trace(model, p, E):
    from .quantum import exact_oscillatory_density, exact_resolvent_trace_smoothed
    top = float(E[-1]) + 8.0 * max(p["gamma"], p["gamma_wide"] or 0.0) + 1.0
    s = _spectrum(model, p, e_top=top)
    if p["gamma_wide"] is None:
        return s, exact_resolvent_trace_smoothed(s, E, p["gamma"])
    return s, exact_oscillatory_density(s, E, p["gamma"], p["gamma_wide"])


def cmd_exact_trace(run, model, p):
    E = _energy_grid(p)
    _, d = _exact_trace(model, p, E)
    run.csv(["E", "d_exact"], zip(E, d))
    run.summary = {"points": len(E)}


def cmd_compare_trace(run, model, p):
    import numpy as np
    from .semiclassics import refine_peaks
    E = _energy_grid(p)
    q = dict(p)
    if q["gamma_wide"] is None and model.dof == 2:
        q["gamma_wide"] = 6.0 * q["gamma"]
    sm, sf = _sc_trace(model, q, E)
    spec, d_ex = _exact_trace(model, q, E)
    d_sc = sf.values
    if q["gamma_wide"] is None:
        # 1-DOF: the orbit sum has no mean term; remove the mean level density
        d_ex = d_ex - _smooth_density(model, E, spec)
    diff = d_sc - d_ex
    run.csv(["E", "d_osc_sc", "d_osc_exact", "diff"], zip(E, d_sc, d_ex, diff))
    report = {"sup_norm": float(np.max(np.abs(diff))),
              "correlation": float(np.corrcoef(d_sc, d_ex)[0, 1])}
    if model.dof == 1:
        pk = np.asarray(refine_peaks(model, sm, E, d_sc))
        lev = spec.energies[:spec.n_converged]
        lev = lev[(lev > E[0]) & (lev < E[-1])]
        pairs = [(float(e), float(pk[np.argmin(np.abs(pk - e))])) for e in lev] if len(pk) else []
        report["peaks"] = [{"level": e, "peak": k, "relative_error": abs(k - e) / abs(e)}
                           for e, k in pairs]
    run.json(report, suffix="_report.json")
    run.summary = {k: report[k] for k in ("sup_norm", "correlation")}


def _smooth_density(model, E, spec=None):
    """Mean (Thomas-Fermi) level density of a 1-DOF model: tau(E) / (2 pi hbar)."""
    import numpy as np
    from .dynamics import period_1dof, shell_components
    from .models import DomainError
    out = np.zeros(len(E))
    for i, e in enumerate(E):
        try:
            comps = shell_components(model, e)
        except DomainError:
            continue
        out[i] = sum(period_1dof(model, e, c)[0] for c in range(len(comps)))
    return out / (2 * math.pi * model.hbar)


def cmd_compare_wigner(run, model, p):
    import numpy as np
    from .doublephase import solve_segments_centre
    from .models import DomainError
    from .quantum import exact_spectral_wigner_points
    from .semiclassics import SmoothingSpec, spectral_wigner
    if model.dof != 1:
        raise DomainError("compare wigner supports 1-DOF models")
    E, gam = p["energy"], p["gamma"]
    if p["centres"]:
        c = p["centres"]
        if len(c) % 2:
            raise CliError(EXIT_CONFIG, "params.centres: needs (q, p) pairs")
        pts = np.array(c).reshape(-1, 2)
    else:
        from .dynamics import energy_shell_sample
        rng = np.random.default_rng(run.cfg.seed)
        shell = energy_shell_sample(model, E, p["n_centres"], seed=run.cfg.seed).points
        pts = shell * rng.uniform(0.1, 0.8, size=(len(shell), 1))
    s = _spectrum(model, p, e_top=E + 8 * gam + 1.0)
    ex = exact_spectral_wigner_points(s, E, gam, pts)
    sm = SmoothingSpec("gaussian_energy", gam)
    sc = []
    for x in pts:
        bs = solve_segments_centre(model, x, E, (1e-9, sm.max_time(model.hbar, 1e-8)),
                                   run.cfg.tol())
        sc.append(spectral_wigner(model, bs, sm))
    sc = np.array(sc)
    run.csv(["q", "p", "W_sc", "W_exact", "diff"],
            [[x[0], x[1], a, b, a - b] for x, a, b in zip(pts, sc, ex)])
    report = {"sup_norm": float(np.max(np.abs(sc - ex))),
              "correlation": float(np.corrcoef(sc, ex)[0, 1]) if len(pts) > 1 else None}
    run.json(report, suffix="_report.json")
    run.summary = report


HANDLERS = {name: globals()["cmd_" + name.replace(" ", "_")] for name in COMMANDS}


def _classify(exc):
    from .models import ConfigError, DomainError, IntegrationError
    from .orbits import ConvergenceError
    from .quantum import ResolutionError, SpectrumConvergenceError
    if isinstance(exc, CliError):
        return exc.code, str(exc)
    if isinstance(exc, ConvergenceError):
        hist = getattr(exc, "history", ())
        msg = str(exc)
        if hist:
            msg += " residual_history=" + json.dumps([float(h) for h in hist])
        return EXIT_CONVERGENCE, msg
    if isinstance(exc, SpectrumConvergenceError):
        return EXIT_CONVERGENCE, str(exc)
    if isinstance(exc, (ConfigError, DomainError, KeyError)):
        return EXIT_CONFIG, str(exc).strip("'\"")
    if isinstance(exc, (IntegrationError, ResolutionError, FloatingPointError,
                        ArithmeticError)):
        return EXIT_NUMERICAL, str(exc)
    import numpy as np
    if isinstance(exc, np.linalg.LinAlgError):
        return EXIT_NUMERICAL, f"linear algebra: {exc}"
    if isinstance(exc, OSError):
        return EXIT_CONFIG, f"io: {exc}"
    return None, None


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        _set_threads(args.threads)
        cfg = resolve_config(args)
        _cap_numba(args.threads)
        from .io import output_dir
        run = Run(cfg, output_dir(args.out), args.stem)
        HANDLERS[args.command](run, cfg.model, cfg.params)
        run.finish()
    except SystemExit as exc:   # --help
        return int(exc.code or 0)
    except Exception as exc:    # mapped to exit codes below
        code, msg = _classify(exc)
        if code is None:
            if os.environ.get("RESOLVENT_SURFACE_DEBUG"):
                raise
            code, msg = EXIT_NUMERICAL, f"unexpected {type(exc).__name__}: {exc}"
        msg = " ".join(str(msg).split())
        print(f"{PREFIX[code]}: {msg}", file=sys.stderr)
        return code
    print(json.dumps({"command": cfg.command, "config_hash": cfg.hash,
                      "outputs": run.outputs, **_jsonable(run.summary)}))
    return EXIT_OK


def _jsonable(d):
    from .io import _plain
    return _plain(d)


if __name__ == "__main__":
    sys.exit(main())
