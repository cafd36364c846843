"""Numba kernels vs the plain numpy/Python path.

The numpy path is selected at import time, so it runs in a child process
with RESOLVENT_SURFACE_NUMBA=0. Each workload is timed after one warm-up
call (which triggers compilation on the numba side) and the results of the
two paths are compared.

    python benchmarks/bench_kernels.py [--repeat 3] [--quick]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def workloads(quick):
    from resolvent_surface import HamiltonianModel
    from resolvent_surface import _kernels as kern
    from resolvent_surface.dynamics import flow, shell_loop
    from resolvent_surface.quantum import BasisSpec, default_q_grid, diagonalize, wavefunction

    qu = HamiltonianModel("quartic1d", {})
    shell, _, _ = shell_loop(qu, 1.0, 0, n=2000 if not quick else 400)
    n = 60 if not quick else 20
    g = np.linspace(-1.5, 1.5, n)
    centres = np.array([(a, b) for a in g for b in g])

    spec = diagonalize(qu, BasisSpec(80), n_levels=12)
    qg = default_q_grid(qu, spec.energies[10], 256 if not quick else 96)
    psi = wavefunction(spec, 10, qg).astype(complex)
    pg = np.linspace(-6, 6, len(qg))

    cq = HamiltonianModel("coupledquartic2d", {})
    x0 = np.array([0.3, 0.4, 0.9, 0.1])
    x0[2] = np.sqrt(2 * (1.0 - cq.potential(x0[:2])) - x0[3] ** 2)
    t_flow = 20.0 if not quick else 2.0

    return {
        "count_chords": lambda: kern.count_chords(qu.code, qu.param_vector, shell, centres, 1.0),
        "in_polygon": lambda: kern.in_polygon(shell, centres).astype(float),
        "wigner": lambda: kern.wigner(psi, qg[1] - qg[0], pg, 1.0),
        "flow_2dof": lambda: flow(cq, x0, t_flow).x_plus,
    }


def run(repeat, quick):
    out = {}
    for name, fn in workloads(quick).items():
        res = fn()   # warm-up / compile
        best = np.inf
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        out[name] = {"seconds": best, "checksum": float(np.sum(np.asarray(res, dtype=float)))}
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="small workloads (smoke test)")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(run(args.repeat, args.quick)))
        return 0

    env = dict(os.environ, RESOLVENT_SURFACE_NUMBA="0")
    cmd = [sys.executable, __file__, "--child", "--repeat", str(args.repeat)]
    if args.quick:
        cmd.append("--quick")
    plain = json.loads(subprocess.run(cmd, env=env, check=True, capture_output=True,
                                      text=True).stdout.strip().splitlines()[-1])
    env["RESOLVENT_SURFACE_NUMBA"] = "1"
    jit = json.loads(subprocess.run(cmd, env=env, check=True, capture_output=True,
                                    text=True).stdout.strip().splitlines()[-1])

    print(f"{'kernel':<14}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}  agree")
    ok = True
    for name in jit:
        a, b = jit[name], plain[name]
        agree = abs(a["checksum"] - b["checksum"]) <= 1e-8 * max(1.0, abs(b["checksum"]))
        ok &= agree
        print(f"{name:<14}{a['seconds']:>12.4g}{b['seconds']:>12.4g}"
              f"{b['seconds'] / a['seconds']:>10.1f}  {'yes' if agree else 'NO'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
