"""Solve a program.txt dump with Clarabel and print status and objective.

Usage: python3 scripts/reference_solve.py out/landing2d_p4/program.txt [...]

Dumps are written by `lcvx run --dump-program`. The program is
min c'x  s.t.  Ax = b,  h - Gx in K,  K a product of orthants and second-order cones.
"""

import sys

import clarabel
import numpy as np
from scipy import sparse


def read_program(path):
    with open(path) as f:
        lines = [ln.split() for ln in f if ln.strip()]
    it = iter(lines)
    head = next(it)
    assert head[0] == "dims"
    n, p, m = map(int, head[1:])
    sizes = {"c": n, "b": p, "h": m}
    shapes = {"A": (p, n), "G": (m, n)}
    out = {}
    for tok in it:
        key, count = tok[0], int(tok[1])
        if key in sizes:
            v = np.zeros(sizes[key])
            for _ in range(count):
                i, x = next(it)
                v[int(i)] = float(x)
            out[key] = v
        elif key in shapes:
            rows, cols, vals = [], [], []
            for _ in range(count):
                r, c, x = next(it)
                rows.append(int(r))
                cols.append(int(c))
                vals.append(float(x))
            out[key] = sparse.csc_matrix((vals, (rows, cols)), shape=shapes[key])
        elif key == "cones":
            out["cones"] = [(kind, int(d)) for kind, d in (next(it) for _ in range(count))]
        else:
            raise ValueError(f"unknown section {key}")
    return out


def solve(prog):
    cones = []
    if prog["A"].shape[0]:
        cones.append(clarabel.ZeroConeT(prog["A"].shape[0]))
    for kind, d in prog["cones"]:
        cones.append(clarabel.NonnegativeConeT(d) if kind == "l" else clarabel.SecondOrderConeT(d))
    a = sparse.vstack([prog["A"], prog["G"]]).tocsc()
    b = np.concatenate([prog["b"], prog["h"]])
    n = prog["c"].size
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = settings.tol_gap_rel = settings.tol_feas = 1e-10
    solver = clarabel.DefaultSolver(sparse.csc_matrix((n, n)), prog["c"], a, b, cones, settings)
    return solver.solve()


if __name__ == "__main__":
    for path in sys.argv[1:]:
        sol = solve(read_program(path))
        print(f"{path}: {sol.status} objective {sol.obj_val:.15g}")
