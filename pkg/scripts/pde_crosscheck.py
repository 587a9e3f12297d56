"""Finite-difference HJB and follower values against the lattice.

    python3 scripts/pde_crosscheck.py [--Ns 0 1 2] [--ny 161 --np 81] [--nz 401] [--M 200]
"""

import argparse
import time
from dataclasses import dataclass
from pathlib import Path

from causal_ot.hjb import solve_follower_onesided, solve_follower_twosided, solve_truncated_hjb, value_from_follower
from causal_ot.instance import load_instance
from causal_ot.lattice import build_lattice
from causal_ot.primal import solve_primal

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@dataclass
class PdeRun:
    Ns: tuple = (0.0, 1.0, 2.0)
    ny: int = 161
    np_: int = 81
    y_domain: tuple = (-4.0, 4.0)
    nz: int = 401
    M: int = 200  # lattice size for the follower references


def run(cfg: PdeRun):
    inst = load_instance(CONFIGS / "table1.json")
    lat = build_lattice(inst, 12)
    for N in cfg.Ns:
        t0 = time.perf_counter()
        g = solve_truncated_hjb(inst, N, (None, cfg.ny, cfg.np_), cfg.y_domain)
        ref = solve_primal(inst, lat, N).value
        v = g.value(0.0, 0.5)
        print(f"hjb N={N:g}: {v:.6f}  lattice M=12 {ref:.6f}  gap {v - ref:+.2e}  "
              f"steps {g.n_steps}  concavity defect {g.concavity_violation:.1e}  ({time.perf_counter() - t0:.0f} s)", flush=True)

    for name, solve in (
        ("ex52", lambda: solve_follower_twosided(0.5, 0.5, 1.0, cfg.nz)),
        ("absorbing", lambda: solve_follower_onesided(1.0, 1.0, cfg.nz)),
    ):
        inst = load_instance(CONFIGS / f"{name}.json")
        ref = solve_primal(inst, build_lattice(inst, cfg.M), 1e3).value
        t0 = time.perf_counter()
        fg = solve()
        v = value_from_follower(fg, 0.0, 0.0, 0.5)
        print(f"follower {name}: {v:.6f}  lattice M={cfg.M} {ref:.6f}  gap {v - ref:+.2e}  b(0) {fg.boundary[0]:.4f}  "
              f"({time.perf_counter() - t0:.1f} s)", flush=True)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--Ns", type=float, nargs="+", default=[0.0, 1.0, 2.0])
    ap.add_argument("--ny", type=int, default=161)
    ap.add_argument("--np", type=int, default=81)
    ap.add_argument("--nz", type=int, default=401)
    ap.add_argument("--M", type=int, default=200)
    a = ap.parse_args()
    run(PdeRun(tuple(a.Ns), a.ny, a.np, nz=a.nz, M=a.M))
