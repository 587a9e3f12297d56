"""Lattice values as the step count grows.

Frozen chain: error against the closed form sqrt(2/pi).  Other configs: lower (and upper,
where cheap) bounds at a large truncation level.

    python3 scripts/convergence.py [--Ms 50 100 200 400] [--configs constant table1 ex52 absorbing]
"""

import argparse
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from causal_ot.closedform import ConstantChainExample, v_term
from causal_ot.instance import load_instance
from causal_ot.lattice import build_lattice
from causal_ot.primal import solve_primal

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@dataclass
class ConvergenceRun:
    Ms: tuple = (50, 100, 200, 400)
    configs: tuple = ("constant", "table1", "ex52", "absorbing")
    N: float | None = None  # None: sqrt(M), a window covering the whole simplex


def run(cfg: ConvergenceRun):
    exact = v_term(ConstantChainExample(np.array([-1.0, 1.0]), np.array([0.5, 0.5])))
    rows = []
    for name in cfg.configs:
        inst = load_instance(CONFIGS / f"{name}.json")
        for M in cfg.Ms:
            N = np.sqrt(M) if cfg.N is None else cfg.N
            t0 = time.perf_counter()
            v = solve_primal(inst, build_lattice(inst, M), N).value
            dt = time.perf_counter() - t0
            extra = f"  error {v - exact:+.2e}" if name == "constant" else ""
            print(f"{name:10s} M={M:4d} N={N:8.3f}  lower {v:.6f}  ({dt:5.1f} s){extra}", flush=True)
            rows.append((name, M, N, v))
    return rows


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--Ms", type=int, nargs="+", default=[50, 100, 200, 400])
    ap.add_argument("--configs", nargs="+", default=["constant", "table1", "ex52", "absorbing"])
    ap.add_argument("--N", type=float)
    a = ap.parse_args()
    run(ConvergenceRun(tuple(a.Ms), tuple(a.configs), a.N))
