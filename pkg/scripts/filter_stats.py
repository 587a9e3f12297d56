"""Martingale deviation and clamped simplex mass of the simulated filter across step sizes.

    python3 scripts/filter_stats.py [--paths 100000] [--bound 8] [--seed 6]
"""

import argparse
import time
from dataclasses import dataclass
from pathlib import Path

from causal_ot.filtersim import martingale_check, random_bounded_control, simulate
from causal_ot.instance import load_instance

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@dataclass
class FilterRun:
    paths: int = 10**5
    bound: float = 8.0
    steps: tuple = (100, 1000, 10000)
    seed: int = 6


def run(cfg: FilterRun):
    inst = load_instance(CONFIGS / "table1.json")
    ctrl = random_bounded_control(2, cfg.bound, seed=1)
    for n_steps in cfg.steps:
        # keep the work per run roughly flat
        paths = max(1000, cfg.paths * 1000 // max(n_steps, 1000))
        t0 = time.perf_counter()
        b = simulate(inst, ctrl, n_paths=paths, n_steps=n_steps, seed=cfg.seed, record_every=max(1, n_steps // 20), control_bound=cfg.bound)
        m = martingale_check(b, inst.chain)
        print(f"dt={b.dt_sim:.0e} paths={paths}: martingale max dev {m.max_deviation:.2e} ({m.max_se_multiple:.2f} SE, ok={m.ok})  "
              f"clamped mass {b.clamped_mass.mean():.2e} = {b.clamped_mass.mean() / b.dt_sim:.3g} dt  ({time.perf_counter() - t0:.0f} s)", flush=True)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=10**5)
    ap.add_argument("--bound", type=float, default=8.0)
    ap.add_argument("--seed", type=int, default=6)
    a = ap.parse_args()
    run(FilterRun(a.paths, a.bound, seed=a.seed))
