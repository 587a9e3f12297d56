"""Lower and upper lattice bounds for the two-state logistic instance over a range of N.

    python3 scripts/table1.py [--M 12] [--out table1.csv]
"""

import argparse
import time
from dataclasses import dataclass
from pathlib import Path

from causal_ot.cli import sandwich
from causal_ot.instance import load_instance

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@dataclass
class Table1Run:
    config: str = str(CONFIGS / "table1.json")
    M: int = 12
    Ns: tuple = (0.0, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0)
    out: str | None = None


def run(cfg: Table1Run):
    inst = load_instance(cfg.config)
    t0 = time.perf_counter()
    rep = sandwich(inst, cfg.Ns, cfg.M)
    print(rep.table())
    print(f"# {time.perf_counter() - t0:.2f} s, ordering violations: {rep.check() or 'none'}")
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write("N,lower,upper\n")
            for r in rep.rows:
                fh.write(f"{r.N!r},{r.lower!r},{r.upper!r}\n")
    return rep


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--M", type=int, default=12)
    ap.add_argument("--out")
    a = ap.parse_args()
    run(Table1Run(M=a.M, out=a.out))
