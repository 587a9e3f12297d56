import os

import numpy as np
import pytest

from causal_ot.instance import instance_from_dict, load_instance

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")


def config_path(name):
    return os.path.join(CONFIGS, name + ".json")


def make_instance(lam, p0=(0.5, 0.5), g0=None, f0=None, y0=0.0, T=1.0, drift=0.0, sigma=1.0, atoms=None):
    g0 = g0 or {"form": "logistic", "params": {"slope": 8.0, "state": 1}}
    f0 = f0 or {"form": "zero"}
    atoms = atoms or [{"y": y0, "w": 1.0}]
    raw = {
        "chain": {"K": len(p0), "lambda": np.asarray(lam, dtype=float).tolist(), "p0": list(p0)},
        "diffusion": {
            "dim": 1,
            "drift": {"form": "const", "params": {"value": drift}} if drift else {"form": "zero"},
            "vol": {"form": "const", "params": {"value": sigma}},
            "y0_atoms": atoms,
            "T": T,
        },
        "cost": {"f0": f0, "g0": g0},
    }
    return instance_from_dict(raw)


def random_two_state(rng, running=False):
    a, b = rng.uniform(0.05, 2.0, size=2)
    p = rng.uniform(0.05, 0.95)
    kind = rng.integers(3)
    if kind == 0:
        g0 = {"form": "logistic", "params": {"slope": float(rng.uniform(1, 10)), "state": int(rng.integers(1, 3))}}
    elif kind == 1:
        g0 = {"form": "linear-xy", "params": {"values": rng.uniform(-2, 2, 2).tolist()}}
    else:
        g0 = {"form": "poly", "params": {"coeffs": [rng.uniform(-1, 1, 3).tolist(), rng.uniform(-1, 1, 3).tolist()]}}
    f0 = {"form": "linear-xy", "params": {"values": rng.uniform(-1, 1, 2).tolist()}} if running else None
    return make_instance(
        [[-a, a], [b, -b]],
        (p, 1 - p),
        g0=g0,
        f0=f0,
        y0=float(rng.uniform(-0.5, 0.5)),
        T=float(rng.uniform(0.5, 1.5)),
        drift=float(rng.uniform(-0.5, 0.5)),
        sigma=float(rng.uniform(0.5, 1.5)),
    )


@pytest.fixture(scope="session")
def table1():
    return load_instance(config_path("table1"))


@pytest.fixture(scope="session")
def constant():
    return load_instance(config_path("constant"))
