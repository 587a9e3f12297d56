import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binom

from causal_ot.chain import ChainSpec, expm
from causal_ot.lattice import Lattice, UnsupportedError, build_lattice, drift_map

from conftest import make_instance


def test_table1_lattice(table1):
    lat = build_lattice(table1, 12)
    assert lat.dt == pytest.approx(1 / 12)
    assert lat.n_nodes == 91
    assert lat.y_value(12, 12) == pytest.approx(np.sqrt(12.0))


def test_small_lattices():
    lat = Lattice(M=1, T=1.0, y0=0.0)
    assert list(lat.level(0)) == [0.0]
    assert list(lat.level(1)) == [-1.0, 1.0]
    assert Lattice(M=2, T=1.0, y0=0.0, drift=1.0).y_value(2, 1) == pytest.approx(1.0)


@given(st.integers(1, 60), st.floats(-1, 1), st.floats(0.2, 2.0), st.floats(0.1, 3.0))
@settings(max_examples=40, deadline=None)
def test_terminal_moments(M, b, sigma, T):
    lat = Lattice(M=M, T=T, y0=0.3, drift=b, sigma=sigma)
    y = lat.level(M)
    w = binom.pmf(np.arange(M + 1), M, 0.5)
    mean = w @ y
    assert mean == pytest.approx(0.3 + b * T, abs=1e-12)
    assert w @ (y - mean) ** 2 == pytest.approx(sigma**2 * T, abs=1e-12)


def test_drift_map_example():
    dm = drift_map(ChainSpec.two_state(0.5, 0.5), 1 / 12)
    assert dm(0.6) == pytest.approx(0.5 + 0.1 * np.exp(-1 / 12), abs=1e-13)
    assert dm(0.5) == pytest.approx(0.5, abs=1e-15)


@given(st.floats(0.01, 3), st.floats(0.01, 3), st.floats(0, 1), st.integers(1, 30))
@settings(max_examples=40, deadline=None)
def test_drift_map_semigroup(a, b, q, M):
    ch = ChainSpec.two_state(a, b)
    dt = 1.0 / M
    dm = drift_map(ch, dt)
    assert dm(q) == pytest.approx((np.array([q, 1 - q]) @ expm(ch, dt))[0], abs=1e-13)
    x = q
    for _ in range(M):
        x = dm(x)
        assert 0.0 < x < 1.0
    assert x == pytest.approx((np.array([q, 1 - q]) @ expm(ch, 1.0))[0], abs=1e-12)
    assert dm(b / (a + b)) == pytest.approx(b / (a + b), abs=1e-13)


def test_non_constant_coefficients_rejected():
    inst = make_instance([[-1, 1], [1, -1]])
    raw = inst.to_dict()
    raw["diffusion"]["drift"] = {"form": "poly", "params": {"coeffs": [0.0, -1.0]}}
    from causal_ot.instance import instance_from_dict

    with pytest.raises(UnsupportedError):
        build_lattice(instance_from_dict(raw), 4)
