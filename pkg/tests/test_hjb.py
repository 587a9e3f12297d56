import numpy as np
import pytest

from causal_ot.dual import solve_dual
from causal_ot.filtersim import estimate_cost, simulate
from causal_ot.hjb import (
    CFLError,
    dump_follower_csv,
    dump_hjb_csv,
    solve_follower_onesided,
    solve_follower_twosided,
    solve_truncated_hjb,
    twosided_bounds,
    value_from_follower,
)
from causal_ot.lattice import build_lattice

from conftest import make_instance

COARSE = (-4.0, 4.0)


@pytest.fixture(scope="module")
def coarse_family(table1):
    """Truncated HJB on one coarse grid for several N (shared step count)."""
    nt = solve_truncated_hjb(table1, 1.0, (None, 41, 21), COARSE).n_steps
    return {N: solve_truncated_hjb(table1, N, (nt, 41, 21), COARSE) for N in (0.0, 0.25, 0.5, 1.0)}


def test_terminal_slice_exact(coarse_family, table1):
    g = coarse_family[1.0]
    G = table1.cost.g0_values(g.y)
    expect = g.p[None, :] * G[:, [0]] + (1 - g.p[None, :]) * G[:, [1]]
    assert np.array_equal(g.V[-1], expect)
    assert g.t[-1] == 1.0 and g.t[0] == 0.0


def test_monotone_in_N(coarse_family):
    vals = [coarse_family[N].value(0.0, 0.5) for N in sorted(coarse_family)]
    assert np.all(np.diff(vals) >= -1e-6)


def test_below_dual_with_allowance(coarse_family, table1):
    lat = build_lattice(table1, 12)
    for N, g in coarse_family.items():
        assert g.value(0.0, 0.5) <= solve_dual(table1, lat, N).value + 3e-2


def test_concavity_monitor(coarse_family):
    # the explicit scheme is not exactly concavity preserving; the defect is small and grid-driven
    for g in coarse_family.values():
        assert g.concavity_violation <= 1e-3


def test_cfl_refusal(table1):
    with pytest.raises(CFLError) as err:
        solve_truncated_hjb(table1, 2.0, (4000, 161, 81), COARSE)
    assert err.value.required_steps > 4000


def test_bad_grid_rejected(table1):
    with pytest.raises(ValueError):
        solve_truncated_hjb(table1, 1.0, (None, 3, 21))


def test_n0_matches_monte_carlo():
    inst = make_instance([[-1.0, 1.0], [0.4, -0.4]], p0=(0.3, 0.7), drift=0.2, g0={"form": "logistic", "params": {"slope": 3.0, "state": 1}})
    g = solve_truncated_hjb(inst, 0.0, (None, 81, 11))
    b = simulate(inst, None, n_paths=20000, n_steps=200, seed=3)
    mean, se = estimate_cost(b)
    assert abs(g.value(0.0, 0.3) - mean) <= 1e-2


def test_onesided_follower_structure():
    fo = solve_follower_onesided(1.0, 1.0, 201)
    dz = fo.z[1] - fo.z[0]
    assert np.array_equal(fo.w[-1], np.maximum(fo.z, 0.0))
    assert fo.boundary[-1] == 0.0
    slopes = np.diff(fo.w, axis=1) / dz
    assert np.all(slopes[:-1] <= fo.upper[:-1, None] + 1e-10)
    assert np.diff(fo.w, 2, axis=1).min() >= -1e-8
    cont = fo.z[None, :] < fo.boundary[:-1, None]
    assert np.max((fo.w[:-1] - fo.w[1:]) * cont) >= 0
    assert np.min((fo.w[:-1] - fo.w[1:])[cont]) >= -1e-10
    # terminal consistency: p * y
    for y, p in ((0.3, 0.4), (-1.2, 0.9)):
        assert value_from_follower(fo, 1.0, y, p) == pytest.approx(p * y, abs=1e-10)


def test_smooth_pasting():
    fo = solve_follower_onesided(1.0, 1.0, 201)
    dz = fo.z[1] - fo.z[0]
    for k in (0, fo.t.size // 2):
        i = int(np.argmin(np.abs(fo.z - fo.boundary[k])))
        left = (fo.w[k, i] - fo.w[k, i - 1]) / dz
        right = (fo.w[k, i + 1] - fo.w[k, i]) / dz
        curv = np.abs(np.diff(fo.w[k], 2)).max() / dz**2
        assert left - 2 * dz * curv <= fo.upper[k] <= right + 2 * dz * curv


def test_twosided_follower_structure():
    fg = solve_follower_twosided(0.5, 0.5, 1.0, 201)
    dz = fg.z[1] - fg.z[0]
    assert np.array_equal(fg.w[-1], 2 * np.maximum(fg.z, 0.0))
    s = np.diff(fg.w, axis=1) / (2 * dz)
    assert np.all(s[:-1] <= fg.upper[:-1, None] + 1e-10)
    assert np.all(s[:-1] >= fg.lower[:-1, None] - 1e-10)
    assert np.diff(fg.w, 2, axis=1).min() >= -1e-8
    assert value_from_follower(fg, 1.0, 0.3, 0.4) == pytest.approx(0.3 * (2 * 0.4 - 1), abs=1e-10)


def test_twosided_symmetry():
    fg = solve_follower_twosided(0.5, 0.5, 1.0, 201)
    for t in (0.0, 0.5):
        for y in (-0.5, 0.0, 0.3):
            for p in (0.2, 0.5, 0.9):
                assert value_from_follower(fg, t, y, p) == pytest.approx(value_from_follower(fg, t, -y, 1 - p), abs=1e-10)


def test_twosided_bounds():
    lo, up = twosided_bounds(0.5, 1.5, np.array([0.0, 1.0, 50.0]))
    assert lo[0] == 0.0 and up[0] == 1.0
    assert lo[-1] == pytest.approx(0.75) and up[-1] == pytest.approx(0.75)
    assert np.all(lo <= up)
    llo, lup = twosided_bounds(0.5, 1.5, 0.0, literal=True)
    assert llo == 0.0 and lup == 0.0


def test_twosided_matches_lattice():
    # lattice primal for the symmetric chain with g0 = (y, -y) at M = 200, N = 1000
    fg = solve_follower_twosided(0.5, 0.5, 1.0, 201)
    assert abs(value_from_follower(fg, 0.0, 0.0, 0.5) - 0.718926) <= 2e-2


def test_onesided_matches_lattice():
    # absorbing chain with rate 1 and g0 = (y, 0): lattice primal at M = 200, N = 1000
    fo = solve_follower_onesided(1.0, 1.0, 201)
    assert abs(value_from_follower(fo, 0.0, 0.0, 0.5) - 0.257289) <= 2e-2


def test_rates_validated():
    with pytest.raises(ValueError):
        solve_follower_onesided(0.0)
    with pytest.raises(ValueError):
        solve_follower_twosided(0.5, 0.5, bounds="other")


def test_csv_dumps(tmp_path, coarse_family):
    p = tmp_path / "hjb.csv"
    dump_hjb_csv(coarse_family[0.0], p, ["fingerprint x"])
    lines = p.read_text().splitlines()
    assert lines[1] == "t,y,p,V" and len(lines) == 2 + coarse_family[0.0].V.size
    q = tmp_path / "fol.csv"
    fo = solve_follower_onesided(1.0, 1.0, 101)
    dump_follower_csv(fo, q, every=10)
    assert q.read_text().splitlines()[0] == "t,z,w,b"
