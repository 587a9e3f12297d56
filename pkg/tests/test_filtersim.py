import numpy as np
import pytest

from causal_ot.chain import expm
from causal_ot.filtersim import (
    SimulationError,
    dump_paths_csv,
    estimate_cost,
    lattice_policy_control,
    martingale_check,
    random_bounded_control,
    simulate,
)
from causal_ot.lattice import build_lattice
from causal_ot.primal import solve_primal

from conftest import make_instance


def test_uncontrolled_filter_is_deterministic(table1):
    b = simulate(table1, None, n_paths=50, n_steps=200, seed=1)
    exact = np.stack([table1.chain.p0 @ expm(table1.chain, t) for t in b.times])
    assert np.max(np.abs(b.P - exact[None])) <= 5 * b.dt_sim
    assert b.clamped_mass.max() == 0.0


def test_simplex_and_zero_mean(table1):
    ctrl = random_bounded_control(2, 3.0, seed=2)
    b = simulate(table1, ctrl, n_paths=200, n_steps=200, seed=3, control_bound=3.0)
    assert b.P.min() >= -1e-12
    assert np.all(b.P[..., -1] == np.maximum(1.0 - b.P[..., :-1].sum(axis=-1), 0.0))
    assert np.allclose(b.P.sum(axis=-1), 1.0, atol=1e-12)
    assert b.zero_mean_residual <= 1e-14


def test_reproducible_and_chunk_independent(table1):
    ctrl = random_bounded_control(2, 2.0, seed=4)
    a = simulate(table1, ctrl, n_paths=64, n_steps=50, seed=9, chunk=64)
    b = simulate(table1, ctrl, n_paths=64, n_steps=50, seed=9, chunk=10)
    assert np.array_equal(a.P, b.P) and np.array_equal(a.Y, b.Y)
    c = simulate(table1, ctrl, n_paths=64, n_steps=50, seed=10)
    assert not np.array_equal(a.Y, c.Y)


def test_cost_estimates():
    inst = make_instance([[-1, 1], [1, -1]], g0={"form": "const", "params": {"value": 1.0}})
    b = simulate(inst, None, n_paths=20, n_steps=10, seed=0)
    mean, se = estimate_cost(b)
    assert mean == pytest.approx(1.0, abs=1e-14) and se <= 1e-14


def test_table1_uncontrolled_cost(table1):
    b = simulate(table1, None, n_paths=4000, n_steps=100, seed=5)
    mean, se = estimate_cost(b)
    assert abs(mean - 0.25) <= 3 * se + 1e-2


def test_vertex_start_decouples():
    # frozen chain at a vertex: the cost is a plain functional of Y_T
    inst = make_instance([[0, 0], [0, 0]], p0=(1.0, 0.0), g0={"form": "poly", "params": {"coeffs": [[0.0, 0.0, 1.0], [5.0]]}})
    b = simulate(inst, random_bounded_control(2, 1.0), n_paths=4000, n_steps=50, seed=6)
    mean, se = estimate_cost(b)
    assert abs(mean - 1.0) <= 3 * se


def test_martingale_check_and_degenerate(table1):
    ctrl = random_bounded_control(2, 4.0, seed=7)
    b = simulate(table1, ctrl, n_paths=3000, n_steps=200, seed=8, record_every=20)
    rep = martingale_check(b, table1.chain)
    assert rep.ok
    one = simulate(table1, ctrl, n_paths=1, n_steps=20, seed=8)
    assert martingale_check(one, table1.chain).degenerate


def test_control_bound_enforced(table1):
    with pytest.raises(SimulationError):
        simulate(table1, random_bounded_control(2, 5.0), n_paths=10, n_steps=10, control_bound=1.0)


def test_lattice_policy_is_lower_bound(table1):
    lat = build_lattice(table1, 12)
    res = solve_primal(table1, lat, 1.0, keep_nodes=True)
    b = simulate(table1, lattice_policy_control(res), n_paths=2000, n_steps=600, seed=11)
    mean, se = estimate_cost(b)
    assert mean <= res.value + 3 * se + 10 * b.dt_sim


def test_joint_mode_matches_filter_mode_law(table1):
    ctrl = random_bounded_control(2, 2.0, seed=12)
    b = simulate(table1, ctrl, n_paths=3000, n_steps=100, seed=13, joint=True)
    # hidden state frequencies agree with the filter mean
    freq = np.mean(b.X[:, -1] == 0)
    assert abs(freq - b.P[:, -1, 0].mean()) <= 4 * np.sqrt(0.25 / 3000)


def test_csv_dump(tmp_path, table1):
    b = simulate(table1, None, n_paths=3, n_steps=4, seed=0)
    p = tmp_path / "paths.csv"
    dump_paths_csv(b, p, ["fingerprint test"])
    lines = p.read_text().splitlines()
    assert lines[0] == "# fingerprint test"
    assert lines[1] == "path_id,k,t,y1,p1,p2"
    assert len(lines) == 2 + 3 * 5
