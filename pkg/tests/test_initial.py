import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr

from causal_ot.initial import quantile_kernel, solve_initial
from causal_ot.pwl import CONCAVE, PwlFn


def random_concave_on_grid(rng, n_break=4, grid=1000):
    """Concave PL on [0, 1] with breakpoints on multiples of 1/grid."""
    inner = np.sort(rng.choice(np.arange(1, grid), size=n_break, replace=False)) / grid
    xs = np.concatenate(([0.0], inner, [1.0]))
    sl = np.sort(rng.uniform(-2, 2, xs.size - 1))[::-1]
    ys = np.concatenate(([rng.uniform(-1, 1)], np.zeros(xs.size - 1)))
    ys[1:] = ys[0] + np.cumsum(sl * np.diff(xs))
    return PwlFn(CONCAVE, xs, ys)


def grid_oracle(f1, f2, mu1, n=1001):
    r = np.linspace(0, 1, n)
    R1, R2 = np.meshgrid(r, r, indexing="ij")
    feas = np.abs(0.5 * R1 + 0.5 * R2 - mu1) <= 1e-12
    vals = 0.5 * f1(R1[feas]) + 0.5 * f2(R2[feas])
    return vals.max()


def test_single_atom_pins_kernel():
    f = PwlFn(CONCAVE, [0, 0.3, 1], [0, 0.6, 0.8])
    sol = solve_initial([(1.0, f)], (0.4, 0.6))
    assert sol.r[0] == pytest.approx(0.4)
    assert sol.value == pytest.approx(f(0.4))


def test_identical_linear_atoms_get_uniform_kernel():
    f = PwlFn(CONCAVE, [0, 1], [0.2, 0.7])
    sol = solve_initial([(0.3, f), (0.7, f)], (0.35, 0.65))
    assert np.allclose(sol.r, 0.35, atol=1e-14)
    assert sol.value == pytest.approx(f(0.35))


def test_two_atom_example():
    f1 = PwlFn(CONCAVE, [0, 0.5, 1], [0, 0.5, 0.5])
    f2 = PwlFn(CONCAVE, [0, 1], [0, 0.3])
    sol = solve_initial([(0.5, f1), (0.5, f2)], (0.5, 0.5))
    assert sol.value == pytest.approx(grid_oracle(f1, f2, 0.5), abs=1e-6)


def test_matches_grid_oracle_on_random_instances():
    rng = np.random.default_rng(11)
    for _ in range(10):
        f1, f2 = random_concave_on_grid(rng), random_concave_on_grid(rng)
        mu1 = rng.integers(0, 1001) / 1000
        sol = solve_initial([(0.5, f1), (0.5, f2)], (mu1, 1 - mu1))
        assert abs(0.5 * sol.r.sum() - mu1) <= 1e-10
        assert sol.value == pytest.approx(grid_oracle(f1, f2, mu1), abs=1e-6)


def test_beats_random_feasible_kernels():
    rng = np.random.default_rng(12)
    w = np.array([0.2, 0.5, 0.3])
    fs = [random_concave_on_grid(rng) for _ in w]
    mu1 = 0.45
    sol = solve_initial(list(zip(w, fs)), (mu1, 1 - mu1))
    assert abs(w @ sol.r - mu1) <= 1e-10
    R = rng.uniform(0, 1, (10**4, 3))
    R = R * (mu1 / (R @ w))[:, None]
    R = R[(R <= 1).all(axis=1)]
    vals = sum(w[i] * fs[i](R[:, i]) for i in range(3))
    assert sol.value >= vals.max() - 1e-12


def test_rejects_bad_inputs():
    f = PwlFn(CONCAVE, [0, 1], [0, 1])
    with pytest.raises(ValueError):
        solve_initial([(0.5, f)], (0.5, 0.5))
    with pytest.raises(ValueError):
        solve_initial([(1.0, f)], (1.5, -0.5))


def test_symmetric_quantile_kernel():
    K, edges = quantile_kernel([-1.0, 1.0], [0.5, 0.5], 1.0, 1.0)
    assert abs(edges[1]) <= 1e-12
    assert K[1, 1] == pytest.approx(ndtr(1.0), abs=1e-12)
    assert K[0, 0] == pytest.approx(ndtr(1.0), abs=1e-12)


def test_single_state_kernel():
    K, _ = quantile_kernel([0.0], [1.0], 1.0, 1.0)
    assert K.shape == (1, 1) and K[0, 0] == 1.0


@given(st.integers(2, 6), st.integers(0, 10**6), st.floats(0.1, 3.0), st.floats(0.2, 3.0))
@settings(max_examples=30, deadline=None)
def test_quantile_marginal_identity(K, seed, a, s):
    rng = np.random.default_rng(seed)
    xs = np.sort(rng.uniform(-2, 2, K))
    qs = rng.dirichlet(np.ones(K))
    kern, _ = quantile_kernel(xs, qs, a, s)
    assert np.allclose(kern.sum(axis=1), 1.0, atol=1e-14)
    assert np.allclose(qs @ kern, qs, atol=1e-9)


@pytest.mark.parametrize("T", [0.5, 1.0, 2.0])
def test_running_cost_kernel_is_rescaled_terminal_kernel(T):
    xs, qs = np.array([-1.0, 0.5, 2.0]), np.array([0.3, 0.5, 0.2])
    run, e_run = quantile_kernel(xs, qs, T, T**1.5 / np.sqrt(3.0))
    term, e_term = quantile_kernel(xs, qs, 1.0, np.sqrt(T / 3.0))
    assert np.allclose(run, term, atol=1e-12)
    assert np.allclose(e_run[1:-1], T * e_term[1:-1], atol=1e-10)
