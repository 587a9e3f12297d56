import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from causal_ot.pwl import (
    CONCAVE,
    CONVEX,
    DegenerateError,
    DomainError,
    InfeasibleError,
    KindError,
    PwlFn,
    UnboundedError,
    affine_compose,
    conjugate,
    eval_pwl,
    inf_convolve,
    legendre,
    scale_add,
    simplify,
    windowed_pair_max,
)


@st.composite
def pwl_fns(draw, kind=CONVEX, lo=-2.0, hi=2.0, max_pts=6, rays=False):
    """Random convex (or concave) PL function on ``[lo, hi]`` built from sorted slopes."""
    n = draw(st.integers(2, max_pts))
    xs = np.sort(np.array(draw(st.lists(st.floats(lo, hi), min_size=n - 2, max_size=n - 2))))
    xs = np.unique(np.concatenate(([lo], xs, [hi])))
    assume(xs.size >= 2 and np.min(np.diff(xs)) > 1e-3)
    sl = np.sort(np.array(draw(st.lists(st.floats(-3, 3), min_size=xs.size - 1, max_size=xs.size - 1))))
    if kind == CONCAVE:
        sl = sl[::-1]
    y0 = draw(st.floats(-1, 1))
    ys = np.concatenate(([y0], y0 + np.cumsum(sl * np.diff(xs))))
    left = right = None
    if rays:
        left = sl[0] - 0.5 if kind == CONVEX else sl[0] + 0.5
        right = sl[-1] + 0.5 if kind == CONVEX else sl[-1] - 0.5
    return PwlFn(kind, xs, ys, left, right)


# -- worked examples -----------------------------------------------------------------------


def test_eval_examples():
    assert PwlFn.abs(-1, 1)(0.3) == pytest.approx(0.3)
    assert PwlFn(CONCAVE, [0, 1], [0, 1])(0.5) == 0.5
    f = PwlFn(CONVEX, [0, 0.2, 1], [0, 0, 0.8])
    assert f(0.7) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        f(1.5)


def test_canonical_merges_collinear_points():
    f = PwlFn(CONVEX, [0, 1, 2, 3], [0, 1, 2, 4])
    assert list(f.xs) == [0, 2, 3]
    with pytest.raises(KindError):
        PwlFn(CONVEX, [0, 1, 2], [0, 1, 1])


def test_affine_compose_examples():
    f = PwlFn.abs()
    g = affine_compose(f, -1.0, 0.0)
    assert np.allclose(g(np.linspace(-3, 3, 7)), np.abs(np.linspace(-3, 3, 7)))
    h = affine_compose(PwlFn.abs(-2, 2), 2.0, 0.0)
    assert h.domain == (-1.0, 1.0)
    assert h(0.5) == pytest.approx(1.0)
    dt = 0.1
    e = np.exp(-dt)
    lin = PwlFn(CONCAVE, [0, 1], [0, 1])
    k = affine_compose(lin, e, 0.5 * (1 - e), domain=(0.0, 1.0))
    assert k(0.8) == pytest.approx(0.5 + 0.3 * e)
    with pytest.raises(DegenerateError):
        affine_compose(f, 0.0, 1.0)


def test_windowed_pair_max_examples():
    lin = PwlFn(CONCAVE, [-1, 1], [-1, 1])
    g = windowed_pair_max(lin, lin, 0.3)
    assert np.allclose(g(np.linspace(-0.7, 0.7, 5)), np.linspace(-0.7, 0.7, 5))
    neg = PwlFn(CONCAVE, [-1, 1], [1, -1])
    g = windowed_pair_max(lin, neg, 0.1, domain=(-0.5, 0.5))
    assert np.allclose(g(np.linspace(-0.5, 0.5, 5)), 0.1)
    v = PwlFn(CONCAVE, [-1, 0, 1], [-1, 0, -1])
    g = windowed_pair_max(v, v, 0.4)
    m = np.linspace(-0.6, 0.6, 13)
    assert np.allclose(g(m), -np.abs(m))


def test_windowed_pair_max_zero_radius_is_average():
    A = PwlFn(CONCAVE, [0, 0.5, 1], [0, 0.4, 0.5])
    B = PwlFn(CONCAVE, [0, 1], [0.2, 0.1])
    g = windowed_pair_max(A, B, 0.0)
    x = np.linspace(0, 1, 11)
    assert np.allclose(g(x), 0.5 * (A(x) + B(x)))


def test_windowed_pair_max_infeasible_domain():
    A = PwlFn(CONCAVE, [0, 1], [0, 1])
    with pytest.raises(InfeasibleError):
        windowed_pair_max(A, A, 0.1, clip=(0.0, 1.0), domain=(-0.5, 1.0))


def test_inf_convolve_examples():
    a = PwlFn.abs()
    assert np.allclose(inf_convolve(a, a)(np.linspace(-2, 2, 9)), np.abs(np.linspace(-2, 2, 9)))
    ident = PwlFn.indicator(0.0)
    assert np.allclose(inf_convolve(a, ident)(np.linspace(-2, 2, 9)), np.abs(np.linspace(-2, 2, 9)))
    sq = PwlFn(CONVEX, [-1, 0, 1], [1, 0, 1])
    h = inf_convolve(sq, sq)
    assert h(0.0) == pytest.approx(0.0)
    assert h(2.0) == pytest.approx(2.0)


def test_legendre_examples():
    a = PwlFn.abs()
    assert legendre(a, 0.5) == 0.0
    with pytest.raises(UnboundedError):
        legendre(a, 2.0)
    assert legendre(PwlFn(CONVEX, [-1, 0, 1], [1, 0, 1]), 0.0) == 0.0


def test_scale_add_examples():
    a = PwlFn.abs()
    assert np.allclose(scale_add(a, 1.0, (0.0, 1.0))(np.array([-1.0, 0.0, 2.0])), [2.0, 1.0, 3.0])
    lin = scale_add(a, 0.0, (2.0, 3.0), kind=CONCAVE)
    assert lin.kind == CONCAVE and lin(1.0) == pytest.approx(5.0)
    f = scale_add(PwlFn(CONCAVE, [0, 1], [0, 1]), 2.0, (-1.0, 0.0))
    assert np.allclose(f.ys, [0.0, 1.0])


# -- properties ----------------------------------------------------------------------------


@given(pwl_fns(), st.floats(-3, 3).filter(lambda a: abs(a) > 0.05), st.floats(-1, 1))
@settings(max_examples=60, deadline=None)
def test_affine_compose_matches_pointwise(f, a, b):
    g = affine_compose(f, a, b)
    assert g.is_valid()
    x = np.random.default_rng(0).uniform(g.lo, g.hi, 1000)
    expect = eval_pwl(f, np.clip(a * x + b, f.lo, f.hi))
    assert np.allclose(g(x), expect, rtol=1e-13, atol=1e-12)


@given(pwl_fns(rays=True))
@settings(max_examples=60, deadline=None)
def test_biconjugation(f):
    ff = conjugate(conjugate(f))
    assert ff.is_valid()
    assert np.allclose(ff(f.xs), f.ys, atol=1e-12)
    s = 0.5 * (f.left + f.right)
    assert legendre(f, s) == pytest.approx(np.max(s * f.xs - f.ys), abs=1e-12)


@given(pwl_fns(rays=True), pwl_fns(rays=True))
@settings(max_examples=40, deadline=None)
def test_inf_convolve_brute_force(f, g):
    if max(f.left, g.left) > min(f.right, g.right):
        with pytest.raises(UnboundedError):
            inf_convolve(f, g)
        return
    h = inf_convolve(f, g)
    assert h.is_valid()
    ys = np.linspace(-8, 8, 4001)
    step = ys[1] - ys[0]
    lip = max(np.abs(f.all_slopes).max(), np.abs(g.all_slopes).max())
    for x in np.linspace(-1.5, 1.5, 7):
        brute = np.min(f(ys) + g(x - ys))
        assert h(x) <= brute + 1e-9
        assert h(x) >= brute - lip * step - 1e-9


@given(pwl_fns(CONCAVE, 0.0, 1.0), pwl_fns(CONCAVE, 0.0, 1.0), st.floats(0.0, 0.6))
@settings(max_examples=60, deadline=None)
def test_windowed_pair_max_brute_force(A, B, r):
    g = windowed_pair_max(A, B, r, clip=(0.0, 1.0))
    assert g.kind == CONCAVE and g.is_valid()
    lip = max(np.abs(A.slopes).max(), np.abs(B.slopes).max())
    u = np.linspace(-1.0, 1.0, 10001)
    step = 2 * r / 10000
    for m in np.linspace(0.0, 1.0, 11):
        R = min(r, m, 1.0 - m)
        d = R * u
        brute = np.max(0.5 * (A(m + d) + B(m - d)))
        assert g(m) >= brute - 1e-12
        assert g(m) <= brute + lip * step + 1e-12


@given(pwl_fns(), pwl_fns())
@settings(max_examples=40, deadline=None)
def test_sum_is_convex_and_pointwise(f, g):
    h = f + g
    assert h.is_valid()
    x = np.linspace(-2, 2, 101)
    assert np.allclose(h(x), f(x) + g(x), atol=1e-12)


@given(st.sampled_from([CONVEX, CONCAVE]).flatmap(lambda k: pwl_fns(k, max_pts=12, rays=True)), st.floats(0.0, 0.5))
@settings(max_examples=60, deadline=None)
def test_simplify_stays_within_eps_on_one_side(f, eps):
    g = simplify(f, eps)
    assert g.kind == f.kind and g.is_valid()
    assert set(g.xs) <= set(f.xs) and g.domain == f.domain
    assert (g.left, g.right) == (f.left, f.right)
    x = np.linspace(-3, 3, 601)
    diff = (g(x) - f(x)) * (1 if f.kind == CONVEX else -1)
    assert diff.min() >= -1e-12 and diff.max() <= eps + 1e-12


def test_simplify_examples():
    f = PwlFn(CONCAVE, [0.0, 0.5, 0.5 + 1e-3, 1.0], [0.0, 0.5, 0.5 + 0.999e-3, 0.4])
    assert len(simplify(f, 1e-5)) == 3
    assert simplify(f, 0.0) is f
    with pytest.raises(ValueError):
        simplify(f, -1.0)
