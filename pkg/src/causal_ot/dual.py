"""Upper bounds: the Lagrangian dual of the lattice program, solved on one scalar state.

The dual minimises, over a static multiplier ``lam`` and adapted node multipliers
``lam_n in [0, N]^K``,

    E[ max_i { g0(i, Y_M) + dt * sum_n sum_j P_ij(t_n - T) (f0(j, Y_n) + lam_n^j) - mu_i } ] + p0 . lam

with ``mu = P(-T) lam``.  The inner max depends on the accumulated vector ``a`` only through
``a_2 + W(a_1 - a_2)``, so the dynamic program runs on the scalar difference ``d`` with
convex piecewise-linear node functions.  The static multiplier then drops out through a
Fenchel conjugate: ``v = min_d W_root(d) - pi_1 d`` with ``pi = p0 P(T)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.sparse as sp
from scipy.stats import binom

from .chain import expm
from .instance import ProblemInstance
from .lattice import Lattice, UnsupportedError
from .pwl import CONVEX, PwlFn, UnboundedError, affine_compose, eval_pwl, inf_convolve, legendre

__all__ = [
    "DualResult",
    "DualUnboundedError",
    "ConstraintReport",
    "shift_cost",
    "solve_dual",
    "solve_dual_bruteforce",
    "solve_dual_pathtree",
    "dual_objective",
    "replay_dual",
    "check_terminal_constraints",
]


class DualUnboundedError(ValueError):
    """The conjugate at ``pi_1`` is infinite: the dual is unbounded below."""


@dataclass
class DualResult:
    value: float
    root_W: PwlFn
    static_multiplier: np.ndarray
    N: float
    M: int
    d_star: float = 0.0
    lattice: Lattice | None = None
    nodes: dict | None = field(default=None, repr=False)  # (n, j) -> W_n,j when kept
    kappas: list | None = field(default=None, repr=False)  # per-step shift-cost functions and vertices
    shifts: list | None = field(default=None, repr=False)  # per-step f0 shift of d at each j


def shift_cost(P: np.ndarray, dt: float, N: float):
    """Cheapest cost to move ``d`` by ``s`` using ``lam in [0, N]^2``.

    Moving costs ``dt*(P21 lam1 + P22 lam2)`` and shifts ``d`` by ``dt*((P11-P21) lam1 +
    (P12-P22) lam2)``.  Returns the convex PL ``kappa`` (lower hull over the box corners)
    and the corner table ``(shift, cost, lam1, lam2)`` sorted by shift.
    """
    if N == 0:
        return PwlFn.indicator(0.0), np.zeros((1, 4))
    corners = np.array([(0.0, 0.0), (N, 0.0), (0.0, N), (N, N)])
    s = dt * corners @ (P[0] - P[1])
    c = dt * corners @ P[1]
    order = np.lexsort((c, s))
    s, c, corners = s[order], c[order], corners[order]
    # lower convex hull, keeping the cheapest corner per shift
    hull = []
    for k in range(4):
        if hull and s[hull[-1]] == s[k]:
            continue
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            if (c[j] - c[i]) * (s[k] - s[i]) >= (c[k] - c[i]) * (s[j] - s[i]):
                hull.pop()
            else:
                break
        hull.append(k)
    hull = np.array(hull)
    table = np.column_stack((s[hull], c[hull], corners[hull]))
    if hull.size == 1:
        return PwlFn.indicator(s[hull[0]], c[hull[0]]), table
    return PwlFn(CONVEX, s[hull], c[hull]), table


def _terminal(g1, g2):
    """``d -> max(d + g1, g2)``."""
    return PwlFn(CONVEX, [g2 - g1], [g2], left=0.0, right=1.0)


def _average(A: PwlFn, B: PwlFn) -> PwlFn:
    h = A + B
    return PwlFn(CONVEX, h.xs.copy(), 0.5 * h.ys, None if h.left is None else 0.5 * h.left, None if h.right is None else 0.5 * h.right, _canon=False)


def solve_dual(instance: ProblemInstance, lattice: Lattice, N: float, *, keep_nodes: bool = False) -> DualResult:
    if instance.K != 2:
        raise UnsupportedError("exact reduced dual handles K = 2")
    if N < 0:
        raise ValueError("truncation level N must be non-negative")
    lat = lattice
    M, dt, T = lat.M, lat.dt, lat.T
    chain = instance.chain
    G = instance.cost.g0_values(lat.level(M))
    level = [_terminal(g[0], g[1]) for g in G]
    nodes = {(M, j): f for j, f in enumerate(level)} if keep_nodes else None
    kappas = [None] * M
    shifts = [None] * M
    run = instance.cost.has_running_cost
    for n in range(M - 1, -1, -1):
        P = expm(chain, n * dt - T)
        kappa, table = shift_cost(P, dt, N)
        kappas[n] = (kappa, table)
        # reflected kappa: (H box kappa~)(x) = min_s H(x + s) + kappa(s)
        kt = affine_compose(kappa, -1.0, 0.0)
        if run:
            Fi = instance.cost.f0_values(lat.level(n)) @ P.T  # F_i = sum_j P_ij f0(j, y)
            sh = dt * (Fi[:, 0] - Fi[:, 1])
            add_c = dt * Fi[:, 1]
        else:
            sh = np.zeros(n + 1)
            add_c = np.zeros(n + 1)
        shifts[n] = sh
        new = []
        for j in range(n + 1):
            H = _average(level[j + 1], level[j])
            W = inf_convolve(H, kt)
            if sh[j] != 0.0:
                W = affine_compose(W, 1.0, sh[j])
            if add_c[j] != 0.0:
                W = W + add_c[j]
            new.append(W)
        level = new
        if keep_nodes:
            nodes.update({(n, j): f for j, f in enumerate(level)})
    root = level[0]
    PT = expm(chain, T)
    pi1 = float(chain.p0 @ PT[:, 0])
    try:
        value = -legendre(root, pi1)
    except UnboundedError as exc:
        raise DualUnboundedError(str(exc)) from None
    d_star = _conj_argmax(root, pi1)
    mu1 = -PT[1, 1] * d_star
    lam = np.array([mu1 + PT[0, 1] * d_star, 0.0])
    return DualResult(value, root, lam, float(N), M, d_star, lat, nodes, kappas, shifts)


def _conj_argmax(W: PwlFn, s: float) -> float:
    """A minimiser of ``W(d) - s*d`` (breakpoint attaining the conjugate)."""
    k = int(np.argmax(s * W.xs - W.ys))
    return float(W.xs[k])


def dual_objective(instance: ProblemInstance, lattice: Lattice, lam_static, node_lams) -> float:
    """Exact dual objective for a static multiplier and path-tree node multipliers.

    ``node_lams`` has shape ``(2**M - 1, K)`` in heap order (children of ``k`` are ``2k+1``
    down and ``2k+2`` up), covering depths ``0..M-1``.
    """
    lat = lattice
    M, dt, T = lat.M, lat.dt, lat.T
    chain = instance.chain
    mu = expm(chain, -T) @ np.asarray(lam_static, dtype=float)
    total = 0.0

    def walk(node, n, ups, a):
        nonlocal total
        y = lat.y_value(n, ups)
        if n == M:
            total += 0.5**M * np.max(a + instance.cost.g0_values(y)[0] - mu)
            return
        P = expm(chain, n * dt - T)
        a2 = a + dt * P @ (instance.cost.f0_values(y)[0] + node_lams[node])
        walk(2 * node + 1, n + 1, ups, a2)
        walk(2 * node + 2, n + 1, ups + 1, a2)

    walk(0, 0, 0, np.zeros(instance.K))
    return float(total + chain.p0 @ np.asarray(lam_static, dtype=float))


def replay_dual(instance: ProblemInstance, result: DualResult):
    """Forward replay of the optimal dual on the path tree.

    Returns ``(d, lams)``: the scalar state at every non-leaf path node and the node
    multipliers, both in heap order.  Plugging ``lams`` and ``result.static_multiplier``
    into :func:`dual_objective` reproduces ``result.value``.
    """
    if result.nodes is None:
        raise ValueError("solve the dual with keep_nodes=True to replay it")
    lat = result.lattice
    M = lat.M
    n_inner = 2**M - 1
    d = np.zeros(n_inner)
    lams = np.zeros((n_inner, 2))

    def best_shift(H, kappa, table, x):
        if table.shape[0] == 1:
            return 0, np.zeros(2)
        cand = np.concatenate((kappa.xs, H.xs - x))
        cand = cand[(cand >= kappa.lo) & (cand <= kappa.hi)]
        vals = eval_pwl(H, x + cand) + eval_pwl(kappa, cand)
        s = cand[np.argmin(vals)]
        # corners on the hull are sorted by shift; interpolate the multiplier along the edge
        k = int(np.clip(np.searchsorted(table[:, 0], s), 1, table.shape[0] - 1))
        s0, s1 = table[k - 1, 0], table[k, 0]
        w = 0.0 if s1 == s0 else (s - s0) / (s1 - s0)
        return s, (1 - w) * table[k - 1, 2:] + w * table[k, 2:]

    def walk(node, n, ups, dval):
        if n == M:
            return
        d[node] = dval
        kappa, table = result.kappas[n]
        H = _average(result.nodes[n + 1, ups + 1], result.nodes[n + 1, ups])
        x = dval + result.shifts[n][ups]
        s, lam = best_shift(H, kappa, table, x)
        lams[node] = lam
        walk(2 * node + 1, n + 1, ups, x + s)
        walk(2 * node + 2, n + 1, ups + 1, x + s)

    walk(0, 0, 0, result.d_star)
    return d, lams


# -- brute-force oracle -------------------------------------------------------------------


def _golden(f, lo, hi, tol):
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    e = a + invphi * (b - a)
    fc, fe = f(c), f(e)
    while b - a > tol:
        if fc <= fe:
            b, e, fe = e, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, e, fe
            e = a + invphi * (b - a)
            fe = f(e)
    x = 0.5 * (a + b)
    return x, f(x)


def solve_dual_bruteforce(instance: ProblemInstance, lattice: Lattice, N: float, lambda_grid: int = 5, *, tol: float = 1e-7, bracket=None):
    """Oracle for the reduced dual on ``M <= 3``.

    For each static multiplier, the adapted node multipliers are enumerated jointly over
    every path node on a ``lambda_grid``-point grid per coordinate of ``[0, N]^K`` (exact
    expectation, full vector state).  The static multiplier is found by nested golden
    section on each coordinate over ``[-B, B]``.
    """
    lat = lattice
    M, dt, T = lat.M, lat.dt, lat.T
    if M > 3:
        raise ValueError("brute-force dual limited to M <= 3")
    K = instance.K
    chain = instance.chain
    grid1 = np.linspace(0.0, N, lambda_grid) if N > 0 else np.zeros(1)
    ctrl = np.array(np.meshgrid(*([grid1] * K), indexing="ij")).reshape(K, -1).T  # (C, K)
    C = ctrl.shape[0]
    Ps = [expm(chain, n * dt - T) for n in range(M)]

    def inner(mu):
        # value(n, ups, a) with a of shape (..., K); every node adds a control axis
        def value(n, ups, a):
            y = lat.y_value(n, ups)
            if n == M:
                return np.max(a + instance.cost.g0_values(y)[0] - mu, axis=-1)
            P = Ps[n]
            step = dt * (P @ instance.cost.f0_values(y)[0] + ctrl @ P.T)  # (C, K)
            a2 = a[..., None, :] + step
            v = 0.5 * (value(n + 1, ups + 1, a2) + value(n + 1, ups, a2))
            return v.min(axis=-1)

        return float(value(0, 0, np.zeros(K)))

    PmT = expm(chain, -T)
    if bracket is None:
        ys = lat.level(M)
        gmax = np.max(np.abs(instance.cost.g0_values(ys)))
        fmax = max(np.max(np.abs(instance.cost.f0_values(lat.level(n)))) for n in range(M + 1))
        scale = np.max(np.abs(Ps)) if Ps else 1.0
        bracket = 2.0 * (gmax + T * (fmax + N * K) * scale) + 1.0
    B = float(bracket)

    def obj(lam):
        return inner(PmT @ lam) + chain.p0 @ lam

    if K == 1:
        return obj(np.zeros(1))

    def outer(l1):
        rest_lo = -B
        if K == 2:
            _, v = _golden(lambda l2: obj(np.array([l1, l2])), -B, B, tol)
            return v
        raise UnsupportedError("brute-force dual golden search implemented for K <= 2")

    _, v = _golden(outer, -B, B, tol)
    return v


def solve_dual_pathtree(instance: ProblemInstance, lattice: Lattice, N: float, *, return_multipliers: bool = False):
    """Exact oracle: the full dual on the non-recombining tree as one linear program.

    Every path node carries its own ``K``-vector multiplier in ``[0, N]^K``; the static
    multiplier is free and each leaf gets an epigraph variable for the inner max.  No state
    reduction is used, so this checks :func:`solve_dual` independently (``M <= 12``).
    With ``return_multipliers`` also returns ``(lam_static, node_lams)`` in heap order.
    """
    lat = lattice
    M, dt, T = lat.M, lat.dt, lat.T
    if M > 12:
        raise ValueError("path-tree dual LP limited to M <= 12")
    K = instance.K
    chain = instance.chain
    n_inner = 2**M - 1
    n_leaf = 2**M
    # variable layout: [lam_static (K) | node lams (n_inner*K) | t (n_leaf)]
    off_node, off_t = K, K + n_inner * K
    nv = off_t + n_leaf
    PmT = expm(chain, -T)
    Ps = [expm(chain, n * dt - T) for n in range(M)]
    rows, cols, vals, rhs = [], [], [], []
    row = 0

    def walk(node, n, ups, acc, anc):
        nonlocal row
        y = lat.y_value(n, ups)
        if n == M:
            leaf = node - n_inner
            g = instance.cost.g0_values(y)[0]
            for i in range(K):
                rows.append(row), cols.append(off_t + leaf), vals.append(-1.0)
                for k in range(K):
                    rows.append(row), cols.append(k), vals.append(-PmT[i, k])
                for a_node, a_n in anc:
                    for k in range(K):
                        rows.append(row), cols.append(off_node + a_node * K + k), vals.append(dt * Ps[a_n][i, k])
                rhs.append(-(g[i] + acc[i]))
                row += 1
            return
        acc2 = acc + dt * Ps[n] @ instance.cost.f0_values(y)[0]
        anc2 = anc + [(node, n)]
        walk(2 * node + 1, n + 1, ups, acc2, anc2)
        walk(2 * node + 2, n + 1, ups + 1, acc2, anc2)

    walk(0, 0, 0, np.zeros(K), [])
    c = np.zeros(nv)
    c[:K] = chain.p0
    c[off_t:] = 0.5**M
    bounds = [(None, None)] * K + [(0.0, float(N))] * (n_inner * K) + [(None, None)] * n_leaf
    A = sp.csr_matrix((vals, (rows, cols)), shape=(row, nv))
    res = scipy.optimize.linprog(c, A_ub=A, b_ub=np.array(rhs), bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"path-tree dual LP failed: {res.message}")
    if return_multipliers:
        return float(res.fun), res.x[:K], res.x[off_node:off_t].reshape(n_inner, K)
    return float(res.fun)


# -- terminal-constraint report ------------------------------------------------------------


@dataclass
class ConstraintReport:
    """Slack of ``p_n = E[p_T | n] P(t_n - T) >= 0`` per node and the root residual."""

    min_slack: float
    slacks: list  # per depth: array (nodes, K) of p_n
    residual: float

    @property
    def ok(self) -> bool:
        return self.min_slack >= -1e-10 and self.residual <= 1e-10


def check_terminal_constraints(pT, instance: ProblemInstance, lattice: Lattice, p0=None) -> ConstraintReport:
    """Propagate candidate terminal filters back through the tree.

    ``pT`` has shape ``(M+1, K)`` (one per recombining leaf ``j``) or ``(2**M, K)`` (one per
    path, leaf ``k`` having ``popcount(k)`` up-moves with bit ``n`` the move at depth ``n``
    read from the most significant end).
    """
    lat = lattice
    M = lat.M
    chain = instance.chain
    p0 = chain.p0 if p0 is None else np.asarray(p0, dtype=float)
    pT = np.asarray(pT, dtype=float)
    slacks = [None] * (M + 1)
    if pT.shape[0] == M + 1 and M + 1 != 2**M or M == 0:
        cur = pT
        for n in range(M, -1, -1):
            slacks[n] = cur @ expm(chain, n * lat.dt - lat.T)
            if n:
                cur = 0.5 * (cur[1:] + cur[:-1])
    elif pT.shape[0] == 2**M:
        cur = pT
        for n in range(M, -1, -1):
            slacks[n] = cur @ expm(chain, n * lat.dt - lat.T)
            if n:
                cur = 0.5 * (cur[0::2] + cur[1::2])
    else:
        raise ValueError(f"pT must have M+1 = {M + 1} or 2**M = {2**M} rows")
    root = slacks[0][0]
    return ConstraintReport(
        min_slack=float(min(s.min() for s in slacks)),
        slacks=slacks,
        residual=float(np.max(np.abs(root - p0))),
    )
