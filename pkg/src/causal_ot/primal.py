"""Lower bounds: the truncated filter-control problem on the binomial lattice.

The filter's first coordinate ``q`` moves from a node to its children as ``q+ = m(q) + delta``,
``q- = m(q) - delta`` where ``m`` is the chain's one-step conditional mean and
``|delta| <= N*sqrt(dt)``; both children must stay in ``[0, 1]``.  The node value is
concave piecewise linear in ``q`` and is propagated exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np
import scipy.optimize
import scipy.sparse as sp

from .chain import expm
from .instance import ProblemInstance
from .lattice import Lattice, UnsupportedError, drift_map
from .pwl import CONCAVE, PwlFn, affine_compose, add, simplify, window_argmax, windowed_pair_max

__all__ = [
    "PrimalResult",
    "ResolutionError",
    "solve_primal",
    "solve_primal_grid",
    "solve_primal_pathtree",
    "uncontrolled_vertex_value",
    "replay_primal",
]


class ResolutionError(ValueError):
    """Grid too coarse for the requested control window."""


@dataclass
class PrimalResult:
    value_at: PwlFn
    value: float
    N: float
    M: int
    lattice: Lattice | None = None
    nodes: dict | None = field(default=None, repr=False)  # (n, j) -> PwlFn when kept
    radius: float = 0.0
    drift: object = None
    p0: float = 0.5

    def delta(self, n: int, j: int, q):
        """Optimal half-spread ``delta`` at node ``(n, j)`` for filter value(s) ``q``."""
        if self.nodes is None:
            raise ValueError("node value functions were not kept; solve with keep_nodes=True")
        m = self.drift(q)
        return window_argmax(self.nodes[n + 1, j + 1], self.nodes[n + 1, j], self.radius, (0.0, 1.0), m)

    def children(self, n: int, j: int, q):
        """``(q_up, q_down)`` under the optimal policy."""
        m = self.drift(q)
        d = self.delta(n, j, q)
        return np.clip(m + d, 0.0, 1.0), np.clip(m - d, 0.0, 1.0)


def _check_two_state(instance):
    if instance.K != 2:
        raise UnsupportedError("exact PL primal handles K = 2; use solve_primal_grid for K = 3")


def _running(instance, lat, n):
    """Per-node running-cost weights ``dt*f0(i, y)``, shape (n+1, K)."""
    return lat.dt * instance.cost.f0_values(lat.level(n))


def solve_primal(
    instance: ProblemInstance, lattice: Lattice, N: float, *, keep_nodes: bool = False, simplify_eps: float = 0.0
) -> PrimalResult:
    """Exact backward induction; the root function is evaluated at ``p0[0]``.

    ``simplify_eps > 0`` thins every node function to within that tolerance by dropping
    vertices.  The thinned concave function lies below the exact one and the recursion is
    monotone, so the root is still a lower bound, at most ``M * simplify_eps`` below the
    exact value.  Useful for small ``N`` on long lattices, where the breakpoint count of a
    frozen chain grows quickly.
    """
    _check_two_state(instance)
    if N < 0:
        raise ValueError("truncation level N must be non-negative")
    lat = lattice
    M = lat.M
    r = float(N) * np.sqrt(lat.dt)
    dm = drift_map(instance.chain, lat.dt)
    run = instance.cost.has_running_cost
    G = instance.cost.g0_values(lat.level(M))
    level = [PwlFn(CONCAVE, [0.0, 1.0], [g[1], g[0]]) for g in G]
    nodes = {}
    if keep_nodes:
        nodes.update({(M, j): f for j, f in enumerate(level)})
    lo_m, hi_m = sorted((dm.alpha, dm.alpha + dm.beta))
    for n in range(M - 1, -1, -1):
        F = _running(instance, lat, n) if run else None
        new = []
        for j in range(n + 1):
            g = windowed_pair_max(level[j + 1], level[j], r, (0.0, 1.0), domain=(lo_m, hi_m))
            if dm.beta == 1.0 and dm.alpha == 0.0:
                v = g  # frozen chain: identity drift
            elif dm.beta == 0.0:
                v = PwlFn.linear(CONCAVE, 0.0, g(dm.alpha), 0.0, 1.0)
            else:
                v = affine_compose(g, dm.beta, dm.alpha, domain=(0.0, 1.0))
            if run:
                f1, f2 = F[j, 0], F[j, 1]
                v = add(v, PwlFn.linear(CONCAVE, f1 - f2, f2, 0.0, 1.0))
            if simplify_eps > 0:
                v = simplify(v, simplify_eps)
            new.append(v)
        level = new
        if keep_nodes:
            nodes.update({(n, j): f for j, f in enumerate(level)})
    root = level[0]
    return PrimalResult(
        value_at=root,
        value=float(root(instance.chain.p0[0])),
        N=float(N),
        M=M,
        lattice=lat,
        nodes=nodes if keep_nodes else None,
        radius=r,
        drift=dm,
        p0=float(instance.chain.p0[0]),
    )


def replay_primal(result: PrimalResult) -> np.ndarray:
    """Forward replay of the optimal policy on the path tree.

    Returns filter values ``(q, 1 - q)`` at every path node in heap order (children of
    ``k`` are ``2k+1`` (down) and ``2k+2`` (up)), shape ``(2**(M+1) - 1, 2)``.
    """
    M = result.M
    q = np.empty(2 ** (M + 1) - 1)
    level = np.array([float(result.p0)])
    q[0] = level[0]
    ups = np.zeros(1, dtype=int)
    for n in range(M):
        nxt = np.empty(2 * level.size)
        nups = np.empty(2 * level.size, dtype=int)
        for k, (qq, j) in enumerate(zip(level, ups)):
            qu, qd = result.children(n, int(j), qq)
            nxt[2 * k], nxt[2 * k + 1] = qd, qu
            nups[2 * k], nups[2 * k + 1] = j, j + 1
        q[2 ** (n + 1) - 1 : 2 ** (n + 2) - 1] = nxt
        level, ups = nxt, nups
    return np.column_stack((q, 1.0 - q))


def uncontrolled_vertex_value(instance: ProblemInstance, lattice: Lattice, n: int, j: int, state: int) -> float:
    """Value at node ``(n, j)`` of the uncontrolled filter ``p_s = e_i P(s - t_n)``.

    Computed by forward marginal propagation and a plain lattice expectation.  It equals the
    ``N = 0`` value at the vertex; for ``N > 0`` it is only a lower bound, since the drifted
    mean leaves the vertex after one step and the children may then spread.
    """
    lat = lattice
    e = np.zeros(instance.K)
    e[state] = 1.0
    total = 0.0
    from scipy.stats import binom

    for k in range(n, lat.M + 1):
        steps = k - n
        ys = lat.y_value(k, j + np.arange(steps + 1))
        w = binom.pmf(np.arange(steps + 1), steps, 0.5)
        p = e @ expm(instance.chain, steps * lat.dt)
        if k == lat.M:
            total += w @ (instance.cost.g0_values(ys) @ p)
        else:
            total += lat.dt * (w @ (instance.cost.f0_values(ys) @ p))
    return float(total)


# -- grid oracle -----------------------------------------------------------------------------


def _grid_level_k2(Vu, Vd, qs, m, r, h):
    """max over delta = k*h, |delta| <= min(r, m, 1-m), of (Vu(m+delta) + Vd(m-delta))/2.

    Exhaustive in k: the pointwise max over a finite delta set is not concave in m, so
    interpolated values are not concave in k either and a bisection can stall.
    """
    R = np.minimum(r, np.minimum(m, 1.0 - m))
    kmax = np.floor(R / h + 1e-9).astype(int)
    best = 0.5 * (np.interp(m, qs, Vu) + np.interp(m, qs, Vd))
    for k in range(1, int(kmax.max()) + 1):
        ok = kmax >= k
        mm = m[ok]
        d = k * h
        a = 0.5 * (np.interp(mm + d, qs, Vu) + np.interp(mm - d, qs, Vd))
        b = 0.5 * (np.interp(mm - d, qs, Vu) + np.interp(mm + d, qs, Vd))
        best[ok] = np.maximum(best[ok], np.maximum(a, b))
    return best


def _simplex_grid(G):
    """Points ``(i/G, j/G, 1 - (i+j)/G)`` with ``i + j <= G``, as integer pairs and coordinates."""
    ij = np.array([(i, j) for i in range(G + 1) for j in range(G + 1 - i)])
    return ij, np.column_stack((ij / G, 1.0 - ij.sum(axis=1) / G))


def _interp_simplex(V, G, pts):
    """Piecewise-linear interpolation of grid values ``V`` (dict-indexed array) at simplex points."""
    x = np.clip(pts[:, 0] * G, 0.0, G)
    y = np.clip(pts[:, 1] * G, 0.0, G)
    i = np.minimum(np.floor(x).astype(int), G)
    j = np.minimum(np.floor(y).astype(int), G - i)
    fx = x - i
    fy = y - j
    # lower triangle (i,j),(i+1,j),(i,j+1) when fx+fy<=1 else upper (i+1,j+1),(i+1,j),(i,j+1)
    lower = fx + fy <= 1.0 + 1e-12
    i1 = np.minimum(i + 1, G)
    j1 = np.minimum(j + 1, G)

    def val(a, b):
        b = np.minimum(b, G - a)
        return V[a, b]

    v_low = (1 - fx - fy) * val(i, j) + fx * val(i1, j) + fy * val(i, j1)
    v_up = (fx + fy - 1) * val(i1, j1) + (1 - fy) * val(i1, j) + (1 - fx) * val(i, j1)
    return np.where(lower, v_low, v_up)


def solve_primal_grid(instance: ProblemInstance, lattice: Lattice, N: float, q_grid_size: int) -> PrimalResult:
    """Tabulated oracle: value functions on a filter grid with linear interpolation.

    K = 2 uses ``q_grid_size`` points on ``[0, 1]`` and a ``delta`` grid of the same step.
    K = 3 uses the triangular grid with ``q_grid_size`` points per edge and per-coordinate
    ``|delta_i| <= N*sqrt(dt)``, ``sum(delta) = 0``, enumerated on the grid lattice.
    """
    lat = lattice
    r = float(N) * np.sqrt(lat.dt)
    P = expm(instance.chain, lat.dt)
    K = instance.K
    if K == 2:
        qs = np.linspace(0.0, 1.0, q_grid_size)
        h = qs[1] - qs[0]
        if r > 0 and min(r, 0.5) < h:
            raise ResolutionError(f"delta grid step {h:.3g} exceeds the window {r:.3g}: fewer than 3 delta points")
        m = qs * P[0, 0] + (1 - qs) * P[1, 0]
        G = instance.cost.g0_values(lat.level(lat.M))
        V = [g[1] + (g[0] - g[1]) * qs for g in G]
        for n in range(lat.M - 1, -1, -1):
            F = _running(instance, lat, n)
            V = [
                (F[j, 1] + (F[j, 0] - F[j, 1]) * qs) + _grid_level_k2(V[j + 1], V[j], qs, m, r, h)
                for j in range(n + 1)
            ]
        root = PwlFn(CONCAVE, qs, V[0], _canon=False)
        return PrimalResult(root, float(np.interp(instance.chain.p0[0], qs, V[0])), float(N), lat.M, lat, radius=r)
    if K == 3:
        Gs = q_grid_size - 1
        ij, pts = _simplex_grid(Gs)
        h = 1.0 / Gs
        kmax = int(np.floor(r / h + 1e-9))
        if r > 0 and kmax < 1:
            raise ResolutionError("simplex grid too coarse for the control window")
        shifts = np.array(
            [(a, b, -a - b) for a in range(-kmax, kmax + 1) for b in range(-kmax, kmax + 1) if abs(a + b) <= kmax],
            dtype=float,
        ) * h
        mean = pts @ P

        def table(vals):
            T = np.full((Gs + 1, Gs + 1), np.nan)
            T[ij[:, 0], ij[:, 1]] = vals
            return T

        V = [table(pts @ g) for g in instance.cost.g0_values(lat.level(lat.M))]
        tol = 1e-12
        for n in range(lat.M - 1, -1, -1):
            F = _running(instance, lat, n)
            new = []
            for j in range(n + 1):
                best = np.full(len(pts), -np.inf)
                for d in shifts:
                    up = mean + d
                    dn = mean - d
                    ok = (up.min(axis=1) >= -tol) & (dn.min(axis=1) >= -tol)
                    if not ok.any():
                        continue
                    val = 0.5 * (_interp_simplex(V[j + 1], Gs, up) + _interp_simplex(V[j], Gs, dn))
                    best = np.where(ok, np.maximum(best, val), best)
                new.append(table(pts @ F[j] + best))
            V = new
        p0 = instance.chain.p0
        value = float(_interp_simplex(V[0], Gs, p0[None, :])[0])
        return PrimalResult(None, value, float(N), lat.M, lat, radius=r)
    raise UnsupportedError("grid primal supports K in {2, 3}")


# -- path-tree oracle ----------------------------------------------------------------------


def _pathtree_lp(instance, lattice, N):
    """Linear program over filter values at every node of the non-recombining tree."""
    lat = lattice
    M = lat.M
    K = instance.K
    r = float(N) * np.sqrt(lat.dt)
    P = expm(instance.chain, lat.dt)
    n_nodes = 2 ** (M + 1) - 1
    nv = n_nodes * K

    def var(node, i):
        return node * K + i

    c = np.zeros(nv)
    eq_r, eq_c, eq_v, beq = [], [], [], []
    ub_r, ub_c, ub_v = [], [], []
    row = 0
    urow = 0
    # root: q = p0; every node on the simplex
    for i in range(K):
        eq_r.append(row), eq_c.append(var(0, i)), eq_v.append(1.0), beq.append(instance.chain.p0[i])
        row += 1
    for n in range(M + 1):
        base = 2**n - 1
        ks = np.arange(2**n)
        ups = np.array([bin(k).count("1") for k in ks])
        ys = lat.y_value(n, ups)
        w = 0.5**n
        coef = instance.cost.g0_values(ys) if n == M else lat.dt * instance.cost.f0_values(ys)
        for k in ks:
            node = base + k
            for i in range(K):
                c[var(node, i)] -= w * coef[k, i]
            if n > 0:
                eq_r.extend([row] * K), eq_c.extend(var(node, i) for i in range(K)), eq_v.extend([1.0] * K)
                beq.append(1.0)
                row += 1
            if n == M:
                continue
            dn = 2 ** (n + 1) - 1 + 2 * k
            up = dn + 1
            for i in range(K):
                # (q_up + q_dn)/2 = (q P)_i
                eq_r.extend([row, row]), eq_c.extend([var(up, i), var(dn, i)]), eq_v.extend([0.5, 0.5])
                for l in range(K):
                    eq_r.append(row), eq_c.append(var(node, l)), eq_v.append(-P[l, i])
                beq.append(0.0)
                row += 1
                if np.isfinite(r):
                    for sgn in (1.0, -1.0):
                        ub_r.extend([urow, urow]), ub_c.extend([var(up, i), var(dn, i)]), ub_v.extend([sgn, -sgn])
                        urow += 1
    A_eq = sp.csr_matrix((eq_v, (eq_r, eq_c)), shape=(row, nv))
    A_ub = sp.csr_matrix((ub_v, (ub_r, ub_c)), shape=(urow, nv)) if urow else None
    b_ub = np.full(urow, 2 * r) if urow else None
    res = scipy.optimize.linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=np.array(beq), bounds=(0.0, 1.0), method="highs")
    if res.status != 0:
        raise RuntimeError(f"path-tree LP failed: {res.message}")
    return -res.fun, res.x.reshape(n_nodes, K)


def _pathtree_grid(instance, lattice, N, q_grid, delta_grid):
    """Exhaustive recursion on the path tree for K = 2 with tabulated values per path node."""
    lat = lattice
    M = lat.M
    r = float(N) * np.sqrt(lat.dt)
    dm = drift_map(instance.chain, lat.dt)
    qs = np.linspace(0.0, 1.0, q_grid)

    def node_value(n, ups):
        y = lat.y_value(n, ups)
        if n == M:
            g = instance.cost.g0_values(y)[0]
            return g[1] + (g[0] - g[1]) * qs
        Vu = node_value(n + 1, ups + 1)
        Vd = node_value(n + 1, ups)
        m = dm(qs)
        R = np.minimum(r, np.minimum(m, 1 - m))
        ds = np.linspace(-1.0, 1.0, delta_grid)[None, :] * R[:, None]
        val = 0.5 * (np.interp(m[:, None] + ds, qs, Vu) + np.interp(m[:, None] - ds, qs, Vd))
        f = lat.dt * instance.cost.f0_values(y)[0]
        return f[1] + (f[0] - f[1]) * qs + val.max(axis=1)

    return float(np.interp(instance.chain.p0[0], qs, node_value(0, 0)))


def solve_primal_pathtree(instance: ProblemInstance, lattice: Lattice, N: float, q_grid=None, delta_grid=None, *, return_policy=False):
    """Brute-force oracle on the non-recombining tree (``M <= 4`` for the grid mode).

    Without grids, solves the tree program exactly as a linear program in which every path
    node carries its own filter value (so path-dependent controls are allowed); any ``K``.
    With ``q_grid``/``delta_grid`` (K = 2), enumerates the controls per path node instead.
    ``return_policy`` also returns the node filter values, shape ``(2**(M+1) - 1, K)``, in
    heap order (children of node ``k`` are ``2k+1`` (down) and ``2k+2`` (up)).
    """
    if q_grid is None:
        if lattice.M > 12:
            raise ValueError("path-tree LP limited to M <= 12")
        value, q = _pathtree_lp(instance, lattice, N)
        return (value, q) if return_policy else value
    if lattice.M > 4:
        raise ValueError("path-tree grid enumeration limited to M <= 4")
    _check_two_state(instance)
    return _pathtree_grid(instance, lattice, N, q_grid, delta_grid or q_grid)
