"""Explicit finite differences for the truncated filter-control HJB and the follower problems.

Truncated HJB (two states, scalar target).  With ``q`` the first filter coordinate,
``dq = beta dt + z dW`` and ``dY = b dt + sigma dW`` share the Brownian motion, so

    V_t + beta V_q + b V_y + sigma^2/2 V_yy + max_{|z| <= N} (z^2/2 V_qq + z sigma V_qy) + f = 0,

with ``beta = q Lambda_11 + (1 - q) Lambda_21``.  On ``q in {0, 1}`` only ``z = 0`` is
admissible and the one-sided transport term points into the interval.  The ``z``-maximum
of the quadratic is taken in closed form.

Followers.  ``w(t, z)`` solves a backward heat equation under gradient constraints; each
time step is a heat step followed by projection sweeps that lower ``w`` until every
discrete slope lies within the bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .instance import ProblemInstance
from .lattice import UnsupportedError

__all__ = [
    "CFLError",
    "HjbGrid",
    "FollowerGrid",
    "solve_truncated_hjb",
    "hjb_cfl_dt",
    "solve_follower_onesided",
    "solve_follower_twosided",
    "value_from_follower",
    "twosided_bounds",
    "dump_hjb_csv",
    "dump_follower_csv",
]

C_STAB = 0.45


class CFLError(ValueError):
    """Time step too large for the explicit scheme."""

    def __init__(self, message, required_steps):
        super().__init__(message)
        self.required_steps = required_steps


@dataclass
class HjbGrid:
    t: np.ndarray  # stored time levels
    y: np.ndarray
    p: np.ndarray
    V: np.ndarray  # (len(t), n_y, n_p)
    N: float
    n_steps: int
    cfl_ratio: float
    concavity_violation: float  # max positive second difference in p over stored slices
    diagnostics: dict = field(default_factory=dict)

    def value(self, y0: float, p0: float, k: int = 0) -> float:
        """Bilinear interpolation of stored slice ``k`` (default ``t = 0``)."""
        V = self.V[k]
        iy = int(np.clip(np.searchsorted(self.y, y0) - 1, 0, self.y.size - 2))
        ip = int(np.clip(np.searchsorted(self.p, p0) - 1, 0, self.p.size - 2))
        fy = (y0 - self.y[iy]) / (self.y[iy + 1] - self.y[iy])
        fp = (p0 - self.p[ip]) / (self.p[ip + 1] - self.p[ip])
        return float(
            (1 - fy) * (1 - fp) * V[iy, ip] + fy * (1 - fp) * V[iy + 1, ip] + (1 - fy) * fp * V[iy, ip + 1] + fy * fp * V[iy + 1, ip + 1]
        )


def hjb_cfl_dt(dy: float, dp: float, sigma: float, N: float) -> float:
    """Largest stable step ``C_STAB * min(dy^2/sigma^2, dp^2/N^2, dp dy/(N sigma))``."""
    cands = [dy * dy / (sigma * sigma)]
    if N > 0:
        cands += [dp * dp / (N * N), dp * dy / (N * sigma)]
    return C_STAB * min(cands)


def solve_truncated_hjb(
    instance: ProblemInstance,
    N: float,
    grids=(None, 161, 81),
    y_domain=None,
    *,
    store_every: int | None = None,
) -> HjbGrid:
    """Backward explicit scheme on a uniform ``(y, p)`` grid.

    ``grids = (n_t, n_y, n_p)``.  ``n_t=None`` picks the smallest step count meeting the stability bound; an explicit
    ``n_t`` that violates it raises :class:`CFLError` carrying the required count.
    """
    if instance.K != 2 or instance.diffusion.dim != 1:
        raise UnsupportedError("the HJB solver handles two states and a scalar target")
    n_t, n_y, n_p = grids
    if n_y < 4 or n_p < 3:
        raise ValueError("need at least 4 y nodes and 3 p nodes")
    if N < 0:
        raise ValueError("truncation N must be non-negative")
    diff, cost, chain = instance.diffusion, instance.cost, instance.chain
    T = diff.T
    y0 = float(diff.y0_atoms[0][0][0])
    if y_domain is None:
        s0 = float(np.abs(diff.vol(0.0, np.array([y0]))).max())
        y_domain = (y0 - 5 * s0 * np.sqrt(T), y0 + 5 * s0 * np.sqrt(T))
    y = np.linspace(*y_domain, n_y)
    p = np.linspace(0.0, 1.0, n_p)
    dy, dp = y[1] - y[0], p[1] - p[0]
    Y, P = np.meshgrid(y, p, indexing="ij")
    yy = y.reshape(-1, 1)

    def coeffs(t):
        b = diff.drift(t, yy).reshape(-1)[:, None]
        sg = diff.vol(t, yy).reshape(-1)[:, None]
        return np.broadcast_to(b, Y.shape), np.broadcast_to(sg, Y.shape)

    sig_max = max(float(np.abs(diff.vol(t, yy)).max()) for t in (0.0, 0.5 * T, T))
    dt_max = hjb_cfl_dt(dy, dp, sig_max, N)
    need = int(np.ceil(T / dt_max))
    if n_t is None:
        n_t = need
    elif n_t < need:
        raise CFLError(f"n_t={n_t} violates the stability bound; need n_t >= {need} (dt <= {dt_max:.3g})", need)
    dt = T / n_t
    if store_every is None:
        store_every = max(1, n_t // 50)

    lam = chain.lam
    beta = P * lam[0, 0] + (1 - P) * lam[1, 0]
    G = cost.g0_values(y)
    V = P * G[:, [0]] + (1 - P) * G[:, [1]]
    has_f = cost.has_running_cost
    stored_t = [T]
    stored = [V.copy()]
    conc = 0.0
    N2 = N * N
    for k in range(n_t - 1, -1, -1):
        t = k * dt
        b, sg = coeffs(t)
        Vp_f = np.zeros_like(V)
        Vp_b = np.zeros_like(V)
        Vp_f[:, :-1] = (V[:, 1:] - V[:, :-1]) / dp
        Vp_b[:, 1:] = (V[:, 1:] - V[:, :-1]) / dp
        drift_p = np.where(beta > 0, beta * Vp_f, beta * Vp_b)
        Vy_f = np.zeros_like(V)
        Vy_b = np.zeros_like(V)
        Vy_f[:-1] = (V[1:] - V[:-1]) / dy
        Vy_b[1:] = (V[1:] - V[:-1]) / dy
        drift_y = np.where(b > 0, b * Vy_f, b * Vy_b)
        Vyy = np.zeros_like(V)
        Vyy[1:-1] = (V[2:] - 2 * V[1:-1] + V[:-2]) / (dy * dy)
        L = drift_p + drift_y + 0.5 * sg * sg * Vyy
        if N > 0:
            Vpp = np.zeros_like(V)
            Vpp[:, 1:-1] = (V[:, 2:] - 2 * V[:, 1:-1] + V[:, :-2]) / (dp * dp)
            Vpy = np.zeros_like(V)
            Vpy[1:-1, 1:-1] = (V[2:, 2:] - V[2:, :-2] - V[:-2, 2:] + V[:-2, :-2]) / (4 * dp * dy)
            A = 0.5 * Vpp
            B = sg * Vpy
            zs = np.clip(np.where(A < 0, -B / (2 * np.where(A < 0, A, -1.0)), np.sign(B) * N), -N, N)
            ham = np.maximum(A * zs * zs + B * zs, np.maximum(A * N2 + B * N, A * N2 - B * N))
            ham = np.where(A < 0, A * zs * zs + B * zs, ham)
            ham[:, 0] = 0.0
            ham[:, -1] = 0.0
            L = L + ham
        if has_f:
            F = cost.f0_values(y)
            L = L + P * F[:, [0]] + (1 - P) * F[:, [1]]
        V = V + dt * L
        # linear extrapolation in y
        V[0] = 2 * V[1] - V[2]
        V[-1] = 2 * V[-2] - V[-3]
        if k % store_every == 0 or k == 0:
            stored_t.append(t)
            stored.append(V.copy())
            if n_p > 2:
                conc = max(conc, float((V[:, 2:] - 2 * V[:, 1:-1] + V[:, :-2]).max()))
        if not np.all(np.isfinite(V)):
            raise FloatingPointError(f"non-finite HJB values at step {k}")
    order = np.argsort(stored_t)
    return HjbGrid(
        t=np.array(stored_t)[order],
        y=y,
        p=p,
        V=np.array(stored)[order],
        N=float(N),
        n_steps=n_t,
        cfl_ratio=dt / dt_max * C_STAB,
        concavity_violation=conc,
        diagnostics={"dt": dt, "dt_max": dt_max},
    )


# -- followers -------------------------------------------------------------------------------


@dataclass
class FollowerGrid:
    t: np.ndarray
    z: np.ndarray
    w: np.ndarray  # (n_t + 1, n_z)
    boundary: np.ndarray  # b(t): edge of the region where no projection was needed
    kind: str  # "one-sided" | "two-sided"
    a: float
    b: float = 0.0
    upper: np.ndarray | None = None  # slope bounds per time level
    lower: np.ndarray | None = None
    scale: float = 1.0  # w stored as scale * (heat-constrained function)
    diagnostics: dict = field(default_factory=dict)


def _follower_grid(T, n_t, n_z, z_domain):
    z = np.linspace(*z_domain, n_z)
    dz = z[1] - z[0]
    dt_max = C_STAB * dz * dz
    need = int(np.ceil(T / dt_max))
    if n_t is None:
        n_t = need
    elif n_t < need:
        raise CFLError(f"n_t={n_t} violates the stability bound; need n_t >= {need}", need)
    return z, dz, n_t, T / n_t


def _heat_step(w, dt, dz):
    out = w.copy()
    out[1:-1] += 0.5 * dt * (w[2:] - 2 * w[1:-1] + w[:-2]) / (dz * dz)
    out[0] = 2 * out[1] - out[2]
    out[-1] = 2 * out[-2] - out[-3]
    return out


def _project(w, dz, upper, lower=None, max_rounds=50):
    """Largest function below ``w`` with discrete slopes in ``[lower, upper]``.

    Returns the projected array and a mask of nodes lowered by the upper bound.
    """
    w = w.copy()
    hit_up = np.zeros(w.size, dtype=bool)
    for _ in range(max_rounds):
        changed = False
        # slope <= upper: sweep left to right
        cap = np.minimum.accumulate(w - upper * np.arange(w.size) * dz) + upper * np.arange(w.size) * dz
        if np.any(cap < w):
            hit_up |= cap < w - 1e-15
            w = cap
            changed = True
        if lower is not None:
            # slope >= lower: w_i <= w_{i+1} - lower dz, sweep right to left
            idx = np.arange(w.size) * dz
            cap = (np.minimum.accumulate((w - lower * idx)[::-1]))[::-1] + lower * idx
            if np.any(cap < w):
                w = cap
                changed = True
        if not changed:
            break
    return w, hit_up


def solve_follower_onesided(a: float, T: float = 1.0, n_z: int = 401, n_t: int | None = None, z_domain=None) -> FollowerGrid:
    """``w_z <= exp(-a (T - t))`` with ``w(T, z) = max(z, 0)``."""
    if a <= 0:
        raise ValueError("rate a must be positive")
    if z_domain is None:
        z_domain = (-6.0 * np.sqrt(T), 6.0 * np.sqrt(T))
    z, dz, n_t, dt = _follower_grid(T, n_t, n_z, z_domain)
    ts = np.linspace(0.0, T, n_t + 1)
    W = np.empty((n_t + 1, n_z))
    W[-1] = np.maximum(z, 0.0)
    bnd = np.empty(n_t + 1)
    bnd[-1] = 0.0
    kap = np.exp(-a * (T - ts))
    for k in range(n_t - 1, -1, -1):
        w = _heat_step(W[k + 1], dt, dz)
        w, active = _project(w, dz, kap[k])
        W[k] = w
        bnd[k] = _boundary(z, active)
    return FollowerGrid(ts, z, W, bnd, "one-sided", a, upper=kap, scale=1.0)


def _boundary(z, active):
    """Largest ``z`` such that no node at or left of it was projected."""
    if not active.any():
        return float(z[-1])
    first = int(np.argmax(active))
    return float(z[max(first - 1, 0)])


def twosided_bounds(a: float, b: float, tau, literal: bool = False):
    """Slope bounds ``(lower, upper)`` for the scaled follower at remaining time ``tau``.

    Default: keeping ``(M, 1 - M) P(-tau) >= 0`` gives
    ``b (1 - e^{-c tau}) / c <= w_z <= (b + a e^{-c tau}) / c`` with ``c = a + b``.
    ``literal=True`` uses ``-(1 - e^{-c tau}) e^{-2 b tau} <= w_z <= (1 - e^{-c tau}) e^{-2 a tau}``.
    """
    c = a + b
    tau = np.asarray(tau, dtype=float)
    e = np.exp(-c * tau)
    if literal:
        return -(1 - e) * np.exp(-2 * b * tau), (1 - e) * np.exp(-2 * a * tau)
    return b * (1 - e) / c, (b + a * e) / c


def solve_follower_twosided(
    a: float,
    b: float,
    T: float = 1.0,
    n_z: int = 401,
    n_t: int | None = None,
    z_domain=None,
    *,
    bounds: str = "derived",
) -> FollowerGrid:
    """Two-sided gradient-constrained follower for the irreducible two-state chain.

    Stores ``w = 2 w~`` where ``w~(T, z) = max(z, 0)`` and ``lower <= w~_z <= upper``.  The
    terminal slice is never projected.  ``bounds="literal"`` selects the alternative
    bounds of :func:`twosided_bounds` (which collapse to zero at ``t = T``).
    """
    if a <= 0 or b <= 0:
        raise ValueError("rates a, b must be positive")
    if bounds not in ("derived", "literal"):
        raise ValueError("bounds must be 'derived' or 'literal'")
    if z_domain is None:
        z_domain = (-6.0 * np.sqrt(T), 6.0 * np.sqrt(T))
    z, dz, n_t, dt = _follower_grid(T, n_t, n_z, z_domain)
    ts = np.linspace(0.0, T, n_t + 1)
    lo, up = twosided_bounds(a, b, T - ts, literal=bounds == "literal")
    lo = np.broadcast_to(lo, ts.shape).copy()
    up = np.broadcast_to(up, ts.shape).copy()
    W = np.empty((n_t + 1, n_z))
    W[-1] = np.maximum(z, 0.0)
    bnd = np.empty(n_t + 1)
    bnd[-1] = 0.0
    for k in range(n_t - 1, -1, -1):
        w = _heat_step(W[k + 1], dt, dz)
        w, active = _project(w, dz, up[k], lo[k])
        W[k] = w
        bnd[k] = _boundary(z, active)
    return FollowerGrid(ts, z, 2.0 * W, bnd, "two-sided", a, b, upper=up, lower=lo, scale=2.0, diagnostics={"bounds": bounds})


def value_from_follower(fg: FollowerGrid, t: float, y: float, p: float) -> float:
    """Transport value recovered from a follower grid at time ``t``.

    One-sided: ``min_z w(t, z) + p e^{-a tau} (y - z)``.
    Two-sided: ``min_z w(t, z) + 2 M_t (y - z) - y`` with
    ``M_t = b/c + e^{-c tau} (p - b/c)``.
    """
    k = int(np.argmin(np.abs(fg.t - t)))
    tau = fg.t[-1] - fg.t[k]
    w = fg.w[k]
    if fg.kind == "one-sided":
        return float(np.min(w + p * np.exp(-fg.a * tau) * (y - fg.z)))
    c = fg.a + fg.b
    Mt = fg.b / c + np.exp(-c * tau) * (p - fg.b / c)
    return float(np.min(w + 2 * Mt * (y - fg.z)) - y)


def _fmt(x) -> str:
    return repr(float(x))


def dump_hjb_csv(grid: HjbGrid, path, header_lines=()) -> None:
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("t,y,p,V\n")
        for k, t in enumerate(grid.t):
            for i, yv in enumerate(grid.y):
                for j, pv in enumerate(grid.p):
                    fh.write(f"{_fmt(t)},{_fmt(yv)},{_fmt(pv)},{_fmt(grid.V[k, i, j])}\n")


def dump_follower_csv(fg: FollowerGrid, path, header_lines=(), every: int = 1) -> None:
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("t,z,w,b\n")
        for k in range(0, fg.t.size, every):
            for i, zv in enumerate(fg.z):
                fh.write(f"{_fmt(fg.t[k])},{_fmt(zv)},{_fmt(fg.w[k, i])},{_fmt(fg.boundary[k])}\n")
