"""Monte Carlo for the controlled filter ``(Y, p)`` in innovation form.

Under the target law, ``dY = b dt + sigma dW`` and each filter coordinate moves as

    dp_i = (p Lambda)_i dt + p_i h_i' sigma^{-1} dW,

where the feedback ``h(t, y, p)`` (one ``d``-vector per state) is first projected onto
``sum_i p_i h_i = 0``.  Costs are accumulated on the fly with left-endpoint quadrature.
Each path draws from its own counter-based (Philox) stream keyed by the path index, so a
batch does not depend on chunking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .chain import ChainSpec, expm
from .instance import CostSpec, ProblemInstance

__all__ = [
    "SimulationError",
    "FilterPathBatch",
    "MartingaleReport",
    "simulate",
    "martingale_check",
    "estimate_cost",
    "lattice_policy_control",
    "random_bounded_control",
    "dump_paths_csv",
]

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


@dataclass
class FilterPathBatch:
    times: np.ndarray  # (n_rec,)
    Y: np.ndarray  # (n_paths, n_rec, d)
    P: np.ndarray  # (n_paths, n_rec, K)
    clamped_mass: np.ndarray  # (n_paths,) total mass removed by clamping
    running_cost: np.ndarray  # (n_paths,)
    terminal_cost: np.ndarray  # (n_paths,)
    zero_mean_residual: float
    seed: int
    dt_sim: float
    T: float
    p0: np.ndarray
    cost: CostSpec | None = None
    control_label: str = "zero"
    record_every: int = 1
    X: np.ndarray | None = None  # (n_paths, n_rec) hidden states in joint mode

    @property
    def n_paths(self) -> int:
        return self.P.shape[0]


def _path_normals(seed, start, count, n_steps, d, joint):
    Z = np.empty((count, n_steps, d))
    U = np.empty((count, n_steps)) if joint else None
    for k in range(count):
        ss = np.random.SeedSequence(seed, spawn_key=(start + k,))
        g = np.random.Generator(np.random.Philox(ss))
        Z[k] = g.standard_normal((n_steps, d))
        if joint:
            U[k] = g.random(n_steps)
    return Z, U


def simulate(
    instance: ProblemInstance,
    control=None,
    n_paths: int = 1000,
    n_steps: int = 1000,
    seed: int = 0,
    *,
    record_every: int = 1,
    control_bound: float | None = None,
    joint: bool = False,
    p_init=None,
    chunk: int = 4096,
    control_label: str | None = None,
) -> FilterPathBatch:
    """Euler-Maruyama for ``(Y, p)``; ``control(t, y, p) -> (n, K, d)`` (or ``(n, K)`` if d = 1).

    ``joint=True`` also samples the hidden chain on the time grid (exact ``P(dt)`` moves)
    and drives ``Y`` with the drift ``b + h_X``; the filter then reads the innovation off
    the simulated observation increments.
    """
    if n_paths < 1 or n_steps < 1:
        raise ValueError("n_paths and n_steps must be positive")
    chain, diff, cost = instance.chain, instance.diffusion, instance.cost
    K, d, T = chain.K, diff.dim, diff.T
    dt = T / n_steps
    sq = np.sqrt(dt)
    lam = chain.lam
    Pdt = expm(chain, dt)
    cumP = np.cumsum(Pdt, axis=1)
    p_start = chain.p0 if p_init is None else np.asarray(p_init, dtype=float)
    rec_idx = list(range(0, n_steps + 1, record_every))
    if rec_idx[-1] != n_steps:
        rec_idx.append(n_steps)
    n_rec = len(rec_idx)
    times = np.array(rec_idx) * dt

    Yrec = np.empty((n_paths, n_rec, d))
    Prec = np.empty((n_paths, n_rec, K))
    Xrec = np.empty((n_paths, n_rec), dtype=int) if joint else None
    clamped = np.zeros(n_paths)
    running = np.zeros(n_paths)
    terminal = np.zeros(n_paths)
    resid = 0.0
    atoms = diff.y0_atoms
    atom_w = np.array([w for _, w in atoms])

    for start in range(0, n_paths, chunk):
        n = min(chunk, n_paths - start)
        Z, U = _path_normals(seed, start, n, n_steps, d, joint)
        # one extra draw per path for the starting atom, from a separate stream
        if len(atoms) > 1:
            ua = np.array([np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(start + k, 1)))).random() for k in range(n)])
            which = np.searchsorted(np.cumsum(atom_w), ua, side="right").clip(max=len(atoms) - 1)
            Y = np.stack([atoms[a][0] for a in which]).astype(float)
        else:
            Y = np.tile(atoms[0][0], (n, 1)).astype(float)
        p = np.tile(p_start, (n, 1)) if np.ndim(p_start) == 1 else np.array(p_start[start : start + n], dtype=float)
        if joint:
            ux = np.array([np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(start + k, 2)))).random() for k in range(n)])
            X = np.searchsorted(np.cumsum(p[0]), ux, side="right").clip(max=K - 1)
        r = 0
        for k in range(n_steps + 1):
            t = k * dt
            if r < n_rec and rec_idx[r] == k:
                Yrec[start : start + n, r] = Y
                Prec[start : start + n, r] = p
                if joint:
                    Xrec[start : start + n, r] = X
                r += 1
            if k == n_steps:
                break
            ycol = Y[:, 0] if d == 1 else Y
            if cost is not None and cost.has_running_cost:
                running[start : start + n] += dt * np.einsum("nk,nk->n", cost.f0_values(ycol), p)
            if control is None:
                h = np.zeros((n, K, d))
            else:
                h = np.asarray(control(t, ycol, p), dtype=float)
                if h.ndim == 2:
                    h = h[:, :, None]
                if control_bound is not None and np.abs(h).max() > control_bound * (1 + 1e-12):
                    raise SimulationError(f"control exceeds its declared bound {control_bound} at step {k}")
                h = h - np.einsum("nk,nkd->nd", p, h)[:, None, :]
                resid = max(resid, float(np.abs(np.einsum("nk,nkd->nd", p, h)).max()))
            b = diff.drift(t, Y)
            sig = diff.vol(t, Y)
            dW = sq * Z[:, k]
            if joint:
                # observation increment under the coupling, innovation recovered from it
                hx = h[np.arange(n), X]
                dY = (b + hx) * dt + np.einsum("nij,nj->ni", sig, dW)
                innov = (dY - b * dt) / sig[:, 0, :] if d == 1 else np.linalg.solve(sig, (dY - b * dt)[..., None])[..., 0]
                u = U[:, k]
                X = (u[:, None] > cumP[X]).sum(axis=1).clip(max=K - 1)
            else:
                dY = b * dt + np.einsum("nij,nj->ni", sig, dW)
                innov = dW
            Y = Y + dY
            if d == 1:
                gain = h[:, :, 0] * (innov[:, 0] / sig[:, 0, 0])[:, None]
            else:
                gain = np.einsum("nkd,nd->nk", np.linalg.solve(sig, h.transpose(0, 2, 1)).transpose(0, 2, 1), innov)
            p = p + (p @ lam) * dt + p * gain
            if not np.all(np.isfinite(p)) or not np.all(np.isfinite(Y)):
                raise SimulationError(f"non-finite state at step {k}")
            neg = p < 0
            if neg.any():
                clamped[start : start + n] += -np.where(neg, p, 0.0).sum(axis=1)
                p = np.maximum(p, 0.0)
                p /= p.sum(axis=1, keepdims=True)
            # last coordinate as the complement so each row sums to one
            p[:, -1] = np.maximum(1.0 - p[:, :-1].sum(axis=1), 0.0)
        ycol = Y[:, 0] if d == 1 else Y
        if cost is not None:
            terminal[start : start + n] = np.einsum("nk,nk->n", cost.g0_values(ycol), p)

    if clamped.any():
        log.info("clamped simplex mass: mean %.3g per path, max %.3g", clamped.mean(), clamped.max())
    label = control_label or ("zero" if control is None else getattr(control, "__name__", "feedback"))
    return FilterPathBatch(
        times=times,
        Y=Yrec,
        P=Prec,
        clamped_mass=clamped,
        running_cost=running,
        terminal_cost=terminal,
        zero_mean_residual=resid,
        seed=seed,
        dt_sim=dt,
        T=T,
        p0=np.asarray(p_start if np.ndim(p_start) == 1 else chain.p0, dtype=float),
        cost=cost,
        control_label=label,
        record_every=record_every,
        X=Xrec,
    )


@dataclass
class MartingaleReport:
    times: np.ndarray
    deviation: np.ndarray  # max over coordinates of |mean - target| per time
    std_error: np.ndarray  # matching standard errors
    max_deviation: float
    max_se_multiple: float
    degenerate: bool
    ok: bool


def martingale_check(batch: FilterPathBatch, chain: ChainSpec, *, n_se: float = 3.0, bias_factor: float = 5.0) -> MartingaleReport:
    """Compare the sample mean of ``p_s P(T - s)`` with ``p0 P(T)`` at each recorded time."""
    target = batch.p0 @ expm(chain, batch.T)
    n = batch.n_paths
    devs, ses = [], []
    for k, s in enumerate(batch.times):
        vals = batch.P[:, k, :] @ expm(chain, batch.T - s)
        mean = vals.mean(axis=0)
        se = vals.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full(chain.K, np.inf)
        i = int(np.argmax(np.abs(mean - target)))
        devs.append(abs(mean[i] - target[i]))
        ses.append(se[i])
    devs = np.array(devs)
    ses = np.array(ses)
    degenerate = n < 2
    with np.errstate(divide="ignore", invalid="ignore"):
        mult = np.where(ses > 0, devs / ses, np.where(devs > 0, np.inf, 0.0))
    ok = (not degenerate) and bool(np.all(devs <= n_se * ses + bias_factor * batch.dt_sim))
    return MartingaleReport(batch.times, devs, ses, float(devs.max()), float(np.max(mult)), degenerate, ok)


def estimate_cost(batch: FilterPathBatch, cost: CostSpec | None = None):
    """Mean and standard error of ``int f(p, Y) ds + g(p_T, Y_T)`` over the batch."""
    if cost is None or cost is batch.cost:
        vals = batch.running_cost + batch.terminal_cost
    else:
        if batch.record_every != 1:
            raise ValueError("re-costing needs every step recorded (record_every=1)")
        d = batch.Y.shape[2]
        vals = np.zeros(batch.n_paths)
        for k in range(batch.times.size):
            y = batch.Y[:, k, 0] if d == 1 else batch.Y[:, k]
            p = batch.P[:, k]
            if k == batch.times.size - 1:
                vals += np.einsum("nk,nk->n", cost.g0_values(y), p)
            else:
                vals += batch.dt_sim * np.einsum("nk,nk->n", cost.f0_values(y), p)
    n = vals.size
    mean = float(np.sum(vals) / n)
    se = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return mean, se


def lattice_policy_control(result, sigma: float | None = None):
    """Piecewise-constant feedback built from a two-state lattice policy.

    On ``[t_n, t_{n+1})`` the observation is snapped to the nearest lattice node ``j`` and the
    lattice half-spread ``delta`` is converted to ``h_1 = delta sigma / (q sqrt(dt))`` with
    ``h_2`` fixed by the zero-mean condition, so ``|p_1 h_1 / sigma| <= N``.
    """
    lat = result.lattice
    sig = lat.sigma if sigma is None else sigma
    sq = np.sqrt(lat.dt)

    def control(t, y, p):
        n = min(int(np.floor(t / lat.dt + 1e-9)), lat.M - 1)
        y = np.asarray(y, dtype=float).reshape(-1)
        j = np.rint(((y - lat.y0 - lat.drift * n * lat.dt) / (lat.sigma * sq) + n) / 2).astype(int).clip(0, n)
        q = p[:, 0]
        delta = np.zeros_like(q)
        for jj in np.unique(j):
            sel = j == jj
            delta[sel] = result.delta(n, int(jj), np.clip(q[sel], 0.0, 1.0))
        h = np.zeros((q.size, 2))
        inner = (q > 1e-12) & (q < 1 - 1e-12)
        h[inner, 0] = delta[inner] * sig / (q[inner] * sq)
        h[inner, 1] = -delta[inner] * sig / ((1 - q[inner]) * sq)
        return h

    control.__name__ = f"lattice-policy-N{result.N:g}"
    return control


def random_bounded_control(K: int, bound: float, seed: int = 0, n_modes: int = 3):
    """Smooth feedback ``h_i(t, y, p) = sum_m A_im cos(w_im y + c_im t + phi_im)`` with ``|h_i| <= bound``.

    Coefficients are drawn once from ``seed``; the result is a fixed admissible control.
    """
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1.0, 1.0, (K, n_modes))
    A *= bound / np.abs(A).sum(axis=1, keepdims=True)
    w = rng.normal(0.0, 1.5, (K, n_modes))
    c = rng.normal(0.0, 1.0, (K, n_modes))
    ph = rng.uniform(0.0, 2 * np.pi, (K, n_modes))

    def control(t, y, p):
        y = np.asarray(y, dtype=float).reshape(-1)
        arg = w[None] * y[:, None, None] + c[None] * t + ph[None]
        return (A[None] * np.cos(arg)).sum(axis=2)

    control.__name__ = f"random-bounded-{bound:g}-seed{seed}"
    return control


def dump_paths_csv(batch: FilterPathBatch, path, header_lines=()) -> None:
    """CSV with columns ``path_id, k, t, y..., p1..pK``; floats in shortest round-trip form."""
    d = batch.Y.shape[2]
    K = batch.P.shape[2]
    cols = ["path_id", "k", "t"] + [f"y{i + 1}" for i in range(d)] + [f"p{i + 1}" for i in range(K)]
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(cols) + "\n")
        for i in range(batch.n_paths):
            for k, t in enumerate(batch.times):
                vals = [repr(float(t))] + [repr(float(v)) for v in batch.Y[i, k]] + [repr(float(v)) for v in batch.P[i, k]]
                fh.write(f"{i},{k * batch.record_every if k < batch.times.size - 1 else round(t / batch.dt_sim)}," + ",".join(vals) + "\n")
