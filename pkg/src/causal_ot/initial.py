"""Initial layer for a finitely supported target start law.

With two source states, choosing a kernel from target atoms to source laws reduces to
picking ``r_y = R_y(state 1)`` per atom under one linear budget constraint, a separable
concave resource allocation that slope-sorted greedy filling solves exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .pwl import CONCAVE, PwlFn

__all__ = ["InitialSolution", "solve_initial", "quantile_kernel"]

_TIE_RTOL = 1e-12


@dataclass
class InitialSolution:
    value: float
    kernel: np.ndarray  # (n_atoms, 2): R_y over the two source states

    @property
    def r(self) -> np.ndarray:
        return self.kernel[:, 0]


def solve_initial(atom_values, mu0) -> InitialSolution:
    """Maximise ``sum_y w_y V_y(r_y)`` subject to ``sum_y w_y r_y = mu0[0]``, ``r_y in [0, 1]``.

    ``atom_values`` is a sequence of ``(w_y, V_y)`` with ``V_y`` concave PL covering ``[0, 1]``.
    Segments are filled in order of decreasing slope; segments sharing a slope are filled
    proportionally to their capacity, so identical atoms receive identical ``r_y``.
    """
    mu = np.atleast_1d(np.asarray(mu0, dtype=float))
    m1 = float(mu[0])
    if not (0.0 <= m1 <= 1.0) or (mu.size == 2 and abs(mu.sum() - 1.0) > 1e-12):
        raise ValueError(f"source initial law {mu0!r} is not a probability vector")
    ws = np.array([float(w) for w, _ in atom_values])
    fs = [f for _, f in atom_values]
    if np.any(ws < 0) or abs(ws.sum() - 1.0) > 1e-12:
        raise ValueError("atom weights must be non-negative and sum to 1")
    for f in fs:
        if f.kind != CONCAVE or f.lo > 0.0 or f.hi < 1.0:
            raise ValueError("each atom value must be concave PL on [0, 1]")
    fs = [f.restrict(0.0, 1.0) for f in fs]

    rows = []  # (slope, atom, length)
    for a, f in enumerate(fs):
        for x0, x1, s in f.segments():
            rows.append((s, a, x1 - x0))
    r = np.zeros(len(fs))
    budget = m1
    if rows:
        seg = np.array(rows)
        order = np.argsort(-seg[:, 0], kind="stable")
        seg = seg[order]
        k = 0
        while k < seg.shape[0] and budget > 0.0:
            s0 = seg[k, 0]
            tol = _TIE_RTOL * max(1.0, abs(s0))
            e = k
            while e < seg.shape[0] and abs(seg[e, 0] - s0) <= tol:
                e += 1
            group = seg[k:e]
            atoms = group[:, 1].astype(int)
            cap = ws[atoms] * group[:, 2]
            total = cap.sum()
            frac = 1.0 if total <= budget else budget / total
            np.add.at(r, atoms, frac * group[:, 2])
            budget -= frac * total
            k = e
    r = np.clip(r, 0.0, 1.0)
    # absorb rounding so the budget identity holds to machine precision
    pos = ws > 0
    if pos.any():
        resid = m1 - ws @ r
        free = pos & (r + resid / ws.clip(min=1e-300) <= 1.0) & (r + resid / ws.clip(min=1e-300) >= 0.0)
        if abs(resid) > 0 and free.any():
            i = int(np.flatnonzero(free)[np.argmax(ws[free])])
            r[i] += resid / ws[i]
    value = float(sum(w * f(x) for w, f, x in zip(ws, fs, r)))
    return InitialSolution(value=value, kernel=np.column_stack((r, 1.0 - r)))


def quantile_kernel(xs, qs, a: float, s: float, *, ys=None, ws=None, xtol: float = 1e-14):
    """Comonotone kernel sending target atom ``y`` to source atom ``x_k`` with probability
    ``Phi((w_k - a y)/s) - Phi((w_{k-1} - a y)/s)``.

    The edges ``w_k`` invert ``F(r) = sum_j ws_j Phi((r - a ys_j)/s)`` at the cumulative
    source masses.  ``ys, ws`` default to ``xs, qs``.  Returns ``(kernel, edges)`` with
    ``kernel[j, k] = R_{ys_j}({x_k})`` and ``edges`` of length ``K + 1`` (outer ones infinite).
    """
    xs = np.asarray(xs, dtype=float)
    qs = np.asarray(qs, dtype=float)
    ys = xs if ys is None else np.asarray(ys, dtype=float)
    ws = qs if ws is None else np.asarray(ws, dtype=float)
    if s <= 0:
        raise ValueError("scale s must be positive")
    if abs(qs.sum() - 1.0) > 1e-12 or abs(ws.sum() - 1.0) > 1e-12:
        raise ValueError("weights must sum to 1")
    K = xs.size
    if K == 1:
        return np.ones((ys.size, 1)), np.array([-np.inf, np.inf])

    def F(r):
        return float(ws @ ndtr((r - a * ys) / s))

    Q = np.cumsum(qs)[:-1]
    lo = a * ys.min() - 40.0 * s
    hi = a * ys.max() + 40.0 * s
    inner = np.array([brentq(lambda r, q=q: F(r) - q, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps) for q in Q])
    edges = np.concatenate(([-np.inf], inner, [np.inf]))
    cdf = ndtr((edges[None, :] - a * ys[:, None]) / s)
    return np.diff(cdf, axis=1), edges
