"""Analytic values for a frozen (constant) chain coupled to Brownian motion.

With ``Lambda = 0`` and ``g0(i, y) = x_i y``, the value is ``y m(p) + sqrt(tau) L(p)`` where
``L(p)`` is the maximal covariance between the discrete law ``sum p_i delta_{x_i}`` and a
standard normal, ``L(p) = sum_i x_i (h(s_{i-1}) - h(s_i))`` with partial sums ``s_i`` and
``h = phi o Phi^{-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

__all__ = [
    "BoundaryError",
    "ConstantChainExample",
    "normal_h",
    "L",
    "mean_x",
    "v_term",
    "v_run",
    "hessian_L",
    "hamiltonian_maximiser",
    "hamiltonian_identity_check",
    "L_monte_carlo",
]

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class BoundaryError(ValueError):
    """Quantity undefined on the boundary of the simplex."""


@dataclass(frozen=True)
class ConstantChainExample:
    xs: np.ndarray
    p: np.ndarray
    tau: float = 1.0
    y: float = 0.0

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if xs.ndim != 1 or np.any(np.diff(xs) <= 0):
            raise ValueError("xs must be strictly increasing")
        if p.shape != xs.shape or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("p must be a probability vector matching xs")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "p", p)

    @property
    def s(self) -> np.ndarray:
        """Partial sums ``s_0 = 0, ..., s_K = 1``."""
        s = np.concatenate(([0.0], np.cumsum(self.p)))
        s[-1] = 1.0
        return s


def normal_h(u):
    """``phi(Phi^{-1}(u))`` with ``h(0) = h(1) = 0``."""
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)) or np.any(np.isnan(u)):
        raise ValueError("normal_h needs u in [0, 1]")
    inner = (u > 0) & (u < 1)
    z = ndtri(np.where(inner, u, 0.5))
    out = np.where(inner, _INV_SQRT_2PI * np.exp(-0.5 * z * z), 0.0)
    return float(out) if out.ndim == 0 else out


def L(ex: ConstantChainExample) -> float:
    hs = normal_h(ex.s)
    return float(ex.xs @ (hs[:-1] - hs[1:]))


def mean_x(ex: ConstantChainExample) -> float:
    return float(ex.xs @ ex.p)


def v_term(ex: ConstantChainExample) -> float:
    return ex.y * mean_x(ex) + np.sqrt(ex.tau) * L(ex)


def v_run(ex: ConstantChainExample) -> float:
    """Running-cost variant ``f0(i, y) = x_i y``: ``tau y m(p) + tau^{3/2}/sqrt(3) L(p)``."""
    return ex.tau * ex.y * mean_x(ex) + ex.tau**1.5 / np.sqrt(3.0) * L(ex)


def hessian_L(ex: ConstantChainExample) -> np.ndarray:
    """Hessian of ``L`` in the coordinates ``(p_1, ..., p_{K-1})``.

    Entry ``(i, j)`` is ``sum_{l >= max(i, j)} (x_l - x_{l+1}) / h(s_l)`` over ``l < K``.
    """
    K = ex.xs.size
    s = ex.s[1:K]  # s_1..s_{K-1}
    if np.any(s <= 0) or np.any(s >= 1):
        raise BoundaryError("Hessian of L needs every partial sum strictly inside (0, 1)")
    terms = (ex.xs[:-1] - ex.xs[1:]) / normal_h(s)
    tail = np.cumsum(terms[::-1])[::-1]  # tail[l] = sum_{l' >= l}
    idx = np.maximum.outer(np.arange(K - 1), np.arange(K - 1))
    return tail[idx]


def hamiltonian_maximiser(ex: ConstantChainExample, alpha: float, beta: float) -> np.ndarray:
    """Closed-form ``z*_i = (alpha/beta)(h(s_{i-1}) - h(s_i))`` (sums to zero)."""
    hs = normal_h(ex.s)
    return alpha / beta * (hs[:-1] - hs[1:])


def hamiltonian_identity_check(ex: ConstantChainExample, alpha: float, beta: float, z_grid: int = 21, iters: int = 80):
    """Numerically maximise ``alpha x.z + beta/2 z' D2L z`` over ``sum z = 0``.

    Works in the free coordinates ``z_1..z_{K-1}`` (``z_K = -sum``) by a grid search that
    starts at the origin and repeatedly halves its window around the incumbent.  Returns
    ``(lhs, rhs, gap)`` with ``rhs = alpha^2/(2 beta) L(p)``.
    """
    if alpha < 0 or beta <= 0:
        raise ValueError("need alpha >= 0 and beta > 0")
    H = hessian_L(ex)
    K = ex.xs.size
    c = alpha * (ex.xs[:-1] - ex.xs[-1])

    def q(Z):
        return Z @ c + 0.5 * beta * np.einsum("ni,ij,nj->n", Z, H, Z)

    rhs = alpha**2 / (2 * beta) * L(ex)
    if K == 1:
        return 0.0, rhs, abs(rhs)
    centre = np.zeros(K - 1)
    width = 2.0 * max(alpha, 1e-300) / beta
    axis = np.linspace(-1.0, 1.0, z_grid)
    offsets = np.array(np.meshgrid(*([axis] * (K - 1)), indexing="ij")).reshape(K - 1, -1).T
    best = q(centre[None, :])[0]
    for _ in range(iters):
        Z = centre + width * offsets
        vals = q(Z)
        k = int(np.argmax(vals))
        if vals[k] >= best:
            best = vals[k]
            centre = Z[k]
        width *= 0.5
    return float(best), float(rhs), float(abs(best - rhs))


def L_monte_carlo(ex: ConstantChainExample, n: int = 10**7, seed: int = 0, chunk: int = 10**6):
    """Comonotone estimate of ``E[X Z]`` with ``X = x_{k(U)}``, ``Z = Phi^{-1}(U)``.

    Returns ``(mean, standard_error)``.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    edges = ex.s[1:-1]
    total = 0.0
    total2 = 0.0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        u = rng.random(m)
        x = ex.xs[np.searchsorted(edges, u, side="right")]
        v = x * ndtri(u)
        total += v.sum()
        total2 += (v * v).sum()
        done += m
    mean = total / n
    var = max(total2 / n - mean * mean, 0.0)
    return float(mean), float(np.sqrt(var / n))
