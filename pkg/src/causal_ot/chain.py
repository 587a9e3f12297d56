"""Finite-state Markov chain source: generator checks, semigroup, stationary law."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "ChainError",
    "ChainSpec",
    "Semigroup",
    "expm",
    "stationary",
    "is_irreducible",
]

_TOL = 1e-12


class ChainError(ValueError):
    """Invalid generator/initial law, or a structural requirement that fails."""


@dataclass(frozen=True)
class ChainSpec:
    """Generator ``lam`` (rows sum to zero) and initial law ``p0`` of the chain."""

    lam: np.ndarray
    p0: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        p0 = np.array(self.p0, dtype=float)
        if lam.ndim != 2 or lam.shape[0] != lam.shape[1] or lam.shape[0] < 1:
            raise ChainError(f"generator must be a square K x K matrix, got shape {lam.shape}")
        if not np.all(np.isfinite(lam)):
            raise ChainError("generator has non-finite entries")
        K = lam.shape[0]
        off = lam[~np.eye(K, dtype=bool)]
        if np.any(off < 0):
            raise ChainError("generator has negative off-diagonal entries")
        rows = lam.sum(axis=1)
        if np.any(np.abs(rows) > _TOL):
            bad = int(np.argmax(np.abs(rows)))
            raise ChainError(f"generator row {bad} sums to {rows[bad]!r}, expected 0")
        if p0.shape != (K,):
            raise ChainError(f"p0 must have length {K}, got shape {p0.shape}")
        if not np.all(np.isfinite(p0)) or np.any(p0 < 0) or abs(p0.sum() - 1.0) > _TOL:
            raise ChainError("p0 must be a probability vector")
        lam.setflags(write=False)
        p0.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "p0", p0)

    @property
    def K(self) -> int:
        return self.lam.shape[0]

    @classmethod
    def two_state(cls, a: float, b: float, p0=(0.5, 0.5)) -> "ChainSpec":
        """Chain with generator ``[[-a, a], [b, -b]]``."""
        return cls(np.array([[-a, a], [b, -b]], dtype=float), np.asarray(p0, dtype=float))


def expm(chain: ChainSpec, t: float) -> np.ndarray:
    """Transition matrix ``P(t) = exp(t * lam)``; negative ``t`` gives the inverse semigroup.

    Two-state chains use the closed form
    ``(1/c) [[b + a e^{-ct}, a(1 - e^{-ct})], [b(1 - e^{-ct}), a + b e^{-ct}]]`` with ``c = a + b``.
    Larger chains go through scaling-and-squaring Pade (``scipy.linalg.expm``).
    """
    t = float(t)
    lam = chain.lam
    if chain.K == 1:
        return np.ones((1, 1))
    if chain.K == 2:
        a, b = lam[0, 1], lam[1, 0]
        c = a + b
        if c == 0.0:
            return np.eye(2)
        e = np.exp(-c * t)
        # 1 - e^{-ct} via expm1 keeps small-t entries accurate
        om = -np.expm1(-c * t)
        return np.array([[b + a * e, a * om], [b * om, a + b * e]]) / c
    return scipy.linalg.expm(t * lam)


@dataclass
class Semigroup:
    """Memoised ``t -> P(t)`` for one chain.

    Not thread-safe while being filled; populate before sharing.
    """

    chain: ChainSpec
    _cache: dict = field(default_factory=dict, repr=False)

    def __call__(self, t: float) -> np.ndarray:
        key = float(t)
        P = self._cache.get(key)
        if P is None:
            P = expm(self.chain, key)
            P.setflags(write=False)
            self._cache[key] = P
        return P


def is_irreducible(chain: ChainSpec) -> bool:
    """True iff the graph of positive off-diagonal rates is strongly connected."""
    K = chain.K
    adj = (chain.lam > 0) & ~np.eye(K, dtype=bool)

    def reach(mat):
        seen = {0}
        stack = [0]
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(mat[i]):
                if j not in seen:
                    seen.add(int(j))
                    stack.append(int(j))
        return len(seen) == K

    return reach(adj) and reach(adj.T)


def stationary(chain: ChainSpec) -> np.ndarray:
    """Unique ``pi`` with ``pi @ lam = 0``, ``sum(pi) = 1`` for an irreducible chain."""
    if not is_irreducible(chain):
        raise ChainError("stationary law requires an irreducible chain (zero eigenvalue not simple)")
    K = chain.K
    A = np.vstack([chain.lam.T, np.ones((1, K))])
    rhs = np.zeros(K + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    # one refinement step on the residual
    r = rhs - A @ pi
    dpi, *_ = np.linalg.lstsq(A, r, rcond=None)
    pi = pi + dpi
    return pi / pi.sum()
