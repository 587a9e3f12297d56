"""Recombining binomial lattice for the target diffusion and the filter drift map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import ChainSpec, expm
from .instance import ProblemInstance

__all__ = ["UnsupportedError", "Lattice", "DriftMap", "build_lattice", "drift_map"]


class UnsupportedError(ValueError):
    """The requested solver does not handle this instance shape."""


@dataclass(frozen=True)
class Lattice:
    """Binomial tree with ``M`` steps; node ``(n, j)`` has ``j`` up-moves out of ``n``.

    ``y_value(n, j) = y0 + b*n*dt + sigma*sqrt(dt)*(2j - n)``; each move has probability 1/2.
    """

    M: int
    T: float
    y0: float
    drift: float = 0.0
    sigma: float = 1.0

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def n_nodes(self) -> int:
        return (self.M + 1) * (self.M + 2) // 2

    def t(self, n: int) -> float:
        return n * self.dt

    def y_value(self, n: int, j):
        j = np.asarray(j, dtype=float)
        return self.y0 + self.drift * n * self.dt + self.sigma * np.sqrt(self.dt) * (2 * j - n)

    def level(self, n: int) -> np.ndarray:
        """All node values at depth ``n`` ordered by ``j``."""
        return self.y_value(n, np.arange(n + 1))

    def weights(self, n: int) -> np.ndarray:
        """Binomial probabilities of reaching each node at depth ``n``."""
        from scipy.stats import binom

        return binom.pmf(np.arange(n + 1), n, 0.5)


def build_lattice(instance: ProblemInstance, M: int, y0=None) -> Lattice:
    diff = instance.diffusion
    if diff.dim != 1:
        raise UnsupportedError("lattice solvers need a one-dimensional target (dim = 1)")
    if not diff.is_constant:
        raise UnsupportedError("lattice solvers need constant drift and volatility; state-dependent coefficients are unsupported")
    if M < 1:
        raise ValueError("M must be a positive integer")
    y = np.atleast_1d(diff.y0 if y0 is None else y0)
    b = float(np.ravel(diff.drift(0.0, y))[0])
    s = float(np.ravel(diff.vol(0.0, y))[0])
    return Lattice(M=int(M), T=float(diff.T), y0=float(y[0]), drift=b, sigma=s)


@dataclass(frozen=True)
class DriftMap:
    """Affine conditional-mean map ``m(q) = alpha + beta*q`` of the first filter coordinate."""

    alpha: float
    beta: float

    def __call__(self, q):
        return self.alpha + self.beta * np.asarray(q, dtype=float)


def drift_map(chain: ChainSpec, dt: float) -> DriftMap:
    """``m(q)`` = first component of ``(q, 1-q) P(dt)``."""
    if chain.K != 2:
        raise UnsupportedError("the exact drift map is for two-state chains; use the grid solver for K = 3")
    P = expm(chain, dt)
    return DriftMap(alpha=float(P[1, 0]), beta=float(P[0, 0] - P[1, 0]))
