"""Causal optimal transport between a finite-state Markov chain and a diffusion.

Lattice lower and upper bounds, filter simulation, finite-difference HJB and follower
solvers, closed forms for a frozen chain, and the initial kernel layer.
"""

__version__ = "0.1.0"

from .chain import ChainSpec, expm
from .instance import ProblemInstance, instance_from_dict, load_instance
from .lattice import build_lattice
from .primal import solve_primal
from .dual import solve_dual
from .initial import solve_initial

__all__ = [
    "__version__",
    "ChainSpec",
    "expm",
    "ProblemInstance",
    "instance_from_dict",
    "load_instance",
    "build_lattice",
    "solve_primal",
    "solve_dual",
    "solve_initial",
]
