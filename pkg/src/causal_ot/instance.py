"""Problem instances: target diffusion, costs, horizon and the JSON config format.

Coefficients and costs come from a closed vocabulary of forms::

    {"form": "zero"}
    {"form": "const", "params": {"value": v}}            # or {"values": [v_1, ..., v_K]} for costs
    {"form": "linear-xy", "params": {"values": [x_1, ..., x_K]}}       # x_i * y
    {"form": "logistic", "params": {"slope": s, "state": k}}           # 1/(1+exp(-s*y)) on state k, else 0
    {"form": "poly", "params": {"coeffs": [[c0, c1, ...], ...]}}       # per state (costs) or single list
    {"form": "tabulated", "params": {"grid": [...], "values": [[...], ...]}}

States are numbered from 1 in config files and from 0 in code.  For ``dim > 1`` the
scalar cost forms act on ``direction . y`` (default: first coordinate).
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chain import ChainError, ChainSpec

__all__ = [
    "ConfigError",
    "Form",
    "DiffusionSpec",
    "CostSpec",
    "ProblemInstance",
    "load_instance",
    "instance_from_dict",
    "dump_instance",
    "lift_costs",
]

COST_FORMS = ("zero", "const", "linear-xy", "logistic", "poly", "tabulated")
COEF_FORMS = ("zero", "const", "poly", "tabulated")


class ConfigError(ValueError):
    """Config parse/schema/invariant failure; ``field`` names the offending key path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass(frozen=True)
class Form:
    form: str
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"form": self.form}
        if self.params:
            out["params"] = copy.deepcopy(self.params)
        return out

    @property
    def is_constant(self) -> bool:
        return self.form in ("zero", "const")


def _parse_form(raw, where: str, allowed) -> Form:
    if not isinstance(raw, dict) or "form" not in raw:
        raise ConfigError(where, "expected an object with a 'form' key")
    name = raw["form"]
    if name not in allowed:
        raise ConfigError(where + ".form", f"unknown form {name!r}; allowed: {', '.join(allowed)}")
    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError(where + ".params", "expected an object")
    return Form(name, copy.deepcopy(params))


def _project(y, direction):
    """Scalar statistic ``direction . y`` for ``y`` of shape (n,) [d=1] or (n, d)."""
    y = np.asarray(y, dtype=float)
    if y.ndim <= 1:
        return y
    if direction is None:
        return y[..., 0]
    return y @ np.asarray(direction, dtype=float)


class _StateFn:
    """Vectorised evaluator ``(y) -> (n, K)`` array of per-state values of one cost form."""

    def __init__(self, form: Form, K: int, where: str):
        self.form = form
        self.K = K
        p = form.params
        self.direction = p.get("direction")
        try:
            if form.form == "const":
                if "values" in p:
                    self.const = np.asarray(p["values"], dtype=float)
                    if self.const.shape != (K,):
                        raise ConfigError(where + ".params.values", f"expected {K} values")
                else:
                    self.const = np.full(K, float(p["value"]))
            elif form.form == "linear-xy":
                self.xs = np.asarray(p["values"], dtype=float)
                if self.xs.shape != (K,):
                    raise ConfigError(where + ".params.values", f"expected {K} values")
            elif form.form == "logistic":
                self.slope = float(p["slope"])
                self.state = int(p.get("state", 1)) - 1
                if not 0 <= self.state < K:
                    raise ConfigError(where + ".params.state", f"state must be in 1..{K}")
            elif form.form == "poly":
                coeffs = p["coeffs"]
                if coeffs and not isinstance(coeffs[0], (list, tuple)):
                    coeffs = [coeffs] * K
                if len(coeffs) != K:
                    raise ConfigError(where + ".params.coeffs", f"expected {K} coefficient lists")
                self.coeffs = [np.asarray(c, dtype=float) for c in coeffs]
            elif form.form == "tabulated":
                self.grid = np.asarray(p["grid"], dtype=float)
                vals = np.asarray(p["values"], dtype=float)
                if vals.ndim == 1:
                    vals = np.tile(vals, (K, 1))
                if vals.shape != (K, self.grid.size) or np.any(np.diff(self.grid) <= 0):
                    raise ConfigError(where + ".params", "tabulated form needs increasing grid and K rows")
                self.table = vals
        except KeyError as exc:
            raise ConfigError(where + ".params", f"missing parameter {exc.args[0]!r}") from None

    def __call__(self, y) -> np.ndarray:
        s = np.atleast_1d(_project(y, self.direction))
        n = s.shape[0]
        f = self.form.form
        if f == "zero":
            return np.zeros((n, self.K))
        if f == "const":
            return np.tile(self.const, (n, 1))
        if f == "linear-xy":
            return s[:, None] * self.xs[None, :]
        if f == "logistic":
            out = np.zeros((n, self.K))
            # 1/(1+e^{-x}) written to avoid overflow for large |x|
            out[:, self.state] = 0.5 * (1.0 + np.tanh(0.5 * self.slope * s))
            return out
        if f == "poly":
            return np.stack([np.polynomial.polynomial.polyval(s, c) for c in self.coeffs], axis=1)
        return np.stack([np.interp(s, self.grid, row) for row in self.table], axis=1)


class _CoefFn:
    """Evaluator for drift/vol forms as functions of ``(t, y)``."""

    def __init__(self, form: Form, dim: int, kind: str, where: str):
        self.form = form
        self.dim = dim
        self.kind = kind
        p = form.params
        try:
            if form.form == "const":
                v = np.asarray(p["value"], dtype=float)
                if kind == "drift":
                    v = np.broadcast_to(v, (dim,)).copy()
                elif v.ndim == 0:
                    v = float(v) * np.eye(dim)
                elif v.ndim == 1:
                    v = np.diag(v)
                if kind == "vol" and v.shape != (dim, dim):
                    raise ConfigError(where + ".params.value", f"vol must be {dim}x{dim}")
                self.const = v
            elif form.form in ("poly", "tabulated"):
                if dim != 1:
                    raise ConfigError(where + ".form", f"form {form.form!r} requires dim = 1")
                if form.form == "poly":
                    self.coeffs = np.asarray(p["coeffs"], dtype=float)
                else:
                    self.grid = np.asarray(p["grid"], dtype=float)
                    self.table = np.asarray(p["values"], dtype=float)
        except KeyError as exc:
            raise ConfigError(where + ".params", f"missing parameter {exc.args[0]!r}") from None

    def __call__(self, t, y):
        """``y`` of shape (n, d) -> (n, d) for drift, (n, d, d) for vol."""
        y = np.asarray(y, dtype=float).reshape(-1, self.dim)
        n = y.shape[0]
        d = self.dim
        f = self.form.form
        if f == "zero":
            return np.zeros((n, d)) if self.kind == "drift" else np.zeros((n, d, d))
        if f == "const":
            return np.broadcast_to(self.const, (n,) + self.const.shape).copy()
        s = y[:, 0]
        if f == "poly":
            v = np.polynomial.polynomial.polyval(s, self.coeffs)
        else:
            v = np.interp(s, self.grid, self.table)
        return v.reshape(n, 1) if self.kind == "drift" else v.reshape(n, 1, 1)


@dataclass(frozen=True)
class DiffusionSpec:
    """Target diffusion ``dY = b(t, Y) dt + sigma(t, Y) dW`` with a finitely supported ``Y_0``."""

    dim: int
    drift_form: Form
    vol_form: Form
    y0_atoms: tuple  # ((y: ndarray (d,), w: float), ...)
    T: float
    kappa: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "_drift", _CoefFn(self.drift_form, self.dim, "drift", "diffusion.drift"))
        object.__setattr__(self, "_vol", _CoefFn(self.vol_form, self.dim, "vol", "diffusion.vol"))

    def drift(self, t, y) -> np.ndarray:
        return self._drift(t, y)

    def vol(self, t, y) -> np.ndarray:
        return self._vol(t, y)

    @property
    def is_constant(self) -> bool:
        return self.drift_form.is_constant and self.vol_form.is_constant

    @property
    def y0(self) -> np.ndarray:
        """Start point when ``Y_0`` is a single atom."""
        if len(self.y0_atoms) != 1:
            raise ValueError("initial law has several atoms; pick one explicitly")
        return self.y0_atoms[0][0]

    def working_domain(self, width: float = 5.0):
        """Interval ``[min y0 - width*s*sqrt(T), max y0 + width*s*sqrt(T)]`` on the first coordinate."""
        ys = np.array([a[0][0] for a in self.y0_atoms])
        s = max(float(np.max(np.abs(self.vol(0.0, self.y0_atoms[0][0])))), 1.0)
        return ys.min() - width * s * np.sqrt(self.T), ys.max() + width * s * np.sqrt(self.T)


@dataclass(frozen=True)
class CostSpec:
    """Per-state running cost ``f0(i, y)`` and terminal cost ``g0(i, y)``."""

    K: int
    f0_form: Form
    g0_form: Form
    lipschitz: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "_f0", _StateFn(self.f0_form, self.K, "cost.f0"))
        object.__setattr__(self, "_g0", _StateFn(self.g0_form, self.K, "cost.g0"))

    def f0_values(self, y) -> np.ndarray:
        """``(n, K)`` array of ``f0(i, y_n)``."""
        return self._f0(y)

    def g0_values(self, y) -> np.ndarray:
        return self._g0(y)

    def f0(self, i: int, y) -> np.ndarray:
        return self._f0(y)[:, i]

    def g0(self, i: int, y) -> np.ndarray:
        return self._g0(y)[:, i]

    @property
    def has_running_cost(self) -> bool:
        return self.f0_form.form != "zero"


def lift_costs(cost: CostSpec, p, y):
    """Simplex-linear lifts ``(sum_i f0(i,y) p_i, sum_i g0(i,y) p_i)``.

    Scalars in, scalars out; a batch ``p`` of shape (n, K) with ``n`` points ``y`` gives arrays.
    """
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    P = np.atleast_2d(p)
    F = cost.f0_values(y)
    G = cost.g0_values(y)
    f = np.einsum("nk,nk->n", F, P) if F.shape[0] == P.shape[0] else F @ P[0]
    g = np.einsum("nk,nk->n", G, P) if G.shape[0] == P.shape[0] else G @ P[0]
    if single and f.shape == (1,):
        return float(f[0]), float(g[0])
    return f, g


@dataclass(frozen=True)
class ProblemInstance:
    chain: ChainSpec
    diffusion: DiffusionSpec
    cost: CostSpec

    def __post_init__(self):
        if self.cost.K != self.chain.K:
            raise ConfigError("cost", f"cost defined for {self.cost.K} states, chain has {self.chain.K}")

    @property
    def K(self) -> int:
        return self.chain.K

    @property
    def T(self) -> float:
        return self.diffusion.T

    def to_dict(self) -> dict:
        d = self.diffusion
        return {
            "chain": {"K": self.chain.K, "lambda": self.chain.lam.tolist(), "p0": self.chain.p0.tolist()},
            "diffusion": {
                "dim": d.dim,
                "drift": d.drift_form.to_dict(),
                "vol": d.vol_form.to_dict(),
                "y0_atoms": [
                    {"y": (float(y[0]) if d.dim == 1 else y.tolist()), "w": float(w)} for y, w in d.y0_atoms
                ],
                "T": d.T,
                **({"kappa": d.kappa} if d.kappa else {}),
            },
            "cost": {
                "f0": self.cost.f0_form.to_dict(),
                "g0": self.cost.g0_form.to_dict(),
                **({"lipschitz": self.cost.lipschitz} if self.cost.lipschitz is not None else {}),
            },
        }

    def with_start(self, y, p0=None) -> "ProblemInstance":
        """Copy with a single-atom ``Y_0 = y`` (and optionally a new ``p0``)."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        chain = self.chain if p0 is None else ChainSpec(self.chain.lam, np.asarray(p0, dtype=float))
        d = self.diffusion
        diff = DiffusionSpec(d.dim, d.drift_form, d.vol_form, ((y, 1.0),), d.T, d.kappa)
        return ProblemInstance(chain, diff, self.cost)


def _need(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise ConfigError(f"{where}.{key}" if where else key, "missing")
    return obj[key]


def instance_from_dict(raw: dict) -> ProblemInstance:
    """Build and validate an instance from an already-parsed config object."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a JSON object")
    ch = _need(raw, "chain", "")
    lam = _need(ch, "lambda", "chain")
    p0 = _need(ch, "p0", "chain")
    try:
        chain = ChainSpec(np.asarray(lam, dtype=float), np.asarray(p0, dtype=float))
    except (ChainError, ValueError, TypeError) as exc:
        raise ConfigError("chain", f"generator validation failed: {exc}") from None
    if "K" in ch and int(ch["K"]) != chain.K:
        raise ConfigError("chain.K", f"K={ch['K']} but lambda is {chain.K}x{chain.K}")

    df = _need(raw, "diffusion", "")
    dim = int(df.get("dim", 1))
    if dim < 1:
        raise ConfigError("diffusion.dim", "must be a positive integer")
    T = float(_need(df, "T", "diffusion"))
    if not (np.isfinite(T) and T > 0):
        raise ConfigError("diffusion.T", "horizon must be positive")
    drift = _parse_form(df.get("drift", {"form": "zero"}), "diffusion.drift", COEF_FORMS)
    vol = _parse_form(df.get("vol", {"form": "const", "params": {"value": 1.0}}), "diffusion.vol", COEF_FORMS)
    atoms_raw = df.get("y0_atoms", [{"y": 0.0, "w": 1.0}])
    atoms = []
    for k, a in enumerate(atoms_raw):
        y = np.atleast_1d(np.asarray(_need(a, "y", f"diffusion.y0_atoms[{k}]"), dtype=float))
        if y.shape != (dim,):
            raise ConfigError(f"diffusion.y0_atoms[{k}].y", f"expected {dim} coordinates")
        w = float(_need(a, "w", f"diffusion.y0_atoms[{k}]"))
        if w < 0:
            raise ConfigError(f"diffusion.y0_atoms[{k}].w", "negative weight")
        atoms.append((y, w))
    if not atoms or abs(sum(w for _, w in atoms) - 1.0) > 1e-12:
        raise ConfigError("diffusion.y0_atoms", "weights must sum to 1")
    kappa = float(df.get("kappa", 0.0))
    diffusion = DiffusionSpec(dim, drift, vol, tuple(atoms), T, kappa)
    _check_diffusion(diffusion)

    cs = _need(raw, "cost", "")
    f0 = _parse_form(cs.get("f0", {"form": "zero"}), "cost.f0", COST_FORMS)
    g0 = _parse_form(cs.get("g0", {"form": "zero"}), "cost.g0", COST_FORMS)
    lip = cs.get("lipschitz")
    cost = CostSpec(chain.K, f0, g0, None if lip is None else float(lip))
    ys = np.linspace(*diffusion.working_domain(), 41)
    yy = np.tile(ys[:, None], (1, dim)) if dim > 1 else ys
    for name, vals in (("cost.f0", cost.f0_values(yy)), ("cost.g0", cost.g0_values(yy))):
        if not np.all(np.isfinite(vals)):
            raise ConfigError(name, "non-finite values on the working domain")
    return ProblemInstance(chain, diffusion, cost)


def _check_diffusion(d: DiffusionSpec):
    lo, hi = d.working_domain()
    ys = np.linspace(lo, hi, 41)
    Y = np.tile(ys[:, None], (1, d.dim))
    for t in (0.0, 0.5 * d.T, d.T):
        b = d.drift(t, Y)
        s = d.vol(t, Y)
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(s))):
            raise ConfigError("diffusion", "drift/vol not finite on the working domain")
        if np.any(np.abs(s - np.swapaxes(s, 1, 2)) > 1e-12):
            raise ConfigError("diffusion.vol", "vol must be symmetric")
        eig = np.linalg.eigvalsh(s).min()
        floor = d.kappa if d.kappa > 0 else 0.0
        if eig <= 0 or eig < floor:
            raise ConfigError("diffusion.vol", f"vol not uniformly positive definite (min eigenvalue {eig:.3g})")


def load_instance(path) -> ProblemInstance:
    """Parse and validate a JSON config file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"JSON parse error at line {exc.lineno}: {exc.msg}") from None
    return instance_from_dict(raw)


def dump_instance(instance: ProblemInstance, path) -> None:
    Path(path).write_text(json.dumps(instance.to_dict(), indent=2))
