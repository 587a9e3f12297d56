"""Command-line entry point: ``causal-ot <command> [flags]``.

Exit codes: 0 success, 2 usage, 3 config or validation, 4 numerical refusal, 5 internal.
Human tables use 6 decimals; CSV files carry shortest round-trip floats and a
``# fingerprint sha256:...`` header identifying the instance.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .chain import expm
from .closedform import ConstantChainExample, L, v_term
from .dual import DualUnboundedError, solve_dual
from .filtersim import SimulationError, dump_paths_csv, estimate_cost, lattice_policy_control, martingale_check, simulate
from .hjb import CFLError, dump_follower_csv, dump_hjb_csv, solve_follower_onesided, solve_follower_twosided, solve_truncated_hjb, value_from_follower
from .initial import solve_initial
from .instance import ConfigError, ProblemInstance, load_instance
from .lattice import UnsupportedError, build_lattice
from .primal import ResolutionError, solve_primal
from .pwl import DomainError, PwlError, UnboundedError, affine_compose, conjugate

log = logging.getLogger("causal_ot")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INTERNAL = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def fingerprint(instance: ProblemInstance) -> str:
    """sha256 of the canonical JSON form of the instance."""
    blob = json.dumps(instance.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _header(instance, **extra):
    lines = [f"fingerprint sha256:{fingerprint(instance)}" if instance is not None else "fingerprint none"]
    lines += [f"{k} {v}" for k, v in extra.items()]
    return lines


def _r(x) -> str:
    return repr(float(x))


def _write_csv(path, header_lines, columns, rows):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_r(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _out(args, name):
    if args.out is None:
        return None
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


# -- sandwich --------------------------------------------------------------------------------


@dataclass
class SandwichRow:
    N: float
    lower: float
    upper: float
    seconds: float = 0.0

    @property
    def gap(self) -> float:
        return self.upper - self.lower


@dataclass
class SandwichReport:
    rows: list
    fingerprint: str
    M: int
    issues: list = field(default_factory=list)

    def check(self, slack: float = 1e-10) -> list:
        """Ordering violations across rows sorted by ``N``."""
        rows = sorted(self.rows, key=lambda r: r.N)
        bad = []
        for a, b in zip(rows, rows[1:]):
            if b.lower < a.lower - slack:
                bad.append(f"lower decreases between N={a.N} and N={b.N}")
            if b.upper > a.upper + slack:
                bad.append(f"upper increases between N={a.N} and N={b.N}")
        bad += [f"negative gap at N={r.N}" for r in rows if r.gap < -slack]
        return bad

    def table(self) -> str:
        lines = [f"{'N':>8}  {'lower':>10}  {'upper':>10}  {'gap':>10}  {'sec':>6}"]
        for r in self.rows:
            lines.append(f"{r.N:>8g}  {r.lower:10.6f}  {r.upper:10.6f}  {r.gap:10.6f}  {r.seconds:6.2f}")
        return "\n".join(lines)


def _sandwich_row(args):
    instance, M, N = args
    t0 = time.perf_counter()
    lat = build_lattice(instance, M)
    try:
        lo = solve_primal(instance, lat, N).value
        up = solve_dual(instance, lat, N).value
    except Exception as exc:
        raise type(exc)(f"row N={N}: {exc}") from exc
    return SandwichRow(float(N), lo, up, time.perf_counter() - t0)


def sandwich(instance: ProblemInstance, Ns, M: int, threads: int = 1) -> SandwichReport:
    Ns = [float(n) for n in Ns]
    if not Ns:
        raise UsageError("need at least one truncation level")
    jobs = [(instance, M, N) for N in Ns]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(_sandwich_row, jobs))
    else:
        rows = [_sandwich_row(j) for j in jobs]
    rep = SandwichReport(rows, fingerprint(instance), M)
    rep.issues = rep.check()
    return rep


def cmd_sandwich(args) -> int:
    inst = load_instance(args.config)
    rep = sandwich(inst, args.Ns, args.steps, args.threads)
    print(f"# fingerprint sha256:{rep.fingerprint}  M={rep.M}")
    print(rep.table())
    for msg in rep.issues:
        print(f"warning: {msg}")
    path = _out(args, "sandwich.csv")
    if path:
        _write_csv(path, _header(inst, M=rep.M), ["N", "lower", "upper", "gap"], [(r.N, r.lower, r.upper, r.gap) for r in rep.rows])
    return EXIT_OK


# -- value -----------------------------------------------------------------------------------


@dataclass
class ValueReport:
    lower: float
    upper: float
    N: float
    converged: bool
    kernel: np.ndarray | None = None
    atoms: np.ndarray | None = None

    @property
    def value(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def gap(self) -> float:
        return self.upper - self.lower


def _atom_bounds(instance, M, N):
    """Per-atom ``(weight, lower PL in r, upper PL in r)`` for the initial kernel layer."""
    PT = expm(instance.chain, instance.T)
    alpha, beta = PT[1, 0], PT[0, 0] - PT[1, 0]
    out = []
    for y, w in instance.diffusion.y0_atoms:
        sub = instance.with_start(y)
        lat = build_lattice(sub, M)
        lo = solve_primal(sub, lat, N).value_at.restrict(0.0, 1.0)
        W = solve_dual(sub, lat, N).root_W
        # r -> -W*(pi1(r)), pi1 affine in the kernel weight r
        up = affine_compose(conjugate(W), beta, alpha).negate()
        if up.lo > 0.0 or up.hi < 1.0:
            raise DualUnboundedError(f"upper bound at y={y[0]:g} is infinite for some kernels at N={N}")
        up = up.restrict(0.0, 1.0)
        out.append((float(w), lo, up))
    return out


def value(instance: ProblemInstance, M: int, N_max: float = 64.0, tol: float = 1e-5, N_start: float = 0.25) -> ValueReport:
    """Double ``N`` until the sandwich gap is below ``tol`` or ``N`` exceeds ``N_max``."""
    multi = len(instance.diffusion.y0_atoms) > 1
    N = N_start
    best = None
    while True:
        if multi:
            try:
                bounds = _atom_bounds(instance, M, N)
            except (DomainError, UnboundedError, DualUnboundedError):
                bounds = None
            if bounds is not None:
                mu0 = instance.chain.p0
                lo = solve_initial([(w, f) for w, f, _ in bounds], mu0)
                up = solve_initial([(w, g) for w, _, g in bounds], mu0)
                rep = ValueReport(lo.value, up.value, N, False, lo.kernel, np.array([y[0] for y, _ in instance.diffusion.y0_atoms]))
            else:
                rep = None
        else:
            lat = build_lattice(instance, M)
            rep = ValueReport(solve_primal(instance, lat, N).value, solve_dual(instance, lat, N).value, N, False)
        if rep is not None and (best is None or rep.gap < best.gap):
            best = rep
        if best is not None and best.gap <= tol:
            best.converged = True
            return best
        if N * 2 > N_max:
            if best is None:
                raise DualUnboundedError(f"no finite upper bound up to N={N}")
            return best
        N *= 2


def cmd_value(args) -> int:
    inst = load_instance(args.config)
    rep = value(inst, args.steps, args.n_max, args.tol)
    status = "converged" if rep.converged else "warning: tolerance not reached"
    print(f"# fingerprint sha256:{fingerprint(inst)}  M={args.steps}")
    print(f"value {rep.value:.6f}  lower {rep.lower:.6f}  upper {rep.upper:.6f}  gap {rep.gap:.2e}  N {rep.N:g}  {status}")
    if rep.kernel is not None:
        for y, k in zip(rep.atoms, rep.kernel):
            print(f"  atom y={y:g}: R = ({k[0]:.6f}, {k[1]:.6f})")
    return EXIT_OK


# -- single solvers --------------------------------------------------------------------------


def _pwl_rows(f):
    return [(x, y) for x, y in zip(f.xs, f.ys)]


def cmd_primal(args) -> int:
    inst = load_instance(args.config)
    lat = build_lattice(inst, args.steps)
    res = solve_primal(inst, lat, args.N)
    print(f"primal M={args.steps} N={args.N:g}: {res.value:.6f}")
    path = _out(args, "primal.csv")
    if path:
        _write_csv(path, _header(inst, M=args.steps, N=_r(args.N)), ["q", "V"], _pwl_rows(res.value_at))
    return EXIT_OK


def cmd_dual(args) -> int:
    inst = load_instance(args.config)
    lat = build_lattice(inst, args.steps)
    res = solve_dual(inst, lat, args.N)
    print(f"dual M={args.steps} N={args.N:g}: {res.value:.6f}  static multiplier {res.static_multiplier.tolist()}")
    path = _out(args, "dual.csv")
    if path:
        _write_csv(path, _header(inst, M=args.steps, N=_r(args.N)), ["d", "W"], _pwl_rows(res.root_W))
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.paths < 1 or args.steps < 1:
        raise UsageError("--paths and --steps must be positive")
    inst = load_instance(args.config)
    control, label = None, "zero"
    if args.policy_N is not None:
        lat = build_lattice(inst, args.policy_M)
        control = lattice_policy_control(solve_primal(inst, lat, args.policy_N, keep_nodes=True))
        label = f"lattice(M={args.policy_M},N={args.policy_N:g})"
    batch = simulate(inst, control, args.paths, args.steps, args.seed, record_every=args.record_every, control_label=label)
    mean, se = estimate_cost(batch)
    rep = martingale_check(batch, inst.chain)
    print(f"cost {mean:.6f} +- {se:.6f}  control {label}")
    print(f"martingale max deviation {rep.max_deviation:.3e}  ok={rep.ok}  clamped mass/path {batch.clamped_mass.mean():.3e}")
    path = _out(args, "paths.csv")
    if path:
        dump_paths_csv(batch, path, _header(inst, seed=args.seed, steps=args.steps, control=label))
    return EXIT_OK


def cmd_hjb(args) -> int:
    inst = load_instance(args.config)
    grid = solve_truncated_hjb(inst, args.N, (args.nt, args.ny, args.np), tuple(args.y_domain) if args.y_domain else None)
    y0 = float(inst.diffusion.y0[0])
    p0 = float(inst.chain.p0[0])
    v = grid.value(y0, p0)
    lat = build_lattice(inst, args.steps)
    ref = solve_primal(inst, lat, args.N).value
    print(f"hjb N={args.N:g} steps={grid.n_steps}: V(0,{y0:g},{p0:g}) = {v:.6f}  lattice(M={args.steps}) {ref:.6f}  gap {v - ref:+.6f}")
    path = _out(args, "hjb.csv")
    if path:
        dump_hjb_csv(grid, path, _header(inst, N=_r(args.N), n_t=grid.n_steps))
    return EXIT_OK


def cmd_follower(args) -> int:
    if args.kind == "one":
        fg = solve_follower_onesided(args.a, args.T, args.nz)
    else:
        fg = solve_follower_twosided(args.a, args.b, args.T, args.nz, bounds=args.bounds)
    v = value_from_follower(fg, 0.0, args.y, args.p)
    print(f"follower {fg.kind} a={args.a:g} b={args.b:g}: V(0,{args.y:g},{args.p:g}) = {v:.6f}  b(0) = {fg.boundary[0]:.6f}")
    path = _out(args, "follower.csv")
    if path:
        every = max(1, fg.t.size // 100)
        dump_follower_csv(fg, path, _header(None, kind=fg.kind, a=_r(args.a), b=_r(args.b)), every=every)
    return EXIT_OK


def cmd_closedform(args) -> int:
    ex = ConstantChainExample(np.array(args.xs), np.array(args.p), args.tau, args.y)
    print(f"L(p) {L(ex):.6f}  v_term {v_term(ex):.6f}")
    return EXIT_OK


def cmd_initial(args) -> int:
    inst = load_instance(args.config)
    bounds = _atom_bounds(inst, args.steps, args.N)
    sol = solve_initial([(w, f) for w, f, _ in bounds], inst.chain.p0)
    print(f"initial layer M={args.steps} N={args.N:g}: value {sol.value:.6f}")
    atoms = [y[0] for y, _ in inst.diffusion.y0_atoms]
    for y, k in zip(atoms, sol.kernel):
        print(f"  atom y={y:g}: R = ({k[0]:.6f}, {k[1]:.6f})")
    path = _out(args, "initial.csv")
    if path:
        _write_csv(path, _header(inst, M=args.steps, N=_r(args.N)), ["y", "R1", "R2"], [(float(y), k[0], k[1]) for y, k in zip(atoms, sol.kernel)])
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------------


def _common(p, steps=12, config=True):
    if config:
        p.add_argument("--config", required=True, help="instance JSON")
    p.add_argument("--steps", type=int, default=steps, help="lattice or time steps M")
    p.add_argument("--out", default=None, help="directory for CSV output")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="causal-ot", description="Causal transport between a Markov chain and a diffusion.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sandwich", help="lattice lower/upper bounds for several N")
    _common(p)
    p.add_argument("--Ns", type=float, nargs="*", default=[0, 0.25, 0.5, 1, 2, 5, 10])
    p.set_defaults(func=cmd_sandwich)

    p = sub.add_parser("value", help="double N until the sandwich closes")
    _common(p)
    p.add_argument("--n-max", type=float, default=64.0)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_value)

    for name, fn in (("primal", cmd_primal), ("dual", cmd_dual)):
        p = sub.add_parser(name, help=f"{name} lattice value")
        _common(p)
        p.add_argument("--N", type=float, required=True)
        p.set_defaults(func=fn)

    p = sub.add_parser("simulate", help="Monte Carlo for the controlled filter")
    _common(p, steps=1000)
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--record-every", type=int, default=10)
    p.add_argument("--policy-N", type=float, default=None, help="use the lattice policy at this N")
    p.add_argument("--policy-M", type=int, default=12)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("hjb", help="finite-difference truncated HJB")
    _common(p)
    p.add_argument("--N", type=float, required=True)
    p.add_argument("--nt", type=int, default=None, help="time steps (default: smallest stable)")
    p.add_argument("--ny", type=int, default=161)
    p.add_argument("--np", type=int, default=81)
    p.add_argument("--y-domain", type=float, nargs=2, default=None)
    p.set_defaults(func=cmd_hjb)

    p = sub.add_parser("follower", help="gradient-constrained follower problems")
    _common(p, config=False)
    p.add_argument("--kind", choices=["one", "two"], default="two")
    p.add_argument("--a", type=float, default=0.5)
    p.add_argument("--b", type=float, default=0.5)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--nz", type=int, default=401)
    p.add_argument("--y", type=float, default=0.0)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--bounds", choices=["derived", "literal"], default="derived")
    p.set_defaults(func=cmd_follower)

    p = sub.add_parser("closedform", help="frozen-chain closed form")
    _common(p, config=False)
    p.add_argument("--xs", type=float, nargs="+", default=[-1.0, 1.0])
    p.add_argument("--p", type=float, nargs="+", default=[0.5, 0.5])
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--y", type=float, default=0.0)
    p.set_defaults(func=cmd_closedform)

    p = sub.add_parser("initial", help="kernel layer for a multi-atom initial law")
    _common(p)
    p.add_argument("--N", type=float, default=10.0)
    p.set_defaults(func=cmd_initial)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        ap.error(str(exc))
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, UnsupportedError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CFLError, DualUnboundedError, UnboundedError, ResolutionError, SimulationError, FloatingPointError) as exc:
        print(f"numerical refusal: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, PwlError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # pragma: no cover
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
