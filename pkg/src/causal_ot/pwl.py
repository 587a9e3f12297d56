"""Exact algebra of one-dimensional piecewise-linear convex/concave functions.

A :class:`PwlFn` stores its breakpoints ``xs`` (strictly increasing), the values ``ys`` at
them, and optional slopes ``left``/``right`` of unbounded end rays.  A missing ray means
the domain stops at that end.  Every constructor canonicalises: collinear breakpoints are
merged and the slope sequence is checked against the declared kind.

Floating-point noise is handled by a rounding-aware slope tolerance: two adjacent slopes
are merged when they differ by less than ``1e-13`` relative plus the error a value
perturbation of a few ulps can induce over the adjacent segment lengths.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "PwlError",
    "DomainError",
    "DegenerateError",
    "InfeasibleError",
    "UnboundedError",
    "KindError",
    "PwlFn",
    "eval_pwl",
    "add",
    "affine_compose",
    "windowed_pair_max",
    "window_argmax",
    "inf_convolve",
    "conjugate",
    "legendre",
    "scale_add",
    "simplify",
]

CONVEX = "convex"
CONCAVE = "concave"
SLOPE_RTOL = 1e-13
_EPS = np.finfo(float).eps
_DOMAIN_ATOL = 1e-12


class PwlError(ValueError):
    pass


class DomainError(PwlError):
    pass


class DegenerateError(PwlError):
    pass


class InfeasibleError(PwlError):
    pass


class UnboundedError(PwlError):
    pass


class KindError(PwlError):
    pass


def _sign(kind):
    if kind == CONVEX:
        return 1.0
    if kind == CONCAVE:
        return -1.0
    raise KindError(f"unknown kind {kind!r}")


def _flip(kind):
    return CONCAVE if kind == CONVEX else CONVEX


def _canonical(kind, xs, ys, left, right):
    """Merge collinear breakpoints and validate slope monotonicity for ``kind``."""
    sgn = _sign(kind)
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape or xs.size == 0:
        raise PwlError("breakpoints and values must be equal-length non-empty 1-D arrays")
    if not np.isfinite(xs.sum() + ys.sum()):
        raise PwlError("non-finite breakpoint data")
    if xs.size > 1:
        dx = xs[1:] - xs[:-1]
        dmin = dx.min()
        if dmin <= 0:
            raise PwlError("breakpoints must be strictly increasing")
        # near-coincident points carry no slope information; keep the domain ends
        tiny = 64 * _EPS * max(xs[-1] - xs[0], 1.0)
        if dmin <= tiny and xs.size > 2:
            close = dx <= tiny
            keep = np.ones(xs.size, dtype=bool)
            keep[1:-1] = ~close[:-1]
            if close[-1]:
                keep[-2] = False
            keep[0] = keep[-1] = True
            xs, ys = xs[keep], ys[keep]
    yscale = max(1.0, float(np.abs(ys).max()))
    bounded = left is None and right is None
    off = 0 if left is None else 1
    while xs.size > 1:
        n = xs.size
        dx = xs[1:] - xs[:-1]
        sl = (ys[1:] - ys[:-1]) / dx
        lens = dx
        if not bounded:
            # rays have exact slopes, i.e. infinite length for the noise estimate
            sl = np.concatenate(([left] if left is not None else [], sl, [right] if right is not None else []))
            lens = np.concatenate(([np.inf] if left is not None else [], dx, [np.inf] if right is not None else []))
        if sl.size < 2:
            break
        ds = sl[1:] - sl[:-1]
        a = np.abs(sl)
        inv = 1.0 / lens
        tol = SLOPE_RTOL * np.maximum(1.0, np.maximum(a[:-1], a[1:])) + 8 * _EPS * yscale * (inv[:-1] + inv[1:])
        merge = np.abs(ds) <= tol
        # junction k sits between slope k and k+1, i.e. at breakpoint index k + 1 - off
        idx = np.flatnonzero(merge) + 1 - off
        if left is None and idx.size and idx[0] == 0:
            idx = idx[1:]
        if right is None and idx.size and idx[-1] == n - 1:
            idx = idx[:-1]
        if idx.size == 0:
            if np.any((sgn * ds < 0) & ~merge):
                k = int(np.argmax((sgn * ds < 0) & ~merge))
                raise KindError(f"slopes violate {kind}ity at x={xs[k + 1 - off]!r}: {sl[k]!r} then {sl[k + 1]!r}")
            break
        # never drop two neighbours in one pass: a run of short segments could otherwise
        # swallow the kink it surrounds; the next pass re-tests the survivors
        if idx.size > 1:
            starts = np.r_[True, np.diff(idx) != 1]
            run_id = np.cumsum(starts) - 1
            pos = np.arange(idx.size) - np.flatnonzero(starts)[run_id]
            idx = idx[pos % 2 == 0]
        mask = np.ones(n, dtype=bool)
        mask[idx] = False
        xs, ys = xs[mask], ys[mask]
    if xs.size == 1 and left is not None and right is not None:
        if sgn * (right - left) < -SLOPE_RTOL * max(1.0, abs(left), abs(right)):
            raise KindError(f"ray slopes violate {kind}ity")
    return xs, ys


class PwlFn:
    """Immutable piecewise-linear convex or concave function of one variable."""

    __slots__ = ("kind", "xs", "ys", "left", "right")

    def __init__(self, kind, xs, ys, left=None, right=None, *, _canon=True):
        _sign(kind)
        left = None if left is None else float(left)
        right = None if right is None else float(right)
        if _canon:
            xs, ys = _canonical(kind, xs, ys, left, right)
        else:
            xs = np.asarray(xs, dtype=float)
            ys = np.asarray(ys, dtype=float)
        xs.setflags(write=False)
        ys.setflags(write=False)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    def __setattr__(self, name, value):
        raise AttributeError("PwlFn is immutable")

    # -- constructors ---------------------------------------------------------------
    @classmethod
    def linear(cls, kind, slope, intercept, lo=-np.inf, hi=np.inf):
        if np.isfinite(lo) and np.isfinite(hi):
            xs = [lo, hi] if hi > lo else [lo]
        elif np.isfinite(lo):
            xs = [lo]
        elif np.isfinite(hi):
            xs = [hi]
        else:
            xs = [0.0]
        xs = np.asarray(xs, dtype=float)
        return cls(
            kind,
            xs,
            slope * xs + intercept,
            left=None if np.isfinite(lo) else slope,
            right=None if np.isfinite(hi) else slope,
        )

    @classmethod
    def abs(cls, lo=-np.inf, hi=np.inf):
        """``|x|`` (convex) on ``[lo, hi]``."""
        xs = [x for x in (lo, 0.0, hi) if np.isfinite(x)]
        xs = np.asarray(sorted(set(xs)), dtype=float)
        return cls(CONVEX, xs, np.abs(xs), left=None if np.isfinite(lo) else -1.0, right=None if np.isfinite(hi) else 1.0)

    @classmethod
    def indicator(cls, x0, value=0.0, kind=CONVEX):
        """Function defined only at ``x0``."""
        return cls(kind, [x0], [value])

    # -- basic queries ----------------------------------------------------------------
    @property
    def lo(self) -> float:
        return -np.inf if self.left is not None else float(self.xs[0])

    @property
    def hi(self) -> float:
        return np.inf if self.right is not None else float(self.xs[-1])

    @property
    def domain(self):
        return self.lo, self.hi

    @property
    def slopes(self) -> np.ndarray:
        """Slopes of the bounded segments between consecutive breakpoints."""
        return np.diff(self.ys) / np.diff(self.xs)

    @property
    def all_slopes(self) -> np.ndarray:
        """Segment slopes including end rays, in order."""
        return np.concatenate(
            (
                [self.left] if self.left is not None else [],
                self.slopes,
                [self.right] if self.right is not None else [],
            )
        )

    def __len__(self):
        return self.xs.size

    def __repr__(self):
        return (
            f"PwlFn({self.kind}, xs={np.array2string(self.xs, precision=6)}, "
            f"ys={np.array2string(self.ys, precision=6)}, left={self.left}, right={self.right})"
        )

    def __call__(self, x):
        return eval_pwl(self, x)

    def contains(self, x, atol=_DOMAIN_ATOL) -> bool:
        return self.lo - atol <= x <= self.hi + atol

    def is_valid(self) -> bool:
        """Exact slope-monotonicity check on the stored canonical form."""
        s = self.all_slopes
        return bool(np.all(_sign(self.kind) * np.diff(s) >= 0)) if s.size > 1 else True

    # -- algebra ---------------------------------------------------------------------
    def negate(self) -> "PwlFn":
        return PwlFn(
            _flip(self.kind),
            self.xs.copy(),
            -self.ys,
            None if self.left is None else -self.left,
            None if self.right is None else -self.right,
            _canon=False,
        )

    def restrict(self, lo, hi) -> "PwlFn":
        lo2 = max(lo, self.lo)
        hi2 = min(hi, self.hi)
        if hi2 < lo2:
            if lo2 - hi2 <= _DOMAIN_ATOL:
                hi2 = lo2
            else:
                raise DomainError(f"empty restriction [{lo}, {hi}] of domain {self.domain}")
        if lo2 == self.lo and hi2 == self.hi:
            return self
        inner = (self.xs > lo2) & (self.xs < hi2)
        xs = self.xs[inner]
        pts = list(xs)
        if np.isfinite(lo2):
            pts = [lo2] + pts
        if np.isfinite(hi2) and hi2 > lo2:
            pts = pts + [hi2]
        if not pts:
            pts = [float(self.xs[0])] if self.xs.size else [0.0]
        pts = np.asarray(pts)
        return PwlFn(
            self.kind,
            pts,
            eval_pwl(self, pts),
            left=self.left if not np.isfinite(lo2) else None,
            right=self.right if not np.isfinite(hi2) else None,
        )

    def __add__(self, other):
        if isinstance(other, PwlFn):
            return add(self, other)
        return PwlFn(self.kind, self.xs.copy(), self.ys + float(other), self.left, self.right, _canon=False)

    def shift(self, c: float) -> "PwlFn":
        return self + c

    def segments(self):
        """Bounded segments as ``(x_start, x_end, slope)`` rows."""
        if self.xs.size < 2:
            return np.empty((0, 3))
        return np.column_stack((self.xs[:-1], self.xs[1:], self.slopes))

    def argmax(self):
        """Maximiser and maximum of a concave function (smallest maximiser on ties)."""
        if self.kind != CONCAVE:
            raise KindError("argmax needs a concave function")
        if (self.left is not None and self.left < 0) or (self.right is not None and self.right > 0):
            raise UnboundedError("concave function unbounded above")
        k = int(np.argmax(self.ys))
        return float(self.xs[k]), float(self.ys[k])

    def argmin(self):
        if self.kind != CONVEX:
            raise KindError("argmin needs a convex function")
        x, v = self.negate().argmax()
        return x, -v


def eval_pwl(f: PwlFn, x):
    """Evaluate ``f`` at scalar or array ``x``; outside the domain raises :class:`DomainError`."""
    xa = np.asarray(x, dtype=float)
    lo, hi = f.lo, f.hi
    tol = _DOMAIN_ATOL * max(1.0, abs(lo) if np.isfinite(lo) else 1.0, abs(hi) if np.isfinite(hi) else 1.0)
    if np.any(xa < lo - tol) or np.any(xa > hi + tol) or np.any(np.isnan(xa)):
        raise DomainError(f"point outside domain [{lo}, {hi}]")
    out = np.interp(xa, f.xs, f.ys)
    if f.left is not None:
        m = xa < f.xs[0]
        if np.any(m):
            out = np.where(m, f.ys[0] + f.left * (xa - f.xs[0]), out)
    if f.right is not None:
        m = xa > f.xs[-1]
        if np.any(m):
            out = np.where(m, f.ys[-1] + f.right * (xa - f.xs[-1]), out)
    return float(out) if np.ndim(x) == 0 else out


def add(f: PwlFn, g: PwlFn) -> PwlFn:
    """Pointwise sum on the intersection of the domains."""
    if f.kind != g.kind:
        raise KindError("cannot add a convex and a concave function")
    lo = max(f.lo, g.lo)
    hi = min(f.hi, g.hi)
    if hi < lo - _DOMAIN_ATOL:
        raise DomainError("domains do not intersect")
    hi = max(hi, lo)
    xs = np.union1d(f.xs, g.xs)
    xs = xs[(xs > lo) & (xs < hi)]
    pts = np.concatenate(([lo] if np.isfinite(lo) else [], xs, [hi] if np.isfinite(hi) and hi > lo else []))
    if pts.size == 0:
        pts = np.array([0.0])
    left = f.left + g.left if not np.isfinite(lo) else None
    right = f.right + g.right if not np.isfinite(hi) else None
    return PwlFn(f.kind, pts, eval_pwl(f, pts) + eval_pwl(g, pts), left, right)


def affine_compose(f: PwlFn, a: float, b: float, domain=None) -> PwlFn:
    """``x -> f(a*x + b)``, optionally restricted to ``domain`` (whose image must lie in f's domain)."""
    if a == 0:
        raise DegenerateError("affine_compose with a = 0")
    xs = (f.xs - b) / a
    ys = f.ys.copy()
    left = None if f.left is None else a * f.left
    right = None if f.right is None else a * f.right
    if a < 0:
        xs, ys = xs[::-1].copy(), ys[::-1].copy()
        left, right = right, left
    # pullback of strictly increasing breakpoints can only collide through rounding
    g = PwlFn(f.kind, xs, ys, left, right, _canon=xs.size < 2 or bool(np.any(np.diff(xs) <= 0)))
    if domain is not None:
        lo, hi = domain
        tol = _DOMAIN_ATOL * max(1.0, abs(lo) if np.isfinite(lo) else 1.0, abs(hi) if np.isfinite(hi) else 1.0)
        if lo < g.lo - tol or hi > g.hi + tol:
            raise DomainError(f"image of [{lo}, {hi}] escapes the domain {f.domain}")
        g = g.restrict(max(lo, g.lo), min(hi, g.hi))
    return g


def scale_add(f: PwlFn, c: float, affine=(0.0, 0.0), *, kind=None, allow_flip=False) -> PwlFn:
    """``c*f + (slope*x + intercept)``.

    ``c < 0`` flips convexity and must be acknowledged with ``allow_flip``; ``c == 0`` returns
    the affine part on f's domain with ``kind`` (default: f's kind).
    """
    slope, intercept = affine
    if c < 0 and not allow_flip:
        raise KindError("negative scale flips convexity; pass allow_flip=True")
    if c == 0:
        return PwlFn.linear(kind or f.kind, slope, intercept, f.lo, f.hi)
    new_kind = f.kind if c > 0 else _flip(f.kind)
    return PwlFn(
        new_kind,
        f.xs.copy(),
        c * f.ys + slope * f.xs + intercept,
        None if f.left is None else c * f.left + slope,
        None if f.right is None else c * f.right + slope,
    )


def conjugate(f: PwlFn) -> PwlFn:
    """Fenchel conjugate ``f*(s) = sup_x s*x - f(x)`` of a convex PL function, again convex PL."""
    if f.kind != CONVEX:
        raise KindError("conjugate needs a convex function")
    xs, ys = f.xs, f.ys
    n = xs.size
    seg = f.slopes
    # breakpoints of f* are the slopes of f; the slope of f* between two of them is the junction x
    s_pts = []
    vals = []
    if f.left is not None:
        s_pts.append(f.left)
        vals.append(f.left * xs[0] - ys[0])
    if n > 1:
        s_pts.extend(seg)
        vals.extend(seg * xs[1:] - ys[1:])
    if f.right is not None:
        s_pts.append(f.right)
        vals.append(f.right * xs[-1] - ys[-1])
    if not s_pts:
        # f is a point indicator: f* is linear with slope xs[0]
        return PwlFn.linear(CONVEX, xs[0], -ys[0])
    s_pts = np.asarray(s_pts)
    vals = np.asarray(vals)
    left = xs[0] if f.left is None else None
    right = xs[-1] if f.right is None else None
    return PwlFn(CONVEX, s_pts, vals, left, right)


def legendre(f: PwlFn, s: float) -> float:
    """Exact ``f*(s)``; raises :class:`UnboundedError` when ``s`` is outside f's slope range."""
    if f.kind != CONVEX:
        raise KindError("legendre needs a convex function")
    tol = SLOPE_RTOL * max(1.0, abs(s))
    if (f.left is not None and s < f.left - tol) or (f.right is not None and s > f.right + tol):
        raise UnboundedError(f"slope {s!r} outside [{f.left}, {f.right}]: conjugate is +inf")
    return float(np.max(s * f.xs - f.ys))


def inf_convolve(f: PwlFn, g: PwlFn) -> PwlFn:
    """``(f box g)(x) = min_y f(y) + g(x - y)`` via ``(f box g)* = f* + g*``."""
    if f.kind != CONVEX or g.kind != CONVEX:
        raise KindError("inf_convolve needs convex functions")
    fc, gc = conjugate(f), conjugate(g)
    if max(fc.lo, gc.lo) > min(fc.hi, gc.hi) + _DOMAIN_ATOL:
        raise UnboundedError("slope ranges do not overlap: the infimal convolution is -inf")
    return conjugate(add(fc, gc))


# -- windowed pair maximisation ------------------------------------------------------------


def _supconv_path(A: PwlFn, B: PwlFn, lo: float, hi: float):
    """Vertices ``(S, D)`` of the maximiser path of ``max_{u+v=S} A(u)+B(v)`` on ``[lo, hi]^2``.

    ``D = (u - v)/2`` at the maximiser; between vertices both are linear in ``S``.
    """
    la = np.diff(A.xs)
    lb = np.diff(B.xs)
    slopes = np.concatenate((A.slopes, B.slopes))
    lens = np.concatenate((la, lb))
    which = np.concatenate((np.zeros(la.size), np.ones(lb.size)))
    order = np.argsort(-slopes, kind="stable")
    du = np.where(which[order] == 0, lens[order], 0.0)
    dv = np.where(which[order] == 1, lens[order], 0.0)
    U = lo + np.concatenate(([0.0], np.cumsum(du)))
    V = lo + np.concatenate(([0.0], np.cumsum(dv)))
    U[-1] = hi
    V[-1] = hi
    return U + V, 0.5 * (U - V)


def _window_setup(A, B, r, clip):
    if A.kind != CONCAVE or B.kind != CONCAVE:
        raise KindError("windowed_pair_max needs concave functions")
    if r < 0:
        raise PwlError("window radius must be non-negative")
    clo, chi = (-np.inf, np.inf) if clip is None else clip
    lo = max(clo, A.lo, B.lo)
    hi = min(chi, A.hi, B.hi)
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise PwlError("windowed_pair_max needs a bounded clip or bounded domains")
    if hi < lo:
        raise InfeasibleError(f"no feasible centre: clip/domains intersect to [{lo}, {hi}]")
    return lo, hi


def _radius(m, r, lo, hi):
    return np.minimum(r, np.minimum(m - lo, hi - m))


def window_argmax(A: PwlFn, B: PwlFn, r: float, clip, m):
    """Optimal offset ``delta`` of ``max_{|delta| <= R(m)} (A(m+delta) + B(m-delta))/2``.

    ``R(m) = min(r, distance from m to the clip boundary)``.  Any maximiser of the
    unwindowed problem, projected onto ``[-R, R]``, is optimal by concavity in ``delta``.
    """
    lo, hi = _window_setup(A, B, r, clip)
    m = np.asarray(m, dtype=float)
    if np.any(m < lo - _DOMAIN_ATOL) or np.any(m > hi + _DOMAIN_ATOL):
        raise InfeasibleError("centre outside the feasible window")
    m = np.clip(m, lo, hi)
    if r == 0 or hi == lo:
        return np.zeros_like(m)
    A = A.restrict(lo, hi)
    B = B.restrict(lo, hi)
    S, D = _supconv_path(A, B, lo, hi)
    R = _radius(m, r, lo, hi)
    return np.clip(np.interp(2 * m, S, D), -R, R)


def _crossings(ms, e):
    """Roots of the PL function with values ``e`` at sorted ``ms`` (linear in between)."""
    sgn = np.sign(e)
    k = np.flatnonzero(sgn[:-1] * sgn[1:] < 0)
    if k.size == 0:
        return np.empty(0)
    return ms[k] + (ms[k + 1] - ms[k]) * e[k] / (e[k] - e[k + 1])


def _preimages(ms, u, targets):
    """Points where the non-decreasing PL map with values ``u`` at ``ms`` hits ``targets``."""
    t = targets[(targets > u[0]) & (targets < u[-1])]
    if t.size == 0:
        return t
    # u[k] <= t < u[k+1]; exact hits are already vertices
    k = np.searchsorted(u, t, side="right") - 1
    keep = u[k] < t
    k, t = k[keep], t[keep]
    return ms[k] + (ms[k + 1] - ms[k]) * (t - u[k]) / (u[k + 1] - u[k])


def windowed_pair_max(A: PwlFn, B: PwlFn, r: float, clip=None, domain=None) -> PwlFn:
    """Exact ``g(m) = max_{|delta| <= min(r, dist(m, clip^c))} (A(m+delta) + B(m-delta))/2``.

    ``A`` and ``B`` are concave; the result is concave PL on ``clip`` intersected with both
    domains (or on ``domain`` if given, which must lie inside that set).
    """
    lo, hi = _window_setup(A, B, r, clip)
    if domain is not None:
        dlo, dhi = domain
        if dlo < lo - _DOMAIN_ATOL or dhi > hi + _DOMAIN_ATOL:
            raise InfeasibleError(f"requested domain [{dlo}, {dhi}] has centres with empty window")
    A = A.restrict(lo, hi)
    B = B.restrict(lo, hi)
    if r == 0 or hi == lo:
        g = add(A, B)
        g = PwlFn(CONCAVE, g.xs.copy(), 0.5 * g.ys, _canon=False)
        return g if domain is None else g.restrict(*domain)

    S, D = _supconv_path(A, B, lo, hi)
    # breakpoints of the unwindowed offset, of R(m), and where the offset meets +-R(m)
    base = np.concatenate((S / 2, [lo, hi, lo + r, hi - r, 0.5 * (lo + hi)]))
    base = np.unique(base[(base >= lo) & (base <= hi)])
    dstar = np.interp(2 * base, S, D)
    R = _radius(base, r, lo, hi)
    cross = np.concatenate((_crossings(base, dstar - R), _crossings(base, dstar + R)))
    ms = np.unique(np.concatenate((base, cross)))
    c = np.clip(np.interp(2 * ms, S, D), -_radius(ms, r, lo, hi), _radius(ms, r, lo, hi))
    u = ms + c
    v = ms - c
    extra = np.concatenate(
        (_preimages(ms, np.maximum.accumulate(u), A.xs), _preimages(ms, np.maximum.accumulate(v), B.xs))
    )
    if extra.size:
        ms = np.unique(np.concatenate((ms, extra)))
        Rm = _radius(ms, r, lo, hi)
        c = np.clip(np.interp(2 * ms, S, D), -Rm, Rm)
        u = ms + c
        v = ms - c
    u = np.clip(u, lo, hi)
    v = np.clip(v, lo, hi)
    vals = 0.5 * (np.interp(u, A.xs, A.ys) + np.interp(v, B.xs, B.ys))
    g = PwlFn(CONCAVE, ms, vals)
    return g if domain is None else g.restrict(*domain)


def simplify(f: PwlFn, eps: float) -> PwlFn:
    """Drop breakpoints while staying within ``eps`` of ``f`` (Douglas-Peucker on the vertices).

    The result interpolates a subset of the vertices, so it keeps the kind, the domain ends
    and the rays, and lies on one side of ``f``: below for concave, above for convex.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    n = f.xs.size
    if eps == 0 or n <= 2:
        return f
    xs, ys = f.xs, f.ys
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        t = (xs[i + 1 : j] - xs[i]) / (xs[j] - xs[i])
        err = np.abs(ys[i + 1 : j] - (ys[i] + t * (ys[j] - ys[i])))
        k = int(np.argmax(err))
        if err[k] > eps:
            k += i + 1
            keep[k] = True
            stack.append((i, k))
            stack.append((k, j))
    if keep.all():
        return f
    return PwlFn(f.kind, xs[keep], ys[keep], f.left, f.right)
