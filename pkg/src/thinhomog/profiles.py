"""Boundary profiles G(x, y): positive, L-periodic in y, piecewise C^1 in x.

A :class:`Profile` is what the user writes down (constant, one expression, or
expressions on a partition of (0, 1)).  :func:`build_piecewise_approx` turns a
locally periodic profile into a :class:`PiecewiseProfile`, i.e. a profile
that is purely periodic on each interval of a partition and lies within
``delta`` above the original one.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .expr import Binary, Const, parse_expression

__all__ = [
    "Profile",
    "PiecewiseProfile",
    "ValidationReport",
    "PartitionError",
    "ProfileError",
    "validate_hypothesis",
    "build_piecewise_approx",
    "c1_distance",
]

FD_STEP = 1e-6


class ProfileError(ValueError):
    pass


class PartitionError(RuntimeError):
    """The requested delta needs more intervals than allowed."""

    def __init__(self, message, needed_length=None):
        super().__init__(message)
        self.needed_length = needed_length


def _check_breakpoints(bp):
    bp = tuple(float(b) for b in bp)
    if len(bp) < 2 or bp[0] != 0.0 or bp[-1] != 1.0:
        raise ProfileError("breakpoints must start at 0 and end at 1")
    if any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
        raise ProfileError("breakpoints must be strictly increasing")
    return bp


class _PiecewiseEval:
    """Shared evaluation for anything defined by expressions on a partition."""

    breakpoints: tuple
    pieces: tuple

    def interval_index(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.breakpoints, x, side="right") - 1
        return np.clip(idx, 0, len(self.pieces) - 1)

    def __call__(self, x, y, side=None):
        """Evaluate G(x, y).  At a breakpoint the right-hand piece is used
        unless ``side="left"``."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        if len(self.pieces) == 1:
            out = self.pieces[0].evaluate(x, y)
            return out if np.ndim(out) else float(out)
        if side == "left":
            idx = np.searchsorted(self.breakpoints, x, side="left") - 1
            idx = np.clip(idx, 0, len(self.pieces) - 1)
        else:
            idx = self.interval_index(x)
        out = np.empty(x.shape)
        for i, piece in enumerate(self.pieces):
            mask = idx == i
            if np.any(mask):
                out[mask] = piece.evaluate(x[mask], y[mask])
        return out if out.ndim else float(out)

    def dy(self, x, y, h=FD_STEP):
        """Central finite-difference estimate of dG/dy."""
        y = np.asarray(y, dtype=float)
        return (self(x, y + h) - self(x, y - h)) / (2 * h)

    @property
    def x_independent(self) -> bool:
        return len(self.pieces) == 1 and "x" not in self.pieces[0].variables()


@dataclass(frozen=True, eq=False)
class Profile(_PiecewiseEval):
    """A boundary profile G(x, y) with declared bounds G0 <= G <= G1, L-periodic in y.

    ``pieces`` holds one expression per interval of ``breakpoints``; the
    ``constant`` and ``expr`` kinds are the single-interval special cases.
    """

    kind: str
    pieces: tuple
    breakpoints: tuple = (0.0, 1.0)
    L: float = 1.0
    G0: float = None
    G1: float = None
    M: float = None

    def __post_init__(self):
        if self.kind not in ("constant", "expr", "piecewise"):
            raise ProfileError(f"unknown profile kind {self.kind!r}")
        object.__setattr__(self, "breakpoints", _check_breakpoints(self.breakpoints))
        if len(self.pieces) != len(self.breakpoints) - 1:
            raise ProfileError("need exactly one expression per interval")
        if not self.L > 0:
            raise ProfileError("period L must be positive")
        if self.G0 is None or self.G1 is None:
            raise ProfileError("bounds G0 and G1 must be declared")
        if not (0 < self.G0 <= self.G1):
            raise ProfileError("bounds must satisfy 0 < G0 <= G1")
        if self.M is not None and not self.M > 0:
            raise ProfileError("derivative bound M must be positive")

    # construction -------------------------------------------------------
    @classmethod
    def constant(cls, value: float, L: float = 1.0):
        value = float(value)
        return cls("constant", (Const(value),), L=L, G0=value, G1=value)

    @classmethod
    def from_expr(cls, src, L=1.0, G0=None, G1=None, M=None):
        e = parse_expression(src) if isinstance(src, str) else src
        return cls("expr", (e,), L=L, G0=G0, G1=G1, M=M)

    @classmethod
    def piecewise(cls, breakpoints, exprs, L=1.0, G0=None, G1=None, M=None):
        pieces = tuple(parse_expression(e) if isinstance(e, str) else e for e in exprs)
        return cls("piecewise", pieces, breakpoints=breakpoints, L=L, G0=G0, G1=G1, M=M)

    @classmethod
    def from_dict(cls, d: dict) -> "Profile":
        allowed = {"kind", "expr", "breakpoints", "exprs", "L", "G0", "G1", "M"}
        unknown = set(d) - allowed
        if unknown:
            raise ProfileError(f"unknown profile keys: {sorted(unknown)}")
        kind = d.get("kind")
        L = float(d.get("L", 1.0))
        M = d.get("M")
        if kind == "constant":
            e = parse_expression(str(d["expr"]))
            if e.variables():
                raise ProfileError("constant profile must not depend on x or y")
            c = float(e.evaluate())
            return cls("constant", (Const(c),), L=L, G0=d.get("G0", c), G1=d.get("G1", c), M=M)
        if kind == "expr":
            return cls.from_expr(str(d["expr"]), L=L, G0=d.get("G0"), G1=d.get("G1"), M=M)
        if kind == "piecewise":
            return cls.piecewise(d["breakpoints"], d["exprs"], L=L, G0=d.get("G0"),
                                 G1=d.get("G1"), M=M)
        raise ProfileError(f"unknown profile kind {kind!r}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "L": self.L, "G0": self.G0, "G1": self.G1}
        if self.kind == "piecewise":
            d["breakpoints"] = list(self.breakpoints)
            d["exprs"] = [p.to_text() for p in self.pieces]
        elif self.kind == "constant":
            d["expr"] = repr(self.pieces[0].value)
        else:
            d["expr"] = self.pieces[0].to_text()
        if self.M is not None:
            d["M"] = self.M
        return d

    @cached_property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def slice_at(self, x: float, side=None) -> "Profile":
        """The purely periodic profile y -> G(x, y)."""
        i = int(self.interval_index(x)) if side != "left" else int(
            np.clip(np.searchsorted(self.breakpoints, x, side="left") - 1, 0, len(self.pieces) - 1))
        piece = self.pieces[i].substitute(x=float(x))
        return Profile("expr", (piece,), L=self.L, G0=self.G0, G1=self.G1, M=self.M)


@dataclass(frozen=True, eq=False)
class PiecewiseProfile(_PiecewiseEval):
    """G^delta: purely periodic pieces G_i(y) on the partition ``breakpoints``."""

    breakpoints: tuple
    pieces: tuple
    L: float
    offset: float
    G0: float
    G1: float
    source_hash: str = ""
    deriv_gap: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", _check_breakpoints(self.breakpoints))
        if any("x" in p.variables() for p in self.pieces):
            raise ProfileError("pieces of a piecewise-periodic profile must not depend on x")

    @property
    def n_intervals(self) -> int:
        return len(self.pieces)

    def to_profile(self) -> Profile:
        return Profile("piecewise", self.pieces, breakpoints=self.breakpoints, L=self.L,
                       G0=self.G0, G1=self.G1)

    @cached_property
    def hash(self) -> str:
        return self.to_profile().hash

    def interval_profile(self, i: int) -> Profile:
        return Profile("expr", (self.pieces[i],), L=self.L, G0=self.G0, G1=self.G1)


@dataclass
class ValidationReport:
    passed: bool
    min_value: float
    max_value: float
    periodicity_defect: float
    max_dy: float
    breakpoint_limits: list = field(default_factory=list)
    hard_failure: bool = False
    messages: list = field(default_factory=list)

    def to_dict(self):
        return {
            "passed": bool(self.passed),
            "min": float(self.min_value),
            "max": float(self.max_value),
            "periodicity_defect": self.periodicity_defect,
            "max_dy": self.max_dy,
            "breakpoint_limits": self.breakpoint_limits,
            "hard_failure": bool(self.hard_failure),
            "messages": self.messages,
        }


def _grid(grid):
    if np.isscalar(grid):
        return int(grid), int(grid)
    nx, ny = grid
    return int(nx), int(ny)


def validate_hypothesis(profile, grid=32, tol: float = 1e-12) -> ValidationReport:
    """Sample ``profile`` and check positivity, bounds, periodicity and the
    optional derivative bound M.

    ``grid`` is the number of samples per x-subinterval and per period in y
    (a pair ``(nx, ny)`` is also accepted); both must be at least 16.
    """
    if isinstance(profile, PiecewiseProfile):
        profile = profile.to_profile()
    nx, ny = _grid(grid)
    if nx < 16 or ny < 16:
        raise ValueError("validation grid needs at least 16 samples per direction")
    L = profile.L
    ys = np.arange(ny) * (L / ny)
    lo, hi, per, dmax = np.inf, -np.inf, 0.0, 0.0
    limits = []
    messages = []
    bp = profile.breakpoints
    for i, piece in enumerate(profile.pieces):
        a, b = bp[i], bp[i + 1]
        xs = a + (np.arange(nx) + 0.5) * ((b - a) / nx)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        g = piece.evaluate(X, Y)
        lo, hi = min(lo, g.min()), max(hi, g.max())
        per = max(per, float(np.max(np.abs(piece.evaluate(X, Y + L) - g))))
        dy = (piece.evaluate(X, Y + FD_STEP) - piece.evaluate(X, Y - FD_STEP)) / (2 * FD_STEP)
        dmax = max(dmax, float(np.max(np.abs(dy))))
        if i > 0:
            left = profile.pieces[i - 1].evaluate(np.full(ny, a), ys)
            right = piece.evaluate(np.full(ny, a), ys)
            limits.append({"x": a, "left_min": float(left.min()), "left_max": float(left.max()),
                           "right_min": float(right.min()), "right_max": float(right.max()),
                           "jump": float(np.max(np.abs(right - left)))})
    hard = lo <= 0.0
    passed = True
    if hard:
        passed = False
        messages.append(f"sampled value {lo:.6g} <= 0 violates positivity")
    if lo < profile.G0 - tol:
        passed = False
        messages.append(f"sampled min {lo:.6g} below declared G0={profile.G0}")
    if hi > profile.G1 + tol:
        passed = False
        messages.append(f"sampled max {hi:.6g} above declared G1={profile.G1}")
    if per > 1e-12 * max(1.0, abs(hi)) + tol:
        passed = False
        messages.append(f"periodicity defect {per:.3g}")
    if profile.M is not None and dmax > profile.M + tol:
        passed = False
        messages.append(f"|dG/dy| up to {dmax:.6g} exceeds M={profile.M}")
    return ValidationReport(passed, float(lo), float(hi), float(per), dmax, limits, hard, messages)


def _oscillation(piece, a, b, ys, nx):
    """sup over sampled x in (a, b] and y of |G(x, y) - G(a+, y)|."""
    base = piece.evaluate(np.full(ys.shape, a), ys)
    xs = a + np.arange(1, nx + 1) * ((b - a) / nx)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return float(np.max(np.abs(piece.evaluate(X, Y) - base[None, :])))


def build_piecewise_approx(profile: Profile, delta: float, samples=(16, 64),
                           max_intervals: int = 4096) -> PiecewiseProfile:
    """Piecewise periodic G^delta with 0 <= G^delta - G <= delta.

    Intervals, seeded with the profile's own breakpoints, are bisected until
    the sampled x-oscillation of G over each one is at most delta/2; on
    (z_r, z_{r+1}) the result is G(z_r, y) + delta/2.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    nx, ny = samples
    ys = np.arange(ny) * (profile.L / ny)
    half = 0.5 * delta
    pending = [(profile.breakpoints[i], profile.breakpoints[i + 1], i)
               for i in range(len(profile.pieces))]
    done = []
    while pending:
        a, b, i = pending.pop(0)
        piece = profile.pieces[i]
        if _oscillation(piece, a, b, ys, nx) <= half * (1 + 1e-12):
            done.append((a, b, i))
            continue
        if len(done) + len(pending) + 2 > max_intervals:
            raise PartitionError(
                f"delta={delta} needs more than {max_intervals} intervals "
                f"(interval length below {b - a:.3g} required near x={a:.6g})",
                needed_length=(b - a) / 2)
        m = 0.5 * (a + b)
        pending[:0] = [(a, m, i), (m, b, i)]
    done.sort()
    z = [done[0][0]] + [b for _, b, _ in done]
    pieces = []
    dgap = 0.0
    for a, b, i in done:
        base = profile.pieces[i].substitute(x=a)
        pieces.append(Binary("+", base, Const(half)))
        xs = a + np.arange(1, nx + 1) * ((b - a) / nx)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        src = profile.pieces[i]
        d_src = (src.evaluate(X, Y + FD_STEP) - src.evaluate(X, Y - FD_STEP)) / (2 * FD_STEP)
        d_new = (base.evaluate(X, Y + FD_STEP) - base.evaluate(X, Y - FD_STEP)) / (2 * FD_STEP)
        dgap = max(dgap, float(np.max(np.abs(d_new - d_src))))
    return PiecewiseProfile(tuple(z), tuple(pieces), L=profile.L, offset=half,
                            G0=profile.G0, G1=profile.G1 + delta,
                            source_hash=profile.hash, deriv_gap=dgap)


def c1_distance(a, b, grid: int = 1024) -> float:
    """sup|a - b| + sup|a' - b'| over y in [0, L) for x-independent profiles."""
    if abs(a.L - b.L) > 1e-15 * max(a.L, b.L):
        raise ProfileError(f"profiles have different periods ({a.L} vs {b.L})")
    if not (a.x_independent and b.x_independent):
        raise ProfileError("c1_distance needs x-independent profiles")
    ys = np.arange(int(grid)) * (a.L / grid)
    d0 = np.max(np.abs(a(0.5, ys) - b(0.5, ys)))
    d1 = np.max(np.abs(a.dy(0.5, ys) - b.dy(0.5, ys)))
    return float(d0 + d1)
