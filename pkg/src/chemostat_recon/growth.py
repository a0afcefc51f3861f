"""Growth-rate functions mu(s) and helpers on them.

Every growth function is callable.  ``f(s)`` is the raw, unchecked formula
(works on floats and numpy arrays) and is what the integrators use in their
inner loops.  ``f.eval(s)`` / ``f.eval_derivative(s)`` validate the domain.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DomainError(ValueError):
    """Concentration outside the domain of a growth function."""


class NoCrossover(ValueError):
    """mu1 - mu2 does not change sign on the search interval."""


class AmbiguousCrossover(ValueError):
    """mu1 - mu2 changes sign more than once (or vanishes identically)."""


# grid scans use 1e-4 of the interval, then refine by bisection
SCAN_POINTS = 10_001
REFINE_STEPS = 10


class GrowthFunction:
    """Base class.  Subclasses implement ``__call__`` and ``derivative``."""

    kind = "abstract"

    def __call__(self, s):
        raise NotImplementedError

    def derivative(self, s):
        raise NotImplementedError

    def domain(self) -> tuple[float, float]:
        return 0.0, math.inf

    def _check(self, s: float, strict: bool = False) -> None:
        lo, hi = self.domain()
        if not (s >= lo) or s > hi or (strict and not lo < s < hi):
            raise DomainError(f"s={s!r} outside domain [{lo}, {hi}] of {self!r}")

    def eval(self, s: float) -> float:
        """Growth rate at ``s``; raises :class:`DomainError` for ``s < 0``."""
        self._check(s)
        return float(self(s))

    def eval_derivative(self, s: float) -> float:
        """Derivative of the growth rate at ``s``."""
        self._check(s)
        return float(self.derivative(s))

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Monod(GrowthFunction):
    """``mu_max * s / (K + s)``."""

    mu_max: float
    K: float
    kind = "monod"

    def __post_init__(self):
        if self.mu_max <= 0 or self.K <= 0:
            raise ValueError("Monod needs mu_max > 0 and K > 0")

    def __call__(self, s):
        return self.mu_max * s / (self.K + s)

    def derivative(self, s):
        return self.mu_max * self.K / (self.K + s) ** 2

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mu_max": self.mu_max, "K": self.K}


@dataclass(frozen=True)
class Haldane(GrowthFunction):
    """Substrate-inhibited growth ``s / (a + b s + c s^2)``."""

    a: float = 1.0
    b: float = 1.0
    c: float = 10.0
    kind = "haldane"

    def __post_init__(self):
        if self.a <= 0 or self.b < 0 or self.c < 0:
            raise ValueError("Haldane needs a > 0, b >= 0, c >= 0")

    def __call__(self, s):
        return s / (self.a + self.b * s + self.c * s * s)

    def derivative(self, s):
        q = self.a + self.b * s + self.c * s * s
        return (self.a - self.c * s * s) / (q * q)

    def argmax(self) -> float:
        """Closed-form location of the maximum, ``sqrt(a / c)``."""
        if self.c == 0:
            return math.inf
        return math.sqrt(self.a / self.c)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b, "c": self.c}


@dataclass(frozen=True)
class Tabulated(GrowthFunction):
    """Piecewise-linear interpolant through ``(s, mu)`` knots.

    The first knot must be ``(0, 0)``; abscissae strictly increasing and
    ordinates non-negative.  The derivative is the central difference of the
    interpolant with step ``fd_step`` (one-sided at the table ends).
    """

    s_points: tuple[float, ...]
    mu_points: tuple[float, ...]
    fd_step: float = 1e-6
    kind = "tabulated"
    _slopes: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        s = tuple(float(x) for x in self.s_points)
        m = tuple(float(x) for x in self.mu_points)
        object.__setattr__(self, "s_points", s)
        object.__setattr__(self, "mu_points", m)
        if len(s) != len(m) or len(s) < 2:
            raise ValueError("need at least two (s, mu) pairs of equal length")
        if s[0] != 0.0 or m[0] != 0.0:
            raise ValueError("table must start at (0, 0)")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("table abscissae must be strictly increasing")
        if any(not math.isfinite(x) or x < 0 for x in m):
            raise ValueError("table ordinates must be finite and non-negative")
        slopes = tuple((m[i + 1] - m[i]) / (s[i + 1] - s[i]) for i in range(len(s) - 1))
        object.__setattr__(self, "_slopes", slopes)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]], **kw) -> "Tabulated":
        s, m = zip(*pairs)
        return cls(tuple(s), tuple(m), **kw)

    @classmethod
    def sample(cls, f, s_max: float, n: int) -> "Tabulated":
        """Tabulate ``f`` on ``n`` equal intervals of ``[0, s_max]``."""
        s = np.linspace(0.0, s_max, n + 1)
        return cls(tuple(s), tuple(float(f(x)) for x in s))

    def domain(self) -> tuple[float, float]:
        return 0.0, self.s_points[-1]

    def __call__(self, s):
        if isinstance(s, np.ndarray):
            return np.interp(s, self.s_points, self.mu_points)
        sp = self.s_points
        i = bisect.bisect_right(sp, s) - 1
        if i < 0:
            i = 0
        elif i >= len(sp) - 1:
            i = len(sp) - 2
        return self.mu_points[i] + self._slopes[i] * (s - sp[i])

    def derivative(self, s):
        lo, hi = self.domain()
        h = self.fd_step
        left = np.maximum(s - h, lo) if isinstance(s, np.ndarray) else max(s - h, lo)
        right = np.minimum(s + h, hi) if isinstance(s, np.ndarray) else min(s + h, hi)
        return (self(right) - self(left)) / (right - left)

    def eval_derivative(self, s: float) -> float:
        self._check(s, strict=True)
        return float(self.derivative(s))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "points": [list(p) for p in zip(self.s_points, self.mu_points)]}


def from_dict(spec: dict) -> GrowthFunction:
    """Build a growth function from its config mapping (``kind`` + coefficients)."""
    kind = str(spec.get("kind", "")).lower()
    if kind == "monod":
        return Monod(float(spec["mu_max"]), float(spec["K"]))
    if kind == "haldane":
        return Haldane(float(spec.get("a", 1.0)), float(spec.get("b", 1.0)), float(spec.get("c", 10.0)))
    if kind == "tabulated":
        return Tabulated.from_pairs([(float(a), float(b)) for a, b in spec["points"]])
    raise ValueError(f"unknown growth kind {spec.get('kind')!r}")


def _refine_min(g, lo: float, hi: float, x0: float, dx: float) -> float:
    # ternary search on the grid cell pair around the scanned minimum
    a, b = max(lo, x0 - dx), min(hi, x0 + dx)
    for _ in range(REFINE_STEPS):
        m1 = a + (b - a) / 3
        m2 = b - (b - a) / 3
        if g(m1) <= g(m2):
            b = m2
        else:
            a = m1
    cands = [x0, a, b, 0.5 * (a + b)]
    return min(cands, key=g)


def min_derivative(f: GrowthFunction, lo: float, hi: float) -> tuple[float, float]:
    """Minimum of ``f'`` over ``[lo, hi]``.

    Dense grid scan (1e-4 of the interval) followed by local refinement.

    Returns
    -------
    (s_min, value)
        Location and value of the minimum.
    """
    if not 0 <= lo < hi:
        raise DomainError(f"need 0 <= lo < hi, got [{lo}, {hi}]")
    d_lo, d_hi = f.domain()
    if hi > d_hi:
        raise DomainError(f"hi={hi} beyond domain of {f!r}")
    grid = np.linspace(lo, hi, SCAN_POINTS)
    vals = f.derivative(grid)
    i = int(np.argmin(vals))
    x = _refine_min(lambda u: float(f.derivative(u)), lo, hi, float(grid[i]), float(grid[1] - grid[0]))
    return x, float(f.derivative(x))


def argmax(f: GrowthFunction, lo: float, hi: float) -> tuple[float, float]:
    """Location and value of the maximum of ``f`` on ``[lo, hi]`` (grid + refine)."""
    grid = np.linspace(lo, hi, SCAN_POINTS)
    i = int(np.argmax(f(grid)))
    x = _refine_min(lambda u: -float(f(u)), lo, hi, float(grid[i]), float(grid[1] - grid[0]))
    return x, float(f(x))


def bisect_root(g, a: float, b: float, xtol: float = 1e-13, maxiter: int = 200) -> float:
    """Plain bisection for a sign change of ``g`` on ``[a, b]``."""
    ga, gb = g(a), g(b)
    if ga == 0:
        return a
    if gb == 0:
        return b
    if (ga > 0) == (gb > 0):
        raise ValueError("no sign change on bracket")
    for _ in range(maxiter):
        m = 0.5 * (a + b)
        gm = g(m)
        if gm == 0 or 0.5 * (b - a) < xtol:
            return m
        if (gm > 0) == (ga > 0):
            a, ga = m, gm
        else:
            b = m
    return 0.5 * (a + b)


def crossover(f1: GrowthFunction, f2: GrowthFunction, lo: float, hi: float,
              xtol: float = 1e-13) -> float:
    """Point ``s_c`` in ``[lo, hi]`` where ``f1(s_c) = f2(s_c)``.

    The difference must change sign exactly once on the sampling grid.

    Raises
    ------
    NoCrossover
        If the difference keeps one sign.
    AmbiguousCrossover
        If there are several sign changes or the difference vanishes
        identically.
    """
    grid = np.linspace(lo, hi, SCAN_POINTS)
    diff = f1(grid) - f2(grid)
    scale = max(float(np.max(np.abs(f1(grid)))), float(np.max(np.abs(f2(grid)))), 1e-300)
    nonzero = np.abs(diff) > 1e-14 * scale
    if not nonzero.any():
        raise AmbiguousCrossover("growth functions coincide on the interval")
    signs = np.sign(diff[nonzero])
    changes = np.flatnonzero(signs[1:] != signs[:-1])
    if len(changes) == 0:
        raise NoCrossover(f"no crossover on [{lo}, {hi}]")
    if len(changes) > 1:
        raise AmbiguousCrossover(f"{len(changes)} sign changes on [{lo}, {hi}]")
    idx = np.flatnonzero(nonzero)
    a, b = float(grid[idx[changes[0]]]), float(grid[idx[changes[0] + 1]])
    return bisect_root(lambda s: float(f1(s) - f2(s)), a, b, xtol=xtol)
