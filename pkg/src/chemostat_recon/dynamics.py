"""Chemostat plant: right-hand sides, fixed-step RK4, output disturbance.

One- and two-species models share one code path; biomass is a tuple with
one entry per growth function.  Yields are 1 (substrate units).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

from .growth import GrowthFunction

# clamp s back into [0, s_in] only when it leaves by less than this
S_CLAMP_EPS = 1e-9
# any |s| beyond this multiple of s_in counts as a blow-up
BLOWUP_FACTOR = 10.0


class NumericalBlowup(RuntimeError):
    """Raised when the integrated state becomes non-finite or runs away."""

    def __init__(self, t: float, msg: str = ""):
        self.t = t
        super().__init__(f"numerical blow-up at t={t!r}" + (f": {msg}" if msg else ""))


@dataclass(frozen=True)
class PlantParams:
    s_in: float
    growths: tuple[GrowthFunction, ...]
    b_min: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "growths", tuple(self.growths))
        if not self.s_in > 0:
            raise ValueError("s_in must be positive")
        if not 0 <= self.b_min < self.s_in:
            raise ValueError("b_min must lie in [0, s_in)")
        if len(self.growths) not in (1, 2):
            raise ValueError("one or two growth functions expected")

    @property
    def n_species(self) -> int:
        return len(self.growths)


@dataclass(frozen=True)
class PlantState:
    t: float
    s: float
    b: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))

    @property
    def z(self) -> float:
        """Total mass ``s + sum(b)``; relaxes to ``s_in``."""
        return self.s + sum(self.b)

    def as_list(self) -> list[float]:
        return [self.s, *self.b]

    @classmethod
    def on_stoichiometric_set(cls, s: float, params: PlantParams, t: float = 0.0,
                              fractions: Sequence[float] | None = None) -> "PlantState":
        """State with ``s + sum(b) = s_in``; biomass split by ``fractions``."""
        n = params.n_species
        fr = fractions if fractions is not None else [1.0 / n] * n
        total = params.s_in - s
        return cls(t, s, tuple(total * f for f in fr))


@dataclass(frozen=True)
class DisturbanceModel:
    """Multiplicative output disturbance ``s (1 + amplitude cos(f1 t) sin(f2 t))``.

    ``amplitude = 0`` is the undisturbed measurement.
    """

    amplitude: float = 0.0
    freq1: float = 3.0
    freq2: float = 1.0

    def __post_init__(self):
        if not 0 <= self.amplitude < 1:
            raise ValueError("disturbance amplitude must lie in [0, 1)")

    @property
    def active(self) -> bool:
        return self.amplitude != 0.0

    def factor(self, t: float) -> float:
        if self.amplitude == 0.0:
            return 1.0
        return 1.0 + self.amplitude * math.cos(self.freq1 * t) * math.sin(self.freq2 * t)

    def apply(self, t: float, s: float) -> float:
        return s * self.factor(t)


NO_DISTURBANCE = DisturbanceModel()
STANDARD_DISTURBANCE = DisturbanceModel(0.05, 3.0, 1.0)


def measure(state: PlantState, d: DisturbanceModel = NO_DISTURBANCE) -> float:
    """Measured output; the disturbance never touches the true state."""
    return d.apply(state.t, state.s)


def rhs(state: PlantState, D: float, params: PlantParams) -> tuple[float, tuple[float, ...]]:
    """Time derivative ``(ds/dt, (db_i/dt, ...))`` at dilution rate ``D``."""
    s = state.s
    ds = D * (params.s_in - s)
    db = []
    for mu, bi in zip(params.growths, state.b):
        g = mu(s)
        ds -= g * bi
        db.append((g - D) * bi)
    return ds, tuple(db)


def _rhs_list(y: list[float], D: float, s_in: float, growths) -> list[float]:
    s = y[0]
    ds = D * (s_in - s)
    out = [0.0]
    for i, mu in enumerate(growths, start=1):
        g = mu(s)
        ds -= g * y[i]
        out.append((g - D) * y[i])
    out[0] = ds
    return out


def rk4_step(f, t: float, y: list[float], h: float) -> list[float]:
    """One classical Runge-Kutta step for ``y' = f(t, y)`` on a list state."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, [a + 0.5 * h * b for a, b in zip(y, k1)])
    k3 = f(t + 0.5 * h, [a + 0.5 * h * b for a, b in zip(y, k2)])
    k4 = f(t + h, [a + h * b for a, b in zip(y, k3)])
    h6 = h / 6.0
    return [a + h6 * (p + 2.0 * q + 2.0 * r + w) for a, p, q, r, w in zip(y, k1, k2, k3, k4)]


def postprocess(t: float, y: list[float], n_species: int, s_in: float, b_min: float) -> list[float]:
    """Blow-up check, the ``b_min`` floor and the tiny-overshoot clamp on ``s``.

    ``y`` starts with ``s`` followed by the biomasses; further entries
    (controller states) are left alone.  Mutates and returns ``y``.
    """
    s = y[0]
    for v in y:
        if not math.isfinite(v):
            raise NumericalBlowup(t, "non-finite state")
    if abs(s) > BLOWUP_FACTOR * s_in:
        raise NumericalBlowup(t, f"s={s!r}")
    if s < 0.0 and s > -S_CLAMP_EPS:
        y[0] = 0.0
    elif s > s_in and s < s_in + S_CLAMP_EPS:
        y[0] = s_in
    if b_min > 0.0:
        for i in range(1, n_species + 1):
            if y[i] < b_min:
                y[i] = b_min
    return y


def step(state: PlantState, D: float, params: PlantParams, h: float) -> PlantState:
    """Advance the open-loop plant by ``h`` with constant dilution ``D`` (RK4)."""
    if not h > 0:
        raise ValueError("step size must be positive")
    s_in, growths = params.s_in, params.growths
    y = rk4_step(lambda t, u: _rhs_list(u, D, s_in, growths), state.t, state.as_list(), h)
    t1 = state.t + h
    y = postprocess(t1, y, params.n_species, s_in, params.b_min)
    return PlantState(t1, y[0], tuple(y[1:]))


def integrate(state: PlantState, D: float, params: PlantParams, duration: float,
              h: float = 0.01) -> PlantState:
    """Repeated :func:`step` over ``duration`` (rounded to whole steps)."""
    n = int(round(duration / h))
    t0 = state.t
    for k in range(n):
        state = step(state, D, params, h)
        state = replace(state, t=t0 + (k + 1) * h)
    return state
