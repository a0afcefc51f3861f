"""Feedback laws and the closed-loop simulator.

The static law is the saturated proportional feedback
``D = sat(D_bar - G1 (s - s_bar))``.  The dynamic law additionally adapts
``D_bar`` and may let ``s_bar`` drift logistically; both are integrated as
extra states of one augmented ODE with the plant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import (
    NO_DISTURBANCE,
    DisturbanceModel,
    NumericalBlowup,
    PlantParams,
    PlantState,
    postprocess,
)
from .growth import min_derivative


@dataclass(frozen=True)
class ControllerConfig:
    D_min: float
    D_max: float
    G1: float
    G2: float = 0.0
    s_min: float = 0.0

    def __post_init__(self):
        if not 0 < self.D_min < self.D_max:
            raise ValueError("need 0 < D_min < D_max")
        if self.G1 < 0 or self.G2 < 0:
            raise ValueError("gains must be non-negative")


@dataclass(frozen=True)
class ControllerState:
    s_bar: float
    D_bar: float


def saturate(x: float, lo: float, hi: float) -> float:
    if x > hi:
        return hi
    if x < lo:
        return lo
    return x


def simple_feedback(s_measured: float, ctl: ControllerState, cfg: ControllerConfig) -> float:
    """Saturated proportional law; returns exactly ``D_bar`` at ``s = s_bar``."""
    return saturate(ctl.D_bar - cfg.G1 * (s_measured - ctl.s_bar), cfg.D_min, cfg.D_max)


def dyn_feedback_rhs(s_measured: float, ctl: ControllerState, cfg: ControllerConfig) -> float:
    """Rate of change of ``D_bar`` under the adaptive law."""
    return -cfg.G2 * (s_measured - ctl.s_bar) * (ctl.D_bar - cfg.D_min) * (cfg.D_max - ctl.D_bar)


def drift_rhs(s_bar: float, epsilon: float, s_in: float) -> float:
    """Logistic drift of the reference; ``epsilon < 0`` explores leftwards."""
    return epsilon * s_bar * (s_in - s_bar)


def admissibility_violations(mu, cfg: ControllerConfig, ctl: ControllerState, s_in: float) -> list[str]:
    """Which global-stability hypotheses fail for a known ``mu`` (empty = admissible).

    Checks the input bounds against ``mu`` and both lower bounds on ``G1``.
    """
    grid = np.linspace(0.0, s_in, 2001)
    vals = mu(grid)
    out = []
    upper = grid >= cfg.s_min
    if not np.all(cfg.D_min < vals[upper]):
        out.append("D_min must lie below mu on [s_min, s_in]")
    if not np.all(cfg.D_max > vals):
        out.append("D_max must exceed mu on [0, s_in]")
    _, dmin = min_derivative(mu, 0.0, s_in)
    if not cfg.G1 > -dmin:
        out.append(f"G1={cfg.G1} must exceed -min mu' = {-dmin:.6g}")
    bound = -(float(mu(s_in)) - ctl.D_bar) / (s_in - ctl.s_bar)
    if not cfg.G1 > bound:
        out.append(f"G1={cfg.G1} must exceed {bound:.6g} (washout bound)")
    if not cfg.s_min <= ctl.s_bar < s_in:
        out.append("s_bar must lie in [s_min, s_in)")
    if not cfg.D_min <= ctl.D_bar <= cfg.D_max:
        out.append("D_bar must lie in [D_min, D_max]")
    return out


# observer(t, y, s_measured, D) -> truthy to stop; y = [s, b..., D_bar, s_bar]
Observer = Callable[[float, list, float, float], Optional[bool]]


class ClosedLoop:
    """Chemostat plus feedback, integrated with fixed-step RK4.

    Parameters
    ----------
    plant : PlantParams
    cfg : ControllerConfig
    disturbance : DisturbanceModel
        Output disturbance seen by the controller (and by any observer).
    h : float
        Integration step.

    Attributes
    ----------
    recorder : object or None
        If set, ``recorder.record(t, y, s_measured, D)`` is called after
        every step of every simulation run through this loop.
    """

    def __init__(self, plant: PlantParams, cfg: ControllerConfig,
                 disturbance: DisturbanceModel = NO_DISTURBANCE, h: float = 0.01):
        if not h > 0:
            raise ValueError("step size must be positive")
        self.plant = plant
        self.cfg = cfg
        self.disturbance = disturbance
        self.h = h
        self.recorder = None
        self.model_time = 0.0  # total simulated time through this loop

    def control(self, t: float, s: float, ctl: ControllerState) -> tuple[float, float]:
        """``(s_measured, D)`` for true substrate ``s`` at time ``t``."""
        sm = self.disturbance.apply(t, s)
        return sm, simple_feedback(sm, ctl, self.cfg)

    def vector_field(self, adapt: bool = False, drift: float = 0.0):
        """Augmented right-hand side ``f(t, y)`` with ``y = [s, b..., D_bar, s_bar]``."""
        s_in = self.plant.s_in
        growths = self.plant.growths
        n = len(growths)
        cfg = self.cfg
        G1, G2, lo, hi = cfg.G1, cfg.G2, cfg.D_min, cfg.D_max
        d = self.disturbance
        amp, w1, w2 = d.amplitude, d.freq1, d.freq2
        cos, sin = math.cos, math.sin
        iD = n + 1

        def f(t, y):
            s = y[0]
            sm = s * (1.0 + amp * cos(w1 * t) * sin(w2 * t)) if amp else s
            Dbar = y[iD]
            sbar = y[iD + 1]
            D = Dbar - G1 * (sm - sbar)
            if D > hi:
                D = hi
            elif D < lo:
                D = lo
            ds = D * (s_in - s)
            out = [0.0] * (n + 3)
            for i in range(n):
                bi = y[i + 1]
                g = growths[i](s)
                ds -= g * bi
                out[i + 1] = (g - D) * bi
            out[0] = ds
            if adapt:
                out[iD] = -G2 * (sm - sbar) * (Dbar - lo) * (hi - Dbar)
            if drift:
                out[iD + 1] = drift * sbar * (s_in - sbar)
            return out

        return f

    def simulate(self, state: PlantState, ctl: ControllerState, duration: float, *,
                 adapt: bool = False, drift: float = 0.0,
                 observer: Observer | None = None) -> tuple[PlantState, ControllerState]:
        """Integrate the closed loop for ``duration`` (whole steps).

        Parameters
        ----------
        adapt : bool
            Integrate ``D_bar`` with the adaptive law (else it is a constant).
        drift : float
            Drift speed ``epsilon`` of ``s_bar`` (0 keeps it fixed).
        observer : callable, optional
            Called after every step; a truthy return value stops the run early.

        Returns
        -------
        (PlantState, ControllerState)
            Final plant state and references.
        """
        h = self.h
        n_steps = int(round(duration / h))
        f = self.vector_field(adapt, drift)
        ns = self.plant.n_species
        s_in, b_min = self.plant.s_in, self.plant.b_min
        d = self.disturbance
        cfg = self.cfg
        rec = self.recorder
        t0 = state.t
        y = [state.s, *state.b, ctl.D_bar, ctl.s_bar]
        t = t0
        h2, h6 = 0.5 * h, h / 6.0
        for k in range(1, n_steps + 1):
            k1 = f(t, y)
            k2 = f(t + h2, [a + h2 * b for a, b in zip(y, k1)])
            k3 = f(t + h2, [a + h2 * b for a, b in zip(y, k2)])
            k4 = f(t + h, [a + h * b for a, b in zip(y, k3)])
            y = [a + h6 * (p + 2.0 * q + 2.0 * r + w) for a, p, q, r, w in zip(y, k1, k2, k3, k4)]
            t = t0 + k * h
            postprocess(t, y, ns, s_in, b_min)
            if rec is not None or observer is not None:
                sm = d.apply(t, y[0])
                D = saturate(y[ns + 1] - cfg.G1 * (sm - y[ns + 2]), cfg.D_min, cfg.D_max)
                if rec is not None:
                    rec.record(t, y, sm, D)
                if observer is not None and observer(t, y, sm, D):
                    break
        self.model_time += t - t0
        return (PlantState(t, y[0], tuple(y[1:ns + 1])),
                ControllerState(s_bar=y[ns + 2], D_bar=y[ns + 1]))

    def run_batch(self, s, b, s_bar, D_bar, duration: float):
        """Vectorised static-law integration of many trajectories at once.

        ``s``, ``s_bar``, ``D_bar`` have shape ``(N,)`` and ``b`` has shape
        ``(n_species, N)``.  Returns the final ``(s, b)`` arrays.
        """
        h = self.h
        n_steps = int(round(duration / h))
        growths = self.plant.growths
        s_in, b_min = self.plant.s_in, self.plant.b_min
        cfg = self.cfg
        d = self.disturbance
        s = np.array(s, dtype=float)
        b = np.array(b, dtype=float).reshape(len(growths), -1)
        s_bar = np.asarray(s_bar, dtype=float)
        D_bar = np.asarray(D_bar, dtype=float)

        def f(t, s, b):
            sm = s * d.factor(t)
            D = np.clip(D_bar - cfg.G1 * (sm - s_bar), cfg.D_min, cfg.D_max)
            g = np.stack([mu(s) for mu in growths])
            return D * (s_in - s) - (g * b).sum(axis=0), (g - D) * b

        t0 = 0.0
        h2 = 0.5 * h
        for k in range(n_steps):
            t = t0 + k * h
            ks1, kb1 = f(t, s, b)
            ks2, kb2 = f(t + h2, s + h2 * ks1, b + h2 * kb1)
            ks3, kb3 = f(t + h2, s + h2 * ks2, b + h2 * kb2)
            ks4, kb4 = f(t + h, s + h * ks3, b + h * kb3)
            s = s + h / 6.0 * (ks1 + 2 * ks2 + 2 * ks3 + ks4)
            b = b + h / 6.0 * (kb1 + 2 * kb2 + 2 * kb3 + kb4)
            if b_min > 0:
                b = np.maximum(b, b_min)
            if not (np.all(np.isfinite(s)) and np.all(np.isfinite(b))):
                raise NumericalBlowup(t + h, "batch state non-finite")
        return s, b
