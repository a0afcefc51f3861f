"""Reconstruction of the growth-function graph from closed-loop experiments.

Three campaigns are provided:

* :func:`drift_reconstruct` -- adaptive ``D_bar`` plus a slowly drifting
  ``s_bar``; the recorded ``(s_bar(t), D_bar(t))`` traces the graph.
* :func:`newton_reconstruct` -- for prescribed abscissae, solve
  ``s_eq(s_bar, D_bar) = s_bar`` in ``D_bar`` by a secant-preconditioned
  Newton iteration on settled experiments.
* :func:`secant_reconstruct` -- predictor along the unit secant, one settled
  experiment per point, correction along the feedback line.

Equilibrium readings come from an *evaluator*: ``evaluate(s_bar, D_bar)``
returns a :class:`~chemostat_recon.settle.SettleResult`.
:class:`SimulatedEquilibrium` runs the closed loop (keeping the plant state
between calls); :class:`OracleEquilibrium` root-solves the equilibrium
condition directly and is used to cross-check the simulation route.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .control import ClosedLoop, ControllerConfig, ControllerState, admissibility_violations, saturate
from .dynamics import PlantParams, PlantState
from .growth import GrowthFunction, bisect_root
from .settle import SettleConfig, SettleResult, run_until_settled

ORACLE_SCAN_POINTS = 20_001
# below this the secant-corrected Newton gain is treated as unusable
MIN_NEWTON_GAIN = 1e-8


class NoEquilibrium(ValueError):
    """No (unique) root of the equilibrium condition: admissibility violated."""


class MultipleEquilibria(NoEquilibrium):
    def __init__(self, roots):
        self.roots = list(roots)
        super().__init__(f"{len(self.roots)} equilibria bracketed near {self.roots}")


class StalledContinuation(RuntimeError):
    """Two consecutive continuation points coincide."""


@dataclass
class GraphPoint:
    s: float
    mu_est: float
    accepted_at: float
    converged: bool = True
    meta: dict = field(default_factory=dict)


@dataclass
class ReconstructedGraph:
    method: str
    points: list[GraphPoint] = field(default_factory=list)
    model_time: float = 0.0

    def __len__(self):
        return len(self.points)

    @property
    def s(self) -> np.ndarray:
        return np.array([p.s for p in self.points])

    @property
    def mu_est(self) -> np.ndarray:
        return np.array([p.mu_est for p in self.points])

    @property
    def n_unconverged(self) -> int:
        return sum(not p.converged for p in self.points)

    def errors(self, mu: GrowthFunction) -> np.ndarray:
        return np.abs(self.mu_est - mu(self.s))

    def write_csv(self, path, mu: GrowthFunction | None = None) -> None:
        """Columns ``s, mu_est, mu_true, abs_error, accepted_at, converged``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "mu_est", "mu_true", "abs_error", "accepted_at", "converged"])
            for p in self.points:
                if mu is not None:
                    true = float(mu(p.s))
                    row_true, row_err = fmt(true), fmt(abs(p.mu_est - true))
                else:
                    row_true = row_err = ""
                w.writerow([fmt(p.s), fmt(p.mu_est), row_true, row_err,
                            fmt(p.accepted_at), int(p.converged)])


def fmt(x: float) -> str:
    """Lossless float formatting used by every CSV writer."""
    return format(float(x), ".17g")


# --------------------------------------------------------------------------
# equilibrium readings


def equilibrium_oracle(mu: GrowthFunction, ctl: ControllerState, cfg: ControllerConfig,
                       s_in: float, xtol: float = 1e-12) -> float:
    """Unique root on ``(0, s_in)`` of ``sat(D_bar - G1 (s - s_bar)) = mu(s)``.

    Sign-bracketing scan followed by bisection; no simulation involved.

    Raises
    ------
    NoEquilibrium
        If no bracket is found.
    MultipleEquilibria
        If more than one bracket is found (gain too small for this ``mu``).
    """
    D_bar, s_bar, G1 = ctl.D_bar, ctl.s_bar, cfg.G1

    def F(s):
        return np.clip(D_bar - G1 * (s - s_bar), cfg.D_min, cfg.D_max) - mu(s)

    if 0 < s_bar < s_in and F(s_bar) == 0:
        return s_bar
    grid = np.linspace(0.0, s_in, ORACLE_SCAN_POINTS)
    vals = F(grid)
    sg = np.sign(vals)
    roots = [float(grid[i]) for i in np.flatnonzero(sg == 0)]
    brackets = np.flatnonzero(sg[:-1] * sg[1:] < 0)
    cands = roots + [(float(grid[i]), float(grid[i + 1])) for i in brackets]
    if not cands:
        raise NoEquilibrium(f"no equilibrium for s_bar={s_bar}, D_bar={D_bar}, G1={G1}")
    if len(cands) > 1:
        raise MultipleEquilibria([c if isinstance(c, float) else c[0] for c in cands])
    c = cands[0]
    if isinstance(c, float):
        return c
    return bisect_root(lambda s: float(F(s)), c[0], c[1], xtol=xtol)


class OracleEquilibrium:
    """Evaluator backed by :func:`equilibrium_oracle` (zero model time)."""

    def __init__(self, mu: GrowthFunction, cfg: ControllerConfig, s_in: float):
        self.mu, self.cfg, self.s_in = mu, cfg, s_in
        self.clock = 0.0
        self.calls = 0

    def __call__(self, s_bar: float, D_bar: float) -> SettleResult:
        self.calls += 1
        ctl = ControllerState(s_bar, D_bar)
        s_eq = equilibrium_oracle(self.mu, ctl, self.cfg, self.s_in)
        D = saturate(D_bar - self.cfg.G1 * (s_eq - s_bar), self.cfg.D_min, self.cfg.D_max)
        return SettleResult(s_eq=s_eq, D_at_eq=D, elapsed=0.0, settled=True)


class SimulatedEquilibrium:
    """Evaluator that runs the closed loop until settled.

    The plant state carries over from one call to the next; only the
    references are changed.  An unsettled run is retried once with doubled
    ``max_time``.
    """

    def __init__(self, loop: ClosedLoop, state: PlantState, settle: SettleConfig):
        self.loop = loop
        self.state = state
        self.settle = settle
        self.calls = 0
        self.t0 = state.t

    @property
    def clock(self) -> float:
        return self.state.t - self.t0

    def __call__(self, s_bar: float, D_bar: float) -> SettleResult:
        self.calls += 1
        ctl = ControllerState(s_bar, D_bar)
        self.state, res = run_until_settled(self.loop, self.state, ctl, self.settle)
        if not res.settled:
            retry = SettleConfig(self.settle.window, self.settle.improvement_ratio,
                                 2 * self.settle.max_time, self.settle.tol)
            self.state, res2 = run_until_settled(self.loop, self.state, ctl, retry)
            res2.elapsed += res.elapsed
            res = res2
        return res


Evaluator = Callable[[float, float], SettleResult]


# --------------------------------------------------------------------------
# continuous drift


def drift_reconstruct(loop: ClosedLoop, state: PlantState, ctl: ControllerState,
                      epsilon: float, s_window: tuple[float, float],
                      record_every: float = 1.0, max_time: float = 20_000.0,
                      ) -> tuple[ReconstructedGraph, PlantState, ControllerState]:
    """Trace the graph by drifting ``s_bar`` under the adaptive law.

    Records ``(s_bar, D_bar)`` every ``record_every`` time units and stops as
    soon as ``s_bar`` leaves ``s_window`` or after ``max_time``.

    Returns
    -------
    graph, final plant state, final references
    """
    lo, hi = s_window
    if not 0 < lo < hi < loop.plant.s_in:
        raise ValueError("exploration window must lie inside (0, s_in)")
    ns = loop.plant.n_species
    every = max(1, int(round(record_every / loop.h)))
    graph = ReconstructedGraph("drift")
    count = [0]

    def observer(t, y, sm, D):
        count[0] += 1
        s_bar = y[ns + 2]
        if count[0] % every == 0:
            graph.points.append(GraphPoint(s_bar, y[ns + 1], t))
        return not lo <= s_bar <= hi

    t0 = state.t
    state, ctl = loop.simulate(state, ctl, max_time, adapt=True, drift=epsilon, observer=observer)
    graph.model_time = state.t - t0
    return graph, state, ctl


# --------------------------------------------------------------------------
# step-wise Newton


@dataclass(frozen=True)
class NewtonConfig:
    s_grid: tuple[float, ...]
    tol: float = 1e-3
    max_newton_iters: int = 20
    fd_step: Optional[float] = None  # default 0.01 (D_max - D_min)
    D_start: Optional[float] = None  # first guess; default mid-range

    def __post_init__(self):
        object.__setattr__(self, "s_grid", tuple(float(s) for s in self.s_grid))
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if any(a == b for a, b in zip(self.s_grid, self.s_grid[1:])):
            raise ValueError("consecutive grid points must differ")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be >= 1")


def newton_reconstruct(nc: NewtonConfig, evaluate: Evaluator, cfg: ControllerConfig,
                       ) -> ReconstructedGraph:
    """Identify ``mu`` on ``nc.s_grid`` by Newton iteration on the settled output.

    For a target ``s_k`` the reading ``s_eq(s_k, D)`` has slope
    ``1 / (G1 + mu'(s_eq))`` in ``D``.  ``mu'`` is approximated by the
    secant through the last accepted point, so each update is::

        D <- D - (s_eq - s_k) * (G1 + (D - D_prev) / (s_k - s_prev))

    The first target has no previous point; its slope comes from one
    forward finite difference in ``D``.  Start values are the previous
    root, or the secant extrapolation through the last two roots.
    """
    lo, hi = cfg.D_min, cfg.D_max
    fd = nc.fd_step if nc.fd_step is not None else 0.01 * (hi - lo)
    D_first = nc.D_start if nc.D_start is not None else 0.5 * (lo + hi)
    graph = ReconstructedGraph("newton")
    clock0 = getattr(evaluate, "clock", 0.0)
    accepted: list[GraphPoint] = []

    for s_k in nc.s_grid:
        if len(accepted) >= 2:
            p1, p2 = accepted[-2], accepted[-1]
            D = p2.mu_est + (p2.mu_est - p1.mu_est) / (p2.s - p1.s) * (s_k - p2.s)
        elif accepted:
            D = accepted[-1].mu_est
        else:
            D = D_first
        D = saturate(D, lo, hi)
        fd_gain = None
        converged = False
        n_eval = 0
        res = None
        for it in range(1, nc.max_newton_iters + 1):
            reading = evaluate(s_k, D)
            n_eval += 1
            res = reading.s_eq - s_k
            if abs(res) < nc.tol:
                converged = True
                break
            if accepted:
                prev = accepted[-1]
                gain = cfg.G1 + (D - prev.mu_est) / (s_k - prev.s)
            else:
                if fd_gain is None:
                    D_fd = D + fd if D + fd <= hi else D - fd
                    probe = evaluate(s_k, D_fd)
                    n_eval += 1
                    ds = probe.s_eq - reading.s_eq
                    fd_gain = (D_fd - D) / ds if ds != 0 else 0.0
                gain = fd_gain
            if gain < MIN_NEWTON_GAIN:
                # secant information unusable: damped proportional correction
                D_new = D - 0.5 * cfg.G1 * res
            else:
                D_new = D - res * gain
            D = saturate(D_new, lo, hi)
        t_acc = getattr(evaluate, "clock", 0.0) - clock0
        pt = GraphPoint(s_k, D, t_acc, converged,
                        {"iterations": it, "evaluations": n_eval, "residual": res,
                         "s_eq": s_k + res if res is not None else math.nan})
        graph.points.append(pt)
        if converged:
            accepted.append(pt)
    graph.model_time = getattr(evaluate, "clock", 0.0) - clock0
    return graph


# --------------------------------------------------------------------------
# simplified secant continuation


@dataclass(frozen=True)
class SecantConfig:
    delta: float
    n_points: int
    seed_points: Optional[tuple[tuple[float, float], tuple[float, float]]] = None
    s_window: tuple[float, float] = (0.0, math.inf)
    weights: tuple[float, float] = (1.0, 1.0)  # (s, D) scaling in the step norm

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")
        if self.seed_points is not None and tuple(self.seed_points[0]) == tuple(self.seed_points[1]):
            raise ValueError("seed points must differ")


def secant_reconstruct(sc: SecantConfig, evaluate: Evaluator, cfg: ControllerConfig,
                       seeds: Sequence[GraphPoint] | None = None) -> ReconstructedGraph:
    """Continue along the graph from two seed points.

    Each step predicts ``p_k + delta (p_k - p_{k-1}) / |p_k - p_{k-1}|``, runs
    one settled experiment at the predicted references and corrects along
    the feedback line: ``D = D_pred - G1 (s_eq - s_pred)``.  Stops after
    ``n_points`` new points or when the predicted abscissa leaves
    ``sc.s_window``.  Seed points are included at the front of the graph.
    """
    if seeds is None:
        if sc.seed_points is None:
            raise ValueError("secant continuation needs two seed points")
        seeds = [GraphPoint(float(s), float(D), 0.0) for s, D in sc.seed_points]
    if len(seeds) != 2:
        raise ValueError("exactly two seed points expected")
    graph = ReconstructedGraph("secant", list(seeds))
    clock0 = getattr(evaluate, "clock", 0.0)
    t_offset = max(p.accepted_at for p in seeds)
    ws, wd = sc.weights
    lo_s, hi_s = sc.s_window
    p_prev, p_cur = seeds
    for _ in range(sc.n_points):
        ds, dD = p_cur.s - p_prev.s, p_cur.mu_est - p_prev.mu_est
        norm = math.hypot(ws * ds, wd * dD)
        if norm < 1e-12:
            raise StalledContinuation(f"points coincide near s={p_cur.s}")
        s_pred = p_cur.s + sc.delta * ds / norm
        D_pred = saturate(p_cur.mu_est + sc.delta * dD / norm, cfg.D_min, cfg.D_max)
        if not lo_s <= s_pred <= hi_s:
            break
        reading = evaluate(s_pred, D_pred)
        s_new = reading.s_eq
        # the applied (saturated) input is what the plant sees at equilibrium
        D_new = saturate(D_pred - cfg.G1 * (s_new - s_pred), cfg.D_min, cfg.D_max)
        t_acc = t_offset + getattr(evaluate, "clock", 0.0) - clock0
        pt = GraphPoint(s_new, D_new, t_acc, reading.settled,
                        {"s_pred": s_pred, "D_pred": D_pred})
        graph.points.append(pt)
        p_prev, p_cur = p_cur, pt
    graph.model_time = t_offset + getattr(evaluate, "clock", 0.0) - clock0
    return graph


def secant_with_newton_seeds(sc: SecantConfig, seed_grid: Sequence[float], evaluate: Evaluator,
                             cfg: ControllerConfig, tol: float = 1e-3,
                             max_newton_iters: int = 20) -> ReconstructedGraph:
    """Obtain the two seeds by Newton solves at ``seed_grid``, then continue."""
    nc = NewtonConfig(tuple(seed_grid), tol=tol, max_newton_iters=max_newton_iters)
    seeds = newton_reconstruct(nc, evaluate, cfg)
    if seeds.n_unconverged:
        raise NoEquilibrium("seed Newton solves did not converge")
    return secant_reconstruct(sc, evaluate, cfg, seeds.points)


# --------------------------------------------------------------------------
# global stability of the static law


@dataclass
class SuiteCase:
    """Outcome of many initial conditions under one reference pair."""

    ctl: ControllerState
    s_final: np.ndarray
    b_final: np.ndarray
    oracle_s: float

    @property
    def spread(self) -> float:
        """Largest pairwise Euclidean distance between final states."""
        z = np.column_stack([self.s_final, self.b_final.T])
        diff = z[:, None, :] - z[None, :, :]
        return float(np.sqrt((diff ** 2).sum(axis=-1)).max())

    def oracle_mismatch(self, s_in: float) -> float:
        """Largest distance of a final state from ``(s*, s_in - s*)``."""
        target = np.concatenate(([self.oracle_s], [s_in - self.oracle_s]))
        z = np.column_stack([self.s_final, self.b_final.T])
        return float(np.sqrt(((z - target) ** 2).sum(axis=1)).max())


def sample_admissible_pairs(mu: GrowthFunction, cfg: ControllerConfig, s_in: float, n: int,
                            rng: np.random.Generator, max_tries: int = 100_000) -> list[ControllerState]:
    """Draw ``n`` reference pairs uniformly from the admissible rectangle.

    Pairs violating any hypothesis of :func:`admissibility_violations`
    (for instance the washout bound near ``s_bar = s_in``) are rejected.
    """
    out: list[ControllerState] = []
    for _ in range(max_tries):
        ctl = ControllerState(float(rng.uniform(cfg.s_min, s_in)),
                              float(rng.uniform(cfg.D_min, cfg.D_max)))
        if not admissibility_violations(mu, cfg, ctl, s_in):
            out.append(ctl)
            if len(out) == n:
                return out
    raise ValueError(f"found only {len(out)} admissible pairs in {max_tries} draws")


def sample_initial_conditions(s_in: float, n: int, rng: np.random.Generator,
                              b_max: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Uniform draws from ``0 <= s < s_in``, ``0 < b <= b_max`` (default ``2 s_in``)."""
    b_max = 2.0 * s_in if b_max is None else b_max
    s = rng.uniform(0.0, s_in, n)
    b = b_max - rng.uniform(0.0, b_max, n)  # (0, b_max]
    return s, b


def convergence_suite(mu: GrowthFunction, cfg: ControllerConfig, s_in: float,
                      pairs: Sequence[ControllerState], n_initial: int, rng: np.random.Generator,
                      duration: float = 2000.0, h: float = 0.01) -> list[SuiteCase]:
    """Run ``n_initial`` random initial conditions for every pair (no disturbance).

    All trajectories are integrated together by :meth:`ClosedLoop.run_batch`.
    """
    m = len(pairs)
    s0, b0 = sample_initial_conditions(s_in, n_initial * m, rng)
    s_bar = np.repeat([c.s_bar for c in pairs], n_initial)
    D_bar = np.repeat([c.D_bar for c in pairs], n_initial)
    loop = ClosedLoop(PlantParams(s_in, (mu,)), cfg, h=h)
    s, b = loop.run_batch(s0, b0[None, :], s_bar, D_bar, duration)
    cases = []
    for k, ctl in enumerate(pairs):
        sl = slice(k * n_initial, (k + 1) * n_initial)
        cases.append(SuiteCase(ctl, s[sl], b[:, sl], equilibrium_oracle(mu, ctl, cfg, s_in)))
    return cases
