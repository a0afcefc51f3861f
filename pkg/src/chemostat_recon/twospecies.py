"""Two species competing for one substrate.

Linear stability of the equilibrium ``E2 = (s_bar, 0, s_in - s_bar)`` in
which species 1 is absent, the delayed loss of stability when ``s_bar``
drifts through the crossover, and experimental protocols that read off the
growth rate of the suppressed species.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .control import ClosedLoop, ControllerConfig, ControllerState
from .dynamics import NO_DISTURBANCE, DisturbanceModel, PlantParams, PlantState
from .growth import GrowthFunction, bisect_root
from .reconstruct import GraphPoint, ReconstructedGraph
from .settle import SettleConfig, run_until_settled


class SaturationActive(ValueError):
    """``mu2(s_bar)`` is not strictly inside ``(D_min, D_max)``."""


class NoReturn(ValueError):
    """The delayed-loss integral does not return to zero above the floor."""


class Law(str, enum.Enum):
    SIMPLE = "simple"
    DYNAMIC = "dynamic"


def _check_linear_regime(f2: GrowthFunction, s_bar: float, cfg: ControllerConfig) -> float:
    m2 = float(f2(s_bar))
    if not cfg.D_min < m2 < cfg.D_max:
        raise SaturationActive(f"mu2({s_bar})={m2} not inside ({cfg.D_min}, {cfg.D_max})")
    return m2


def eigs_E2_closed_form(f1: GrowthFunction, f2: GrowthFunction, s_bar: float, s_in: float,
                        cfg: ControllerConfig, law: Law | str = Law.SIMPLE) -> np.ndarray:
    """Eigenvalues at ``E2`` from their closed forms.

    Simple law: ``-mu2``, ``mu1 - mu2`` and ``-(mu2' + G1)(s_in - s_bar)``.
    Dynamic law: ``-mu2``, ``mu1 - mu2`` and the roots of
    ``l^2 - tr(M) l + det(M)`` with ``tr(M) = -(mu2' + G1)(s_in - s_bar)``
    and ``det(M) = G2 (mu2 - D_min)(D_max - mu2)(s_in - s_bar)``.
    """
    law = Law(law)
    m2 = _check_linear_regime(f2, s_bar, cfg)
    m1 = float(f1(s_bar))
    w = s_in - s_bar
    tr = -(float(f2.derivative(s_bar)) + cfg.G1) * w
    if law is Law.SIMPLE:
        return np.array([-m2, m1 - m2, tr])
    det = cfg.G2 * (m2 - cfg.D_min) * (cfg.D_max - m2) * w
    disc = complex(tr * tr - 4.0 * det)
    r = disc ** 0.5
    return np.array([-m2, m1 - m2, 0.5 * (tr + r), 0.5 * (tr - r)], dtype=complex)


def jacobian_E2(f1: GrowthFunction, f2: GrowthFunction, s_bar: float, s_in: float,
                cfg: ControllerConfig, law: Law | str = Law.SIMPLE, h: float = 1e-7) -> np.ndarray:
    """Central-difference Jacobian of the closed loop at ``E2``.

    Coordinates are ``(s, b1, b2)`` for the simple law and
    ``(s, b1, b2, D_bar)`` for the dynamic one; the reference ``D_bar`` is
    ``mu2(s_bar)`` so that ``E2`` is an equilibrium.
    """
    law = Law(law)
    m2 = _check_linear_regime(f2, s_bar, cfg)
    loop = ClosedLoop(PlantParams(s_in, (f1, f2)), cfg)
    f = loop.vector_field(adapt=law is Law.DYNAMIC)
    n = 3 if law is Law.SIMPLE else 4
    x0 = [s_bar, 0.0, s_in - s_bar, m2, s_bar]
    J = np.empty((n, n))
    for j in range(n):
        xp, xm = list(x0), list(x0)
        xp[j] += h
        xm[j] -= h
        fp, fm = f(0.0, xp), f(0.0, xm)
        for i in range(n):
            J[i, j] = (fp[i] - fm[i]) / (2 * h)
    return J


def eigs_E2_numerical(f1: GrowthFunction, f2: GrowthFunction, s_bar: float, s_in: float,
                      cfg: ControllerConfig, law: Law | str = Law.SIMPLE, h: float = 1e-7) -> np.ndarray:
    """Eigenvalues of :func:`jacobian_E2`."""
    return np.linalg.eigvals(jacobian_E2(f1, f2, s_bar, s_in, cfg, law, h))


def match_eigenvalues(a: Sequence[complex], b: Sequence[complex]) -> float:
    """Largest distance after greedily pairing each of ``a`` with its nearest in ``b``."""
    rest = list(b)
    if len(rest) != len(a):
        raise ValueError("eigenvalue lists differ in length")
    worst = 0.0
    for x in sorted(a, key=lambda z: (z.real, z.imag)):
        j = min(range(len(rest)), key=lambda k: abs(rest[k] - x))
        worst = max(worst, abs(rest.pop(j) - x))
    return worst


# --------------------------------------------------------------------------
# delayed loss of stability


def adaptive_simpson(g, a: float, b: float, tol: float = 1e-10, max_depth: int = 50) -> float:
    """Adaptive Simpson quadrature of ``g`` over ``[a, b]`` (either orientation)."""

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = g(lm), g(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return (rec(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1))

    if a == b:
        return 0.0
    fa, fb, fm = g(a), g(b), g(0.5 * (a + b))
    return rec(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)


def delayed_loss_boundary(f1: GrowthFunction, f2: GrowthFunction, s_start: float, s_in: float,
                          floor: float = 1e-6, tol: float = 1e-10, n_scan: int = 400) -> float:
    """Value ``s_loss < s_c`` where ``int_{s_start}^{s_loss} (mu1-mu2)/(s (s_in-s)) ds = 0``.

    Species 1 must be suppressed at ``s_start`` (``mu1 < mu2`` there).  The
    integral is accumulated downward in ``n_scan`` panels until it changes
    sign, then the crossing is bisected.

    Raises
    ------
    NoReturn
        If the integral stays positive down to ``floor``.
    """
    if not floor < s_start < s_in:
        raise ValueError("s_start must lie in (floor, s_in)")

    def g(x):
        return float(f1(x) - f2(x)) / (x * (s_in - x))

    d0 = float(f1(s_start) - f2(s_start))
    if abs(d0) <= 1e-12:
        return s_start
    if d0 > 0:
        raise ValueError("species 1 must be suppressed (mu1 < mu2) at s_start")

    # I(x) = int_{s_start}^{x} g, positive while x is above the crossover
    panel = (s_start - floor) / n_scan
    hi, I_hi = s_start, 0.0
    for k in range(1, n_scan + 1):
        lo = s_start - k * panel if k < n_scan else floor
        I_lo = I_hi + adaptive_simpson(g, hi, lo, tol / n_scan)
        if I_hi > 0 and I_lo <= 0:
            base, b_hi = I_hi, hi
            return bisect_root(lambda x: base + adaptive_simpson(g, b_hi, x, tol / n_scan),
                               lo, hi, xtol=1e-12)
        hi, I_hi = lo, I_lo
    raise NoReturn(f"integral stays positive down to s={floor}")


@dataclass(frozen=True)
class EquilibriumE2:
    """Equilibrium with species 1 absent: ``(s_bar, 0, s_in - s_bar)``."""

    s_bar: float
    s_in: float
    eigvals: tuple = ()

    @property
    def b1(self) -> float:
        return 0.0

    @property
    def b2(self) -> float:
        return self.s_in - self.s_bar

    @classmethod
    def analyse(cls, f1, f2, s_bar, s_in, cfg, law=Law.SIMPLE) -> "EquilibriumE2":
        return cls(s_bar, s_in, tuple(eigs_E2_closed_form(f1, f2, s_bar, s_in, cfg, law)))


@dataclass
class DriftRecord:
    t: np.ndarray
    s: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    s_bar: np.ndarray
    D_bar: np.ndarray


def two_species_drift(loop: ClosedLoop, state: PlantState, ctl: ControllerState, epsilon: float,
                      s_stop: float, record_every: float = 0.1, max_time: float = 50_000.0,
                      ) -> DriftRecord:
    """Adaptive law with drifting reference on the two-species plant.

    Runs until ``s_bar`` crosses ``s_stop`` (in the drift direction).
    """
    every = max(1, int(round(record_every / loop.h)))
    rows = []
    count = [0]
    sign = 1.0 if epsilon > 0 else -1.0

    def observer(t, y, sm, D):
        count[0] += 1
        if count[0] % every == 0:
            rows.append((t, y[0], y[1], y[2], y[4], y[3]))
        return sign * (y[4] - s_stop) >= 0

    rows.append((state.t, state.s, state.b[0], state.b[1], ctl.s_bar, ctl.D_bar))
    loop.simulate(state, ctl, max_time, adapt=True, drift=epsilon, observer=observer)
    a = np.array(rows)
    return DriftRecord(*(a[:, i] for i in range(6)))


def simulated_loss_point(rec: DriftRecord, i0: int = 0) -> float:
    """``s_bar`` at which ``b1`` first climbs back to its value at index ``i0``.

    Linear interpolation between records.  Raises :class:`NoReturn` if it
    never does.
    """
    ref = rec.b1[i0]
    dipped = False
    for i in range(i0 + 1, len(rec.b1)):
        if rec.b1[i] < ref:
            dipped = True
        elif dipped:
            w = (ref - rec.b1[i - 1]) / (rec.b1[i] - rec.b1[i - 1])
            return float(rec.s_bar[i - 1] + w * (rec.s_bar[i] - rec.s_bar[i - 1]))
    raise NoReturn("b1 never returned to its reference value")


def simulate_loss_point(f1: GrowthFunction, f2: GrowthFunction, s_start: float, s_in: float,
                        epsilon: float, cfg: ControllerConfig, b1_ini: float = 1e-3,
                        pre_settle: float = 500.0, h: float = 0.01,
                        disturbance: DisturbanceModel = NO_DISTURBANCE) -> float:
    """Simulated counterpart of :func:`delayed_loss_boundary`.

    The adaptive law first holds ``s_bar = s_start`` for ``pre_settle`` time
    units (species 2 takes over), then ``b1`` is set to ``b1_ini`` and the
    reference drifts down with speed ``epsilon < 0``; the return point of
    ``b1`` is read off the record.
    """
    if not epsilon < 0:
        raise ValueError("loss point needs a decreasing reference (epsilon < 0)")
    plant = PlantParams(s_in, (f1, f2))
    loop = ClosedLoop(plant, cfg, disturbance, h)
    ctl = ControllerState(s_start, 0.5 * (cfg.D_min + cfg.D_max))
    state = PlantState(0.0, s_start, (b1_ini, s_in - s_start - b1_ini))
    state, ctl = loop.simulate(state, ctl, pre_settle, adapt=True)
    state = PlantState(state.t, state.s, (b1_ini, state.b[1]))
    rec = two_species_drift(loop, state, ctl, epsilon, s_stop=1e-3, record_every=h)
    return simulated_loss_point(rec)


def branch_departure(rec: DriftRecord, mu: GrowthFunction, threshold: float = 0.05,
                     t_skip: float = 100.0) -> float:
    """``s_bar`` at which ``D_bar`` first departs from ``mu(s_bar)`` by ``threshold``."""
    err = np.abs(rec.D_bar - mu(rec.s_bar))
    idx = np.flatnonzero((err > threshold) & (rec.t >= rec.t[0] + t_skip))
    if len(idx) == 0:
        raise NoReturn("trajectory never left the branch")
    return float(rec.s_bar[idx[0]])


# --------------------------------------------------------------------------
# switching protocols


class ReadOff(str, enum.Enum):
    STOP_OF_INCREASE = "stop_of_increase"
    INFLECTION = "inflection"


@dataclass(frozen=True)
class SwitchProtocol:
    """Alternate between a parking point and probe references.

    Attributes
    ----------
    park : (s_bar, D_bar)
        Reference pair at which the read-off species dominates, so that the
        other one is driven down to (near) zero while parked.
    probes : sequence of (s_bar, D_bar)
        Visited one by one, each from a freshly settled park.
    read_off : ReadOff
        ``STOP_OF_INCREASE``: first local maximum of the smoothed output.
        ``INFLECTION``: first point after ``skip`` where the speed of the
        smoothed output passes through a minimum.
    smoothing_window : float
        Length of the centred moving average (time units).  The default ``pi``
        is one full period of the standard output disturbance.
    hysteresis : float
        The smoothed derivative must first exceed this before a maximum counts.
    peak_drop : float
        A maximum is confirmed once the smoothed output falls this far below it.
    probe_timeout : float
        Probes without an event by then are flagged unconverged.
    """

    park: tuple[float, float]
    probes: tuple[tuple[float, float], ...]
    read_off: ReadOff = ReadOff.STOP_OF_INCREASE
    smoothing_window: float = math.pi
    hysteresis: float = 1e-4
    peak_drop: float = 1e-4
    skip: float = 1.0
    probe_timeout: float = 300.0
    check_every: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "probes", tuple((float(a), float(b)) for a, b in self.probes))
        object.__setattr__(self, "read_off", ReadOff(self.read_off))
        if not self.probes:
            raise ValueError("at least one probe is required")
        if not self.smoothing_window > 0:
            raise ValueError("smoothing_window must be positive")


def moving_average(x: np.ndarray, n: int) -> np.ndarray:
    """Centred moving average over ``n`` samples ('valid' part only)."""
    c = np.cumsum(np.concatenate(([0.0], x)))
    return (c[n:] - c[:-n]) / n


def detect_event(t: np.ndarray, s: np.ndarray, D: np.ndarray, p: SwitchProtocol, h: float):
    """Locate the read-off event in probe samples.

    Returns ``(t_event, s_smooth, D_smooth)`` or None if not (yet) detected.
    """
    n = max(1, int(round(p.smoothing_window / h)))
    if len(s) < n + 3:
        return None
    ms = moving_average(s, n)
    mD = moving_average(D, n)
    tc = t[n // 2: n // 2 + len(ms)] if n % 2 else 0.5 * (t[n // 2 - 1: n // 2 - 1 + len(ms)] + t[n // 2: n // 2 + len(ms)])
    if p.read_off is ReadOff.STOP_OF_INCREASE:
        ds = np.diff(ms) / h
        above = ds > p.hysteresis
        if not above.any():
            return None
        first = int(np.argmax(above))
        # first local maximum, confirmed once s has fallen peak_drop below
        # its running maximum; reported at the maximum itself
        run = np.maximum.accumulate(ms[first:])
        drop = np.flatnonzero(ms[first:] < run - p.peak_drop)
        if len(drop) == 0:
            return None
        j = first + int(drop[0])
        i = first + int(np.argmax(ms[first:j + 1]))
        return float(tc[i]), float(ms[i]), float(mD[i])
    # inflection where the speed |ds/dt| passes through a minimum, i.e. the
    # product of first and second differences turns from negative to
    # positive; the mid-jump inflection (speed maximum) is skipped by the sign
    stride = max(1, int(round(0.1 / h)))
    ms_c, mD_c, t_c = ms[::stride], mD[::stride], tc[::stride]
    if len(ms_c) < 4:
        return None
    d1 = ms_c[2:] - ms_c[:-2]
    dd = ms_c[2:] - 2 * ms_c[1:-1] + ms_c[:-2]
    q = d1 * dd
    tt = t_c[1:-1]
    ok = np.flatnonzero(tt >= t[0] + p.skip)
    if len(ok) < 2:
        return None
    qo = q[ok]
    ch = np.flatnonzero((qo[:-1] < 0) & (qo[1:] >= 0))
    if len(ch) == 0:
        return None
    i = int(ok[ch[0] + 1]) + 1
    return float(t_c[i]), float(ms_c[i]), float(mD_c[i])


def run_switch_protocol(p: SwitchProtocol, loop: ClosedLoop, state: PlantState, settle: SettleConfig,
                        ) -> tuple[ReconstructedGraph, PlantState]:
    """Park, switch to a probe, read off at the detected event, repeat.

    Each probe yields one point ``(s_out, D_out)``: smoothed measured output and
    smoothed applied dilution at the event.  Probes without an event before
    ``probe_timeout`` are recorded unconverged at the last smoothed values.
    """
    graph = ReconstructedGraph("switch")
    t_begin = state.t
    park = ControllerState(*p.park)
    for s_bar, D_bar in p.probes:
        state, _ = run_until_settled(loop, state, park, settle)
        ctl = ControllerState(s_bar, D_bar)
        ts, ss, Ds = [], [], []

        def obs(t, y, sm, D):
            ts.append(t)
            ss.append(sm)
            Ds.append(D)

        t_switch = state.t
        event = None
        while state.t - t_switch < p.probe_timeout - 1e-9:
            state, _ = loop.simulate(state, ctl, p.check_every, observer=obs)
            event = detect_event(np.array(ts), np.array(ss), np.array(Ds), p, loop.h)
            if event is not None:
                break
        if event is None:
            n = max(1, int(round(p.smoothing_window / loop.h)))
            graph.points.append(GraphPoint(float(np.mean(ss[-n:])), float(np.mean(Ds[-n:])),
                                           state.t - t_begin, False, {"probe": (s_bar, D_bar)}))
            continue
        t_ev, s_out, D_out = event
        graph.points.append(GraphPoint(s_out, D_out, t_ev - t_begin, True,
                                       {"probe": (s_bar, D_bar), "t_event": t_ev - t_switch}))
    graph.model_time = state.t - t_begin
    return graph, state


@dataclass
class GainStudyRow:
    G1: float
    s: float
    mu_est: float
    mu_true: float
    rel_error: float
    converged: bool = True


def gain_accuracy_study(gains: Sequence[float], protocol: SwitchProtocol, plant: PlantParams,
                        cfg: ControllerConfig, state: PlantState, settle: SettleConfig,
                        disturbance: DisturbanceModel = NO_DISTURBANCE, h: float = 0.01,
                        target: int = 2, zero_gain_probes: Sequence[tuple[float, float]] | None = None,
                        ) -> list[GainStudyRow]:
    """Accuracy of the read-off growth rate of species ``target`` versus ``G1``.

    Every gain runs the same protocol from the same initial state.  The error
    is relative to the gap between the two growth rates:
    ``|mu_est - mu_target(s)| / |mu1(s) - mu2(s)|``.  With ``G1 = 0`` the
    reference ``s_bar`` has no effect, so ``zero_gain_probes`` (varying
    ``D_bar``) replace the probes.
    """
    if plant.n_species != 2:
        raise ValueError("gain study needs two species")
    mu_t = plant.growths[target - 1]
    f1, f2 = plant.growths
    rows = []
    for G1 in gains:
        c = ControllerConfig(cfg.D_min, cfg.D_max, float(G1), cfg.G2, cfg.s_min)
        prot = protocol
        if G1 == 0 and zero_gain_probes is not None:
            prot = replace(protocol, probes=tuple(zero_gain_probes))
        loop = ClosedLoop(plant, c, disturbance, h)
        graph, _ = run_switch_protocol(prot, loop, state, settle)
        for pt in graph.points:
            true = float(mu_t(pt.s))
            gap = abs(float(f1(pt.s) - f2(pt.s)))
            rel = abs(pt.mu_est - true) / gap if gap > 0 else math.inf
            rows.append(GainStudyRow(float(G1), pt.s, pt.mu_est, true, rel, pt.converged))
    return rows


def error_curves_on_common_grid(rows: Sequence[GainStudyRow], n: int = 9,
                                region: tuple[float, float] = (0.0, math.inf),
                                ) -> tuple[np.ndarray, dict[float, np.ndarray]]:
    """Interpolate each gain's relative-error curve onto a shared abscissa grid.

    Only converged rows with ``s`` strictly inside ``region`` are used (pass
    the suppressed side of the crossover: the error mechanism differs on the
    other side, so interpolating across it is meaningless).  The grid spans
    the overlap of all gains' abscissa ranges.
    """
    by_gain: dict[float, list[GainStudyRow]] = {}
    for r in rows:
        if r.converged and math.isfinite(r.rel_error) and region[0] < r.s < region[1]:
            by_gain.setdefault(r.G1, []).append(r)
    lo = max(min(r.s for r in rs) for rs in by_gain.values())
    hi = min(max(r.s for r in rs) for rs in by_gain.values())
    if not lo < hi:
        raise ValueError("gain curves share no abscissa range")
    grid = np.linspace(lo, hi, n)
    curves = {}
    for g, rs in sorted(by_gain.items()):
        rs = sorted(rs, key=lambda r: r.s)
        curves[g] = np.interp(grid, [r.s for r in rs], [r.rel_error for r in rs])
    return grid, curves
