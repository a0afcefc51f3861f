"""Scenario files, the campaign runner and the command-line entry point.

A scenario is a YAML mapping; see ``configs/`` for complete examples and
the README for the grammar.  ``run`` writes three files into the output
directory:

``timeseries.csv``
    ``t, s_true, s_measured, b1[, b2], D, s_bar, D_bar`` every
    ``record_every`` time units.
``reconstruction.csv``
    One row per identified point (or per gain-study row / suite case).
``summary.txt``
    Errors against the true growth function, model and wall time.

Exit codes: 0 success, 1 some points flagged unconverged, 2 configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import growth as growth_mod
from .control import ClosedLoop, ControllerConfig, ControllerState
from .dynamics import DisturbanceModel, NumericalBlowup, PlantParams, PlantState
from .growth import GrowthFunction
from .reconstruct import (
    NewtonConfig,
    NoEquilibrium,
    ReconstructedGraph,
    SecantConfig,
    SimulatedEquilibrium,
    StalledContinuation,
    convergence_suite,
    drift_reconstruct,
    equilibrium_oracle,
    fmt,
    newton_reconstruct,
    sample_admissible_pairs,
    secant_reconstruct,
)
from .settle import SettleConfig
from .twospecies import (
    NoReturn,
    SwitchProtocol,
    branch_departure,
    error_curves_on_common_grid,
    gain_accuracy_study,
    run_switch_protocol,
)

EXIT_OK, EXIT_FLAGGED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
METHODS = ("drift", "newton", "secant", "switch", "gain_study", "global_stability")


class ConfigError(ValueError):
    """Invalid scenario; ``errors`` lists ``"field.path: message"`` strings."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class ScenarioConfig:
    name: str
    plant: PlantParams
    controller: ControllerConfig
    law: str
    s_bar0: float
    D_bar0: float
    disturbance: DisturbanceModel
    initial_state: PlantState
    settle: SettleConfig
    h: float
    method: dict
    out_dir: Path
    record_every: float = 1.0
    seed: int = 0
    source: Optional[Path] = None
    raw: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.method["kind"]


# --------------------------------------------------------------------------
# parsing and validation


class _Reader:
    """Collects validation errors with their field paths instead of stopping at the first."""

    def __init__(self):
        self.errors: list[str] = []

    def err(self, path: str, msg: str) -> None:
        self.errors.append(f"{path}: {msg}")

    def section(self, doc: dict, key: str, required: bool = True) -> dict:
        val = doc.get(key)
        if val is None:
            if required:
                self.err(key, "missing section")
            return {}
        if not isinstance(val, dict):
            self.err(key, "must be a mapping")
            return {}
        return val

    def num(self, sec: dict, path: str, key: str, default: Any = None, *, positive=False,
            nonneg=False) -> Optional[float]:
        where = f"{path}.{key}" if path else key
        if key not in sec:
            if default is None:
                self.err(where, "required")
            return default
        try:
            x = float(sec[key])
        except (TypeError, ValueError):
            self.err(where, f"not a number: {sec[key]!r}")
            return default
        if not math.isfinite(x):
            self.err(where, "must be finite")
        elif positive and not x > 0:
            self.err(where, "must be positive")
        elif nonneg and x < 0:
            self.err(where, "must be non-negative")
        return x


def _range(spec, path: str, rd: _Reader) -> list[float]:
    """A list of numbers, or ``{start, stop, step}`` with ``stop`` inclusive."""
    if isinstance(spec, dict):
        try:
            a, b, d = float(spec["start"]), float(spec["stop"]), float(spec["step"])
        except (KeyError, TypeError, ValueError):
            rd.err(path, "range needs numeric start, stop, step")
            return []
        if d == 0 or (b - a) / d < 0:
            rd.err(path, "step has the wrong sign or is zero")
            return []
        n = int(math.floor((b - a) / d + 1e-9))
        return [round(a + k * d, 12) for k in range(n + 1)]
    if isinstance(spec, (list, tuple)):
        try:
            return [float(x) for x in spec]
        except (TypeError, ValueError):
            rd.err(path, "list entries must be numbers")
            return []
    rd.err(path, "expected a list or a {start, stop, step} mapping")
    return []


def _pairs(spec, path: str, rd: _Reader) -> list[tuple[float, float]]:
    """Pairs as a list of ``[s_bar, D_bar]`` or ``{s_bar: <range>, D_bar: <range>}``."""
    if isinstance(spec, dict):
        s = spec.get("s_bar")
        D = spec.get("D_bar")
        ss = _range(s, f"{path}.s_bar", rd) if isinstance(s, (list, dict)) else [float(s)] if s is not None else []
        DD = _range(D, f"{path}.D_bar", rd) if isinstance(D, (list, dict)) else [float(D)] if D is not None else []
        if not ss or not DD:
            rd.err(path, "needs s_bar and D_bar")
            return []
        if len(ss) > 1 and len(DD) > 1 and len(ss) != len(DD):
            rd.err(path, "s_bar and D_bar ranges differ in length")
            return []
        n = max(len(ss), len(DD))
        ss = ss * n if len(ss) == 1 else ss
        DD = DD * n if len(DD) == 1 else DD
        return list(zip(ss, DD))
    try:
        out = [(float(a), float(b)) for a, b in spec]
    except (TypeError, ValueError):
        rd.err(path, "expected a list of [s_bar, D_bar] pairs")
        return []
    return out


def parse_config(doc: Any, source: Optional[Path] = None) -> ScenarioConfig:
    """Validate a parsed YAML document and build a :class:`ScenarioConfig`."""
    rd = _Reader()
    if not isinstance(doc, dict):
        raise ConfigError(["<root>: scenario must be a mapping"])

    # plant
    p = rd.section(doc, "plant")
    s_in = rd.num(p, "plant", "s_in", 1.0, positive=True) if p else 1.0
    b_min = rd.num(p, "plant", "b_min", 0.0, nonneg=True) if p else 0.0
    growths: list[GrowthFunction] = []
    if p:
        gl = p.get("growth")
        if isinstance(gl, dict):
            gl = [gl]
        if not isinstance(gl, list) or not 1 <= len(gl) <= 2:
            rd.err("plant.growth", "one or two growth functions required")
        else:
            for i, g in enumerate(gl):
                try:
                    growths.append(growth_mod.from_dict(g))
                except (KeyError, TypeError, ValueError) as exc:
                    rd.err(f"plant.growth[{i}]", str(exc))

    # controller
    c = rd.section(doc, "controller")
    law = str(c.get("law", "simple")).lower()
    if law not in ("simple", "dynamic"):
        rd.err("controller.law", "must be 'simple' or 'dynamic'")
    D_min = rd.num(c, "controller", "D_min", positive=True) if c else None
    D_max = rd.num(c, "controller", "D_max", positive=True) if c else None
    G1 = rd.num(c, "controller", "G1", nonneg=True) if c else None
    G2 = rd.num(c, "controller", "G2", 0.0, nonneg=True) if c else 0.0
    s_min = rd.num(c, "controller", "s_min", 0.0, nonneg=True) if c else 0.0
    if c and law == "dynamic" and not (G2 or 0) > 0:
        rd.err("controller.G2", "must be positive for the dynamic law")
    if D_min is not None and D_max is not None and not D_min < D_max:
        rd.err("controller.D_max", "must exceed D_min")
    s_bar0 = rd.num(c, "controller", "s_bar0", 0.5 * s_in) if c else 0.5 * s_in
    mid = 0.5 * (D_min + D_max) if D_min is not None and D_max is not None else None
    D_bar0 = rd.num(c, "controller", "D_bar0", mid) if c and mid is not None else mid

    # disturbance
    d = rd.section(doc, "disturbance", required=False)
    amp = rd.num(d, "disturbance", "amplitude", 0.0, nonneg=True)
    if amp is not None and amp >= 1:
        rd.err("disturbance.amplitude", "must be below 1")
    w1 = rd.num(d, "disturbance", "freq1", 3.0)
    w2 = rd.num(d, "disturbance", "freq2", 1.0)

    # settle / integrator
    st = rd.section(doc, "settle", required=False)
    window = rd.num(st, "settle", "window", 20.0, positive=True)
    ratio = rd.num(st, "settle", "improvement_ratio", 0.9, positive=True)
    max_time = rd.num(st, "settle", "max_time", 2000.0, positive=True)
    tol = rd.num(st, "settle", "tol", 1e-3, positive=True)
    integ = rd.section(doc, "integrator", required=False)
    h = rd.num(integ, "integrator", "h", 0.01, positive=True)
    record_every = rd.num(doc, "", "record_every", 1.0, positive=True)
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        rd.err("seed", "must be an integer")
        seed = 0

    # method
    m = rd.section(doc, "method")
    method: dict = {}
    kind = str(m.get("kind", "")).lower() if m else ""
    if m and kind not in METHODS:
        rd.err("method.kind", f"must be one of {', '.join(METHODS)}")
    if kind:
        method["kind"] = kind
    if kind == "drift":
        method["epsilon"] = rd.num(m, "method", "epsilon")
        if method["epsilon"] == 0:
            rd.err("method.epsilon", "must be non-zero")
        win = m.get("window", [0.05, 0.95])
        if not (isinstance(win, list) and len(win) == 2):
            rd.err("method.window", "expected [s_lo, s_hi]")
        else:
            method["window"] = (float(win[0]), float(win[1]))
            if not 0 < win[0] < win[1] < s_in:
                rd.err("method.window", "must satisfy 0 < s_lo < s_hi < s_in")
        method["max_time"] = rd.num(m, "method", "max_time", 20000.0, positive=True)
        method["t_skip"] = rd.num(m, "method", "t_skip", 200.0, nonneg=True)
        if law != "dynamic":
            rd.err("controller.law", "drift needs the dynamic law")
    elif kind in ("newton", "secant"):
        if G1 is not None and not G1 > 0:
            rd.err("controller.G1", f"must be positive for method {kind}")
        if kind == "newton":
            method["grid"] = _range(m.get("grid"), "method.grid", rd)
            method["max_newton_iters"] = int(rd.num(m, "method", "max_newton_iters", 20, positive=True))
        else:
            method["delta"] = rd.num(m, "method", "delta", positive=True)
            method["n_points"] = int(rd.num(m, "method", "n_points", 100, positive=True))
            method["seed_grid"] = _range(m.get("seed_grid"), "method.seed_grid", rd)
            if len(method["seed_grid"]) != 2:
                rd.err("method.seed_grid", "exactly two seed abscissae required")
            win = m.get("window", [0.0, s_in])
            method["window"] = (float(win[0]), float(win[1]))
            method["max_newton_iters"] = int(rd.num(m, "method", "max_newton_iters", 20, positive=True))
    elif kind in ("switch", "gain_study"):
        if len(growths) != 2:
            rd.err("plant.growth", f"method {kind} needs two growth functions")
        park = m.get("park")
        if not (isinstance(park, list) and len(park) == 2):
            rd.err("method.park", "expected [s_bar, D_bar]")
        else:
            method["park"] = (float(park[0]), float(park[1]))
        method["probes"] = _pairs(m.get("probes", []), "method.probes", rd)
        if not method["probes"]:
            rd.err("method.probes", "at least one probe is required")
        method["read_off"] = str(m.get("read_off", "stop_of_increase"))
        if method["read_off"] not in ("stop_of_increase", "inflection"):
            rd.err("method.read_off", "must be 'stop_of_increase' or 'inflection'")
        method["target"] = int(m.get("target", 1))
        if method["target"] not in (1, 2):
            rd.err("method.target", "must be 1 or 2")
        for key, default in (("smoothing_window", math.pi), ("hysteresis", 1e-4), ("peak_drop", 1e-4),
                             ("skip", 1.0), ("probe_timeout", 300.0)):
            method[key] = rd.num(m, "method", key, default, positive=True)
        if kind == "gain_study":
            method["gains"] = _range(m.get("gains"), "method.gains", rd)
            if any(g < 0 for g in method["gains"]):
                rd.err("method.gains", "gains must be non-negative")
            zg = m.get("zero_gain_probes")
            method["zero_gain_probes"] = _pairs(zg, "method.zero_gain_probes", rd) if zg is not None else None
            if 0.0 in method["gains"] and not method["zero_gain_probes"]:
                rd.err("method.zero_gain_probes", "required when the gains include 0")
            method["region"] = tuple(float(x) for x in m.get("region", [0.0, s_in]))
    elif kind == "global_stability":
        method["n_pairs"] = int(rd.num(m, "method", "n_pairs", 20, positive=True))
        method["n_initial"] = int(rd.num(m, "method", "n_initial", 100, positive=True))
        method["duration"] = rd.num(m, "method", "duration", 2000.0, positive=True)

    # outputs
    o = rd.section(doc, "outputs", required=False)
    out_dir = Path(str(o.get("dir", "out")))

    if rd.errors:
        raise ConfigError(rd.errors)

    # nested invariants raise ValueError; report them under their section
    try:
        plant = PlantParams(s_in, tuple(growths), b_min)
    except ValueError as exc:
        raise ConfigError([f"plant: {exc}"]) from None
    try:
        ctl_cfg = ControllerConfig(D_min, D_max, G1, G2, s_min)
    except ValueError as exc:
        raise ConfigError([f"controller: {exc}"]) from None
    try:
        dist = DisturbanceModel(amp, w1, w2)
    except ValueError as exc:
        raise ConfigError([f"disturbance: {exc}"]) from None
    try:
        settle = SettleConfig(window, ratio, max_time, tol)
    except ValueError as exc:
        raise ConfigError([f"settle: {exc}"]) from None

    ini = doc.get("initial_state") or {}
    errs = []
    s0 = float(ini.get("s", s_bar0))
    if not 0 <= s0 <= s_in:
        errs.append("initial_state.s: must lie in [0, s_in]")
    if "b" in ini:
        b = ini["b"] if isinstance(ini["b"], list) else [ini["b"]]
        if len(b) != plant.n_species:
            errs.append(f"initial_state.b: expected {plant.n_species} values")
        state = PlantState(0.0, s0, tuple(float(x) for x in b))
    else:
        state = PlantState.on_stoichiometric_set(s0, plant)
    if not D_min <= D_bar0 <= D_max:
        errs.append("controller.D_bar0: must lie in [D_min, D_max]")
    if errs:
        raise ConfigError(errs)

    return ScenarioConfig(
        name=str(doc.get("name", source.stem if source else "scenario")),
        plant=plant, controller=ctl_cfg, law=law, s_bar0=s_bar0, D_bar0=D_bar0,
        disturbance=dist, initial_state=state, settle=settle, h=h, method=method,
        out_dir=out_dir, record_every=record_every, seed=seed, source=source, raw=doc,
    )


def load_config(path) -> ScenarioConfig:
    """Read and validate a scenario file.

    Raises
    ------
    ConfigError
        On YAML syntax errors or any invalid field (all are reported).
    """
    path = Path(path)
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError([f"<parse>: {exc}"]) from None
    except OSError as exc:
        raise ConfigError([f"<file>: {exc}"]) from None
    return parse_config(doc, path)


# --------------------------------------------------------------------------
# running


class TimeseriesRecorder:
    """Samples the closed loop every ``every`` time units (on the step grid)."""

    def __init__(self, n_species: int, every: float, h: float):
        self.ns = n_species
        self.stride = max(1, int(round(every / h)))
        self.h = h
        self.rows: list[tuple] = []

    def record(self, t, y, sm, D):
        k = int(round(t / self.h))
        if k % self.stride == 0:
            ns = self.ns
            self.rows.append((t, y[0], sm, *y[1:ns + 1], D, y[ns + 2], y[ns + 1]))

    def write(self, path: Path) -> None:
        bcols = [f"b{i + 1}" for i in range(self.ns)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "s_true", "s_measured", *bcols, "D", "s_bar", "D_bar"])
            for r in self.rows:
                w.writerow([fmt(x) for x in r])


@dataclass
class RunReport:
    exit_code: int
    lines: list[str]
    out_dir: Path


def _error_lines(graph: ReconstructedGraph, mu: GrowthFunction, skip_before: float = 0.0) -> list[str]:
    pts = [p for p in graph.points if p.accepted_at >= skip_before and p.converged]
    if not pts:
        return ["max_abs_error: n/a", "mean_abs_error: n/a"]
    err = np.abs(np.array([p.mu_est for p in pts]) - mu(np.array([p.s for p in pts])))
    return [f"max_abs_error: {fmt(err.max())}", f"mean_abs_error: {fmt(err.mean())}"]


def run_scenario(cfg: ScenarioConfig, out_dir: Optional[Path] = None) -> RunReport:
    """Execute the configured method and write the output files."""
    out = Path(out_dir) if out_dir is not None else cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    wall0 = time.perf_counter()
    plant, c = cfg.plant, cfg.controller
    loop = ClosedLoop(plant, c, cfg.disturbance, cfg.h)
    rec = TimeseriesRecorder(plant.n_species, cfg.record_every, cfg.h)
    loop.recorder = rec
    ctl = ControllerState(cfg.s_bar0, cfg.D_bar0)
    kind = cfg.kind
    mu = plant.growths[0]
    lines = [f"scenario: {cfg.name}", f"method: {kind}"]
    flagged = 0
    recon_path = out / "reconstruction.csv"

    if kind == "drift":
        m = cfg.method
        graph, _, ctl_end = drift_reconstruct(loop, cfg.initial_state, ctl, m["epsilon"], m["window"],
                                              cfg.record_every, m["max_time"])
        graph.write_csv(recon_path, mu if plant.n_species == 1 else None)
        lines.append(f"points: {len(graph)}")
        exited = not m["window"][0] <= ctl_end.s_bar <= m["window"][1]
        lines.append(f"window_exit_time: {fmt(graph.model_time) if exited else 'not reached'}")
        if not exited:
            flagged += 1
        if plant.n_species == 1:
            lines += _error_lines(graph, mu, cfg.initial_state.t + m["t_skip"])
        else:
            # which branch is followed first depends on the drift direction
            f_first = plant.growths[1] if m["epsilon"] < 0 else plant.growths[0]
            rd = _drift_record(graph)
            try:
                lines.append(f"branch_departure_s_bar: {fmt(branch_departure(rd, f_first))}")
            except NoReturn:
                lines.append("branch_departure_s_bar: none")
        model_time = graph.model_time
    elif kind == "newton":
        m = cfg.method
        ev = SimulatedEquilibrium(loop, cfg.initial_state, cfg.settle)
        nc = NewtonConfig(tuple(m["grid"]), tol=cfg.settle.tol, max_newton_iters=m["max_newton_iters"])
        graph = newton_reconstruct(nc, ev, c)
        graph.write_csv(recon_path, mu)
        flagged = graph.n_unconverged
        lines += [f"points: {len(graph)}", f"unconverged: {flagged}"] + _error_lines(graph, mu)
        model_time = graph.model_time
    elif kind == "secant":
        m = cfg.method
        ev = SimulatedEquilibrium(loop, cfg.initial_state, cfg.settle)
        nc = NewtonConfig(tuple(m["seed_grid"]), tol=cfg.settle.tol, max_newton_iters=m["max_newton_iters"])
        seeds = newton_reconstruct(nc, ev, c)
        sc = SecantConfig(m["delta"], m["n_points"], s_window=m["window"])
        graph = secant_reconstruct(sc, ev, c, seeds.points)
        graph.write_csv(recon_path, mu)
        flagged = graph.n_unconverged
        lines += [f"points: {len(graph)}", f"unconverged: {flagged}"] + _error_lines(graph, mu)
        model_time = graph.model_time
    elif kind == "switch":
        m = cfg.method
        graph, _ = run_switch_protocol(_protocol(m), loop, cfg.initial_state, cfg.settle)
        target = plant.growths[m["target"] - 1]
        graph.write_csv(recon_path, target)
        flagged = graph.n_unconverged
        lines += [f"points: {len(graph)}", f"unconverged: {flagged}"] + _error_lines(graph, target)
        model_time = graph.model_time
    elif kind == "gain_study":
        m = cfg.method
        loop.recorder = None  # one loop per gain; no single time series
        rows = gain_accuracy_study(m["gains"], _protocol(m), plant, c, cfg.initial_state, cfg.settle,
                                   cfg.disturbance, cfg.h, m["target"], m["zero_gain_probes"])
        with open(recon_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["G1", "s", "mu_est", "mu_true", "rel_error", "converged"])
            for r in rows:
                w.writerow([fmt(r.G1), fmt(r.s), fmt(r.mu_est), fmt(r.mu_true), fmt(r.rel_error),
                            int(r.converged)])
        lines.append(f"rows: {len(rows)}")
        try:
            grid, curves = error_curves_on_common_grid(rows, region=m["region"])
            gains = sorted(curves)
            ok = all(np.all(curves[b] <= curves[a]) for a, b in zip(gains, gains[1:]))
            lines.append(f"common_abscissae: {fmt(grid[0])} .. {fmt(grid[-1])}")
            lines.append(f"ordering_non_increasing_in_G1: {ok}")
            if not ok:
                flagged += 1
        except ValueError as exc:
            lines.append(f"ordering_non_increasing_in_G1: n/a ({exc})")
        model_time = 0.0
    elif kind == "global_stability":
        m = cfg.method
        loop.recorder = None
        rng = np.random.default_rng(cfg.seed)
        pairs = sample_admissible_pairs(mu, c, plant.s_in, m["n_pairs"], rng)
        cases = convergence_suite(mu, c, plant.s_in, pairs, m["n_initial"], rng, m["duration"], cfg.h)
        with open(recon_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s_bar", "D_bar", "oracle_s", "spread", "oracle_mismatch"])
            for k in cases:
                w.writerow([fmt(k.ctl.s_bar), fmt(k.ctl.D_bar), fmt(k.oracle_s), fmt(k.spread),
                            fmt(k.oracle_mismatch(plant.s_in))])
        spread = max(k.spread for k in cases)
        mism = max(k.oracle_mismatch(plant.s_in) for k in cases)
        lines += [f"pairs: {len(cases)}", f"initial_conditions_per_pair: {m['n_initial']}",
                  f"max_spread: {fmt(spread)}", f"max_oracle_mismatch: {fmt(mism)}"]
        if not (spread < 1e-6 and mism < 1e-6):
            flagged += 1
        model_time = m["duration"]
    else:  # pragma: no cover - parse_config rejects unknown kinds
        raise ConfigError([f"method.kind: unknown {kind!r}"])

    rec.write(out / "timeseries.csv")
    lines.append(f"model_time: {fmt(model_time)}")
    lines.append(f"wall_time_s: {time.perf_counter() - wall0:.3f}")
    lines.append(f"flagged: {flagged}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return RunReport(EXIT_FLAGGED if flagged else EXIT_OK, lines, out)


def _protocol(m: dict) -> SwitchProtocol:
    return SwitchProtocol(m["park"], tuple(m["probes"]), m["read_off"], m["smoothing_window"],
                          m["hysteresis"], m["peak_drop"], m["skip"], m["probe_timeout"])


def _drift_record(graph: ReconstructedGraph):
    from .twospecies import DriftRecord
    t = np.array([p.accepted_at for p in graph.points])
    s = graph.s
    nan = np.full_like(t, np.nan)
    return DriftRecord(t, nan, nan, nan, s, graph.mu_est)


def oracle_table(cfg: ScenarioConfig, s_grid=None, D_grid=None) -> list[tuple[float, float, float, float]]:
    """Rows ``(s_bar, D_bar, s_eq, D_eq)`` of the equilibrium map for the first species."""
    mu = cfg.plant.growths[0]
    s_in = cfg.plant.s_in
    s_grid = np.round(np.arange(1, 20) * 0.05 * s_in, 12) if s_grid is None else s_grid
    D_grid = [cfg.D_bar0] if D_grid is None else D_grid
    rows = []
    for sb in s_grid:
        for Db in D_grid:
            ctl = ControllerState(float(sb), float(Db))
            s_eq = equilibrium_oracle(mu, ctl, cfg.controller, s_in)
            D_eq = float(np.clip(Db - cfg.controller.G1 * (s_eq - sb), cfg.controller.D_min,
                                 cfg.controller.D_max))
            rows.append((float(sb), float(Db), s_eq, D_eq))
    return rows


# --------------------------------------------------------------------------
# command line


def _run_one(path: str, out_dir: Optional[str], seed: Optional[int], quiet: bool) -> int:
    try:
        cfg = load_config(path)
        if seed is not None:
            cfg.seed = seed
        report = run_scenario(cfg, Path(out_dir) if out_dir else None)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"{path}: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalBlowup as exc:
        print(f"{path}: numerical failure at t={exc.t!r}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NoEquilibrium, StalledContinuation, NoReturn) as exc:
        print(f"{path}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if not quiet:
        print("\n".join(report.lines))
        print(f"outputs: {report.out_dir}")
    return report.exit_code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chemostat-recon",
                                 description="Feedback-based growth-function identification in a chemostat.")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one or more scenario files")
    r.add_argument("configs", nargs="+")
    r.add_argument("--out-dir", help="output directory (one sub-directory per scenario if several)")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--quiet", action="store_true")
    r.add_argument("--jobs", type=int, default=1, help="run independent scenarios in parallel")

    v = sub.add_parser("validate", help="check scenario files without running them")
    v.add_argument("configs", nargs="+")
    v.add_argument("--quiet", action="store_true")

    o = sub.add_parser("oracle", help="tabulate the equilibrium map of the configured growth function")
    o.add_argument("config")
    o.add_argument("--out-dir", help="write oracle.csv here instead of printing")
    o.add_argument("--quiet", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "validate":
        code = EXIT_OK
        for path in args.configs:
            try:
                load_config(path)
                if not args.quiet:
                    print(f"{path}: ok")
            except ConfigError as exc:
                for e in exc.errors:
                    print(f"{path}: config error: {e}", file=sys.stderr)
                code = EXIT_CONFIG
        return code

    if args.command == "oracle":
        try:
            cfg = load_config(args.config)
            rows = oracle_table(cfg)
        except ConfigError as exc:
            for e in exc.errors:
                print(f"{args.config}: config error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        except NoEquilibrium as exc:
            print(f"{args.config}: numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        header = ["s_bar", "D_bar", "s_eq", "D_eq"]
        if args.out_dir:
            out = Path(args.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            with open(out / "oracle.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows([[fmt(x) for x in r] for r in rows])
        elif not args.quiet:
            w = csv.writer(sys.stdout, lineterminator="\n")
            w.writerow(header)
            w.writerows([[fmt(x) for x in r] for r in rows])
        return EXIT_OK

    # run
    paths = args.configs
    if len(paths) == 1:
        return _run_one(paths[0], args.out_dir, args.seed, args.quiet)
    outs = [os.path.join(args.out_dir, Path(p).stem) if args.out_dir else None for p in paths]
    jobs = [(p, o, args.seed, args.quiet) for p, o in zip(paths, outs)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            codes = list(ex.map(_run_one, *zip(*jobs)))
    else:
        codes = [_run_one(*j) for j in jobs]
    return max(codes)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
