"""Settlement detection: evaluate the asymptotic output s_eq(s_bar, D_bar).

The closed loop runs in fixed, non-overlapping windows.  Transients count as
settled once the standard deviation of the measured output stops shrinking,
i.e. ``std(window k) >= improvement_ratio * std(window k-1)``; the window mean
is then the equilibrium reading.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import ClosedLoop, ControllerState, simple_feedback
from .dynamics import PlantState


@dataclass(frozen=True)
class SettleConfig:
    window: float = 20.0
    improvement_ratio: float = 0.9
    max_time: float = 2000.0
    tol: float = 1e-3

    def __post_init__(self):
        if not self.window > 0:
            raise ValueError("window must be positive")
        if not 0 < self.improvement_ratio < 1:
            raise ValueError("improvement_ratio must lie in (0, 1)")
        if not self.max_time >= 2 * self.window:
            raise ValueError("max_time must cover at least two windows")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class SettleResult:
    s_eq: float
    D_at_eq: float
    elapsed: float
    settled: bool
    windows: list[tuple[int, float, float]] = field(default_factory=list)  # (index, std, mean)


def residual(s_eq: float, s_bar: float) -> float:
    """Offset ``s_eq - s_bar``; vanishes exactly when ``D_bar = mu(s_bar)``."""
    return s_eq - s_bar


def run_until_settled(loop: ClosedLoop, state: PlantState, ctl: ControllerState,
                      sc: SettleConfig) -> tuple[PlantState, SettleResult]:
    """Run the static-law closed loop until the measured output has settled.

    Returns the plant state at the end of the last window and the reading.
    ``settled`` is False if ``max_time`` ran out first; ``s_eq`` is then the
    mean over the last completed window.
    """
    n_windows = int(sc.max_time // sc.window)
    prev_std = None
    windows = []
    t_start = state.t
    settled = False
    for k in range(n_windows):
        buf: list[float] = []
        state, _ = loop.simulate(state, ctl, sc.window,
                                 observer=lambda t, y, sm, D: buf.append(sm))
        arr = np.asarray(buf)
        std, mean = float(arr.std()), float(arr.mean())
        windows.append((k, std, mean))
        if prev_std is not None and std >= sc.improvement_ratio * prev_std:
            settled = True
            break
        prev_std = std
    s_eq = windows[-1][2]
    return state, SettleResult(
        s_eq=s_eq,
        D_at_eq=simple_feedback(s_eq, ctl, loop.cfg),
        elapsed=state.t - t_start,
        settled=settled,
        windows=windows,
    )
