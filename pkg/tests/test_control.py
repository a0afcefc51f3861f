import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemostat_recon.control import (
    ClosedLoop,
    ControllerConfig,
    ControllerState,
    admissibility_violations,
    drift_rhs,
    dyn_feedback_rhs,
    saturate,
    simple_feedback,
)
from chemostat_recon.dynamics import STANDARD_DISTURBANCE, PlantParams, PlantState
from chemostat_recon.growth import Haldane

HALDANE = Haldane(1.0, 1.0, 10.0)
CFG = ControllerConfig(0.02, 0.2, 2.0, 2.0)


def test_config_validation():
    with pytest.raises(ValueError):
        ControllerConfig(0.2, 0.02, 1.0)
    with pytest.raises(ValueError):
        ControllerConfig(0.0, 0.2, 1.0)
    with pytest.raises(ValueError):
        ControllerConfig(0.02, 0.2, -1.0)


def test_saturate_examples():
    assert saturate(0.5, 0.02, 0.2) == 0.2
    assert saturate(0.1, 0.02, 0.2) == 0.1
    assert saturate(-1.0, 0.02, 0.2) == 0.02


def test_feedback_examples():
    ctl = ControllerState(0.3, 0.13)
    assert simple_feedback(0.3, ctl, CFG) == 0.13
    assert simple_feedback(0.35, ctl, CFG) == pytest.approx(0.03)
    assert simple_feedback(0.2, ctl, CFG) == 0.2


def test_adaptation_examples():
    assert dyn_feedback_rhs(0.3, ControllerState(0.3, 0.1), CFG) == 0.0
    assert dyn_feedback_rhs(0.5, ControllerState(0.3, 0.02), CFG) == 0.0
    assert dyn_feedback_rhs(0.5, ControllerState(0.3, 0.2), CFG) == 0.0
    assert dyn_feedback_rhs(0.4, ControllerState(0.3, 0.1), CFG) == pytest.approx(-0.0016)


def test_drift_examples():
    assert drift_rhs(1.0, 0.001, 1.0) == 0.0
    assert drift_rhs(0.5, 0.001, 1.0) == pytest.approx(0.00025)
    assert drift_rhs(0.5, -0.001, 1.0) == pytest.approx(-0.00025)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.02, 0.2), st.floats(0, 10))
def test_feedback_stays_in_bounds(s, s_bar, D_bar, G1):
    cfg = ControllerConfig(0.02, 0.2, G1)
    D = simple_feedback(s, ControllerState(s_bar, D_bar), cfg)
    assert 0.02 <= D <= 0.2


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0.02, 0.2), st.floats(0, 10))
def test_feedback_non_increasing_in_output(s1, s2, s_bar, D_bar, G1):
    cfg = ControllerConfig(0.02, 0.2, G1)
    ctl = ControllerState(s_bar, D_bar)
    lo, hi = sorted((s1, s2))
    assert simple_feedback(hi, ctl, cfg) <= simple_feedback(lo, ctl, cfg)


def test_admissibility_checks():
    cfg = ControllerConfig(0.02, 0.2, 1.0, s_min=0.05)
    assert admissibility_violations(HALDANE, cfg, ControllerState(0.3, 0.1), 1.0) == []
    no_floor = ControllerConfig(0.02, 0.2, 1.0)
    assert any("D_min" in m for m in admissibility_violations(HALDANE, no_floor, ControllerState(0.3, 0.1), 1.0))
    weak = ControllerConfig(0.02, 0.2, 0.05, s_min=0.05)
    msgs = admissibility_violations(HALDANE, weak, ControllerState(0.3, 0.1), 1.0)
    assert any("min mu'" in m for m in msgs)
    low_cap = ControllerConfig(0.02, 0.1, 1.0, s_min=0.05)
    assert any("D_max" in m for m in admissibility_violations(HALDANE, low_cap, ControllerState(0.3, 0.05), 1.0))


def test_adaptive_law_converges_to_growth_rate():
    """Fixed reference, adaptive D_bar: D_bar -> mu(s_bar) within t=500."""
    loop = ClosedLoop(PlantParams(1.0, (HALDANE,)), CFG, STANDARD_DISTURBANCE, h=0.01)
    s_bar = 0.3
    state = PlantState(0.0, s_bar + 0.05, (1.0 - s_bar - 0.05,))
    ctl = ControllerState(s_bar, 0.11)
    tail = []

    def obs(t, y, sm, D):
        if t > 450:
            tail.append((y[0], y[2]))

    state, ctl = loop.simulate(state, ctl, 500.0, adapt=True, observer=obs)
    s_tail, D_tail = np.array(tail).T
    assert abs(ctl.D_bar - HALDANE(s_bar)) < 0.01
    assert np.max(np.abs(s_tail - s_bar)) < 2 * STANDARD_DISTURBANCE.amplitude * s_bar
    assert np.all((0.02 < D_tail) & (D_tail < 0.2))
    assert loop.model_time == pytest.approx(500.0)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.05, 0.9), st.floats(0.021, 0.199), st.floats(0.0, 0.99))
def test_reference_input_stays_inside_bounds(s_bar, D_bar0, s0):
    loop = ClosedLoop(PlantParams(1.0, (HALDANE,)), CFG, STANDARD_DISTURBANCE, h=0.05)
    seen = []
    loop.simulate(PlantState(0.0, s0, (1.0 - s0,)), ControllerState(s_bar, D_bar0), 100.0,
                  adapt=True, observer=lambda t, y, sm, D: seen.append(y[2]))
    seen = np.array(seen)
    assert np.all((0.02 < seen) & (seen < 0.2))


def test_batch_matches_scalar_integration():
    cfg = ControllerConfig(0.02, 0.2, 1.0)
    loop = ClosedLoop(PlantParams(1.0, (HALDANE,)), cfg, h=0.02)
    s0, b0 = [0.1, 0.7], [0.5, 1.2]
    s_bar, D_bar = [0.3, 0.6], [0.12, 0.08]
    s, b = loop.run_batch(s0, [b0], s_bar, D_bar, 20.0)
    for k in range(2):
        st_, _ = loop.simulate(PlantState(0.0, s0[k], (b0[k],)), ControllerState(s_bar[k], D_bar[k]), 20.0)
        assert s[k] == pytest.approx(st_.s, abs=1e-13)
        assert b[0, k] == pytest.approx(st_.b[0], abs=1e-13)


def test_observer_can_stop_the_run():
    loop = ClosedLoop(PlantParams(1.0, (HALDANE,)), ControllerConfig(0.02, 0.2, 1.0))
    st_, _ = loop.simulate(PlantState(0.0, 0.3, (0.7,)), ControllerState(0.3, 0.1), 10.0,
                           observer=lambda t, y, sm, D: t >= 1.0 - 1e-12)
    assert st_.t == pytest.approx(1.0)
