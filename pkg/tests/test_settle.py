import pytest

from chemostat_recon.control import ClosedLoop, ControllerConfig, ControllerState
from chemostat_recon.dynamics import STANDARD_DISTURBANCE, PlantParams, PlantState
from chemostat_recon.growth import Haldane
from chemostat_recon.reconstruct import equilibrium_oracle
from chemostat_recon.settle import SettleConfig, residual, run_until_settled

HALDANE = Haldane(1.0, 1.0, 10.0)
PLANT = PlantParams(1.0, (HALDANE,))
CFG = ControllerConfig(0.02, 0.2, 1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        SettleConfig(window=0.0)
    with pytest.raises(ValueError):
        SettleConfig(improvement_ratio=1.0)
    with pytest.raises(ValueError):
        SettleConfig(window=20.0, max_time=30.0)


def test_start_at_equilibrium_settles_after_two_windows():
    s = 0.3
    D = float(HALDANE(s))
    loop = ClosedLoop(PLANT, CFG)
    _, res = run_until_settled(loop, PlantState(0.0, s, (1.0 - s,)), ControllerState(s, D), SettleConfig())
    assert res.settled
    assert len(res.windows) == 2
    assert res.elapsed == pytest.approx(40.0)
    assert res.s_eq == pytest.approx(s, abs=1e-12)
    assert res.D_at_eq == pytest.approx(D, abs=1e-12)


def test_settled_value_matches_oracle():
    ctl = ControllerState(0.3, 0.13)
    loop = ClosedLoop(PLANT, CFG)
    _, res = run_until_settled(loop, PlantState(0.0, 0.6, (0.4,)), ctl, SettleConfig(max_time=4000.0))
    assert res.settled
    assert res.s_eq == pytest.approx(equilibrium_oracle(HALDANE, ctl, CFG, 1.0), abs=1e-6)


def test_disturbed_reading_within_modulation_bound():
    ctl = ControllerState(0.5, 0.15)
    loop = ClosedLoop(PLANT, CFG, STANDARD_DISTURBANCE)
    _, res = run_until_settled(loop, PlantState(0.0, 0.5, (0.5,)), ctl, SettleConfig())
    s_star = equilibrium_oracle(HALDANE, ctl, CFG, 1.0)
    assert abs(res.s_eq - s_star) <= 2 * STANDARD_DISTURBANCE.amplitude * res.s_eq


def test_forced_timeout():
    loop = ClosedLoop(PLANT, CFG)
    sc = SettleConfig(window=20.0, max_time=40.0)
    _, res = run_until_settled(loop, PlantState(0.0, 0.9, (0.5,)), ControllerState(0.3, 0.1), sc)
    assert not res.settled
    assert res.elapsed <= sc.max_time + 1e-9


def test_never_settled_before_two_windows():
    loop = ClosedLoop(PLANT, CFG)
    for s0 in (0.1, 0.3, 0.9):
        _, res = run_until_settled(loop, PlantState(0.0, s0, (1 - s0,)), ControllerState(0.4, 0.1), SettleConfig())
        assert len(res.windows) >= 2
        if res.settled:
            assert res.elapsed <= 2000.0


def test_residual_examples():
    assert residual(0.3, 0.3) == 0.0
    assert residual(0.31, 0.30) == pytest.approx(0.01)


def test_residual_decreases_with_dilution():
    """Larger D_bar -> more substrate left at equilibrium?  Check the sign."""
    s_bar = 0.3
    mu = float(HALDANE(s_bar))
    lo = equilibrium_oracle(HALDANE, ControllerState(s_bar, mu - 0.01), CFG, 1.0)
    hi = equilibrium_oracle(HALDANE, ControllerState(s_bar, mu + 0.01), CFG, 1.0)
    # s_eq grows with D_bar: the residual is increasing in D_bar
    assert residual(lo, s_bar) < 0 < residual(hi, s_bar)
