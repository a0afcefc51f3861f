import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemostat_recon.dynamics import (
    NO_DISTURBANCE,
    STANDARD_DISTURBANCE,
    DisturbanceModel,
    NumericalBlowup,
    PlantParams,
    PlantState,
    integrate,
    measure,
    rhs,
    step,
)
from chemostat_recon.growth import Haldane, Monod

HALDANE = Haldane(1.0, 1.0, 10.0)
ONE = PlantParams(1.0, (HALDANE,))
TWO = PlantParams(1.0, (Monod(1.0, 0.1), Monod(1.5, 0.4)))


def test_params_validation():
    with pytest.raises(ValueError):
        PlantParams(0.0, (HALDANE,))
    with pytest.raises(ValueError):
        PlantParams(1.0, (HALDANE,), b_min=1.0)
    with pytest.raises(ValueError):
        PlantParams(1.0, ())


def test_rhs_at_inflow_concentration():
    st_ = PlantState(0.0, 1.0, (0.4,))
    ds, (db,) = rhs(st_, 0.123, ONE)
    assert ds == pytest.approx(-HALDANE(1.0) * 0.4)
    assert db == pytest.approx((HALDANE(1.0) - 0.123) * 0.4)


def test_rhs_without_biomass():
    ds, db = rhs(PlantState(0.0, 0.3, (0.0,)), 0.1, ONE)
    assert ds == pytest.approx(0.07)
    assert db == (0.0,)


def test_rhs_vanishes_at_equilibrium():
    s = 0.2
    D = HALDANE(s)
    ds, (db,) = rhs(PlantState(0.0, s, (1.0 - s,)), D, ONE)
    assert abs(ds) < 1e-16 and abs(db) < 1e-16


def test_step_keeps_equilibrium():
    s = 0.2
    st0 = PlantState(0.0, s, (1.0 - s,))
    st1 = integrate(st0, HALDANE(s), ONE, 10.0)
    assert st1.s == pytest.approx(s, abs=1e-14)
    assert st1.b[0] == pytest.approx(1.0 - s, abs=1e-14)
    assert st1.t == pytest.approx(10.0)


def test_step_applies_biomass_floor():
    p = PlantParams(1.0, TWO.growths, b_min=1e-3)
    st1 = step(PlantState(0.0, 0.3, (1e-3, 0.5)), 1.4, p, 0.01)
    assert st1.b[0] == 1e-3


def test_step_rejects_non_positive_h():
    with pytest.raises(ValueError):
        step(PlantState(0.0, 0.3, (0.5,)), 0.1, ONE, 0.0)


def test_blowup_is_reported_with_time():
    class Exploding(Monod):
        def __call__(self, s):
            return -1e300 * (1 + s)

    p = PlantParams(1.0, (Exploding(1.0, 0.1),))
    with pytest.raises(NumericalBlowup) as exc:
        integrate(PlantState(0.0, 0.5, (0.5,)), 0.1, p, 1.0)
    assert exc.value.t > 0


def _rk4_error(h):
    st0 = PlantState(0.0, 0.1, (0.3,))
    ref = integrate(st0, 0.15, ONE, 2.0, h=h / 10)
    got = integrate(st0, 0.15, ONE, 2.0, h=h)
    return math.hypot(got.s - ref.s, got.b[0] - ref.b[0])


def test_rk4_fourth_order():
    ratio = _rk4_error(0.2) / _rk4_error(0.1)
    assert 12 < ratio < 20


# --- measurement ----------------------------------------------------------

def test_measure_examples():
    st_ = PlantState(1.234, 0.5, (0.5,))
    assert measure(st_, NO_DISTURBANCE) == 0.5
    assert measure(PlantState(0.0, 0.5, (0.5,)), STANDARD_DISTURBANCE) == 0.5
    assert measure(PlantState(math.pi / 2, 0.5, (0.5,)), STANDARD_DISTURBANCE) == pytest.approx(0.5, abs=1e-15)


def test_disturbance_amplitude_range():
    with pytest.raises(ValueError):
        DisturbanceModel(1.0)
    with pytest.raises(ValueError):
        DisturbanceModel(-0.1)


def test_disturbance_period_is_pi():
    d = STANDARD_DISTURBANCE
    t = np.linspace(0, 10, 101)
    assert np.allclose([d.factor(x) for x in t], [d.factor(x + math.pi) for x in t], atol=1e-14)


# --- invariants -----------------------------------------------------------

def test_positive_invariance_random_states():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        s = rng.uniform(0, 1)
        b = tuple(rng.uniform(1e-6, 2.0, 2))
        D = rng.uniform(0.1, 1.5)
        st_ = PlantState(0.0, s, b)
        for _ in range(20):
            st_ = step(st_, D, TWO, 0.05)
            assert -1e-9 <= st_.s <= 1.0 + 1e-9
            assert all(x > 0 for x in st_.b)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.99), st.floats(0.0, 2.0), st.floats(0.02, 0.2), st.integers(1, 30))
def test_stoichiometric_decay(s, b, D, T):
    st0 = PlantState(0.0, s, (b,))
    st1 = integrate(st0, D, ONE, float(T), h=0.01)
    gap0 = abs(st0.z - 1.0)
    assert abs(st1.z - 1.0) <= gap0 * math.exp(-D * T) * (1 + 1e-6) + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.01, 1.0), st.floats(0.1, 1.5))
def test_empty_species_stays_empty(s, b2, D):
    st_ = integrate(PlantState(0.0, s, (0.0, b2)), D, TWO, 5.0)
    assert st_.b[0] == 0.0


def test_stoichiometric_constructor():
    st_ = PlantState.on_stoichiometric_set(0.3, TWO)
    assert st_.z == pytest.approx(1.0)
    assert st_.b == pytest.approx((0.35, 0.35))
