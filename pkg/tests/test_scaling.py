import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from electrolocation.scaling import EQS_THRESHOLD, PhysicalParams, eqs_validity, nondimensionalize


def test_order_of_magnitude_scales():
    g = nondimensionalize(PhysicalParams())
    assert g["k_b"] == pytest.approx(1e2)
    assert g["k_s"] == pytest.approx(1e-2)
    assert g["delta"] == pytest.approx(1e-3)


def test_skin_impedance_matches_simulations():
    assert nondimensionalize(PhysicalParams())["xi"] == pytest.approx(0.1)


def test_matching_conductivities():
    p = PhysicalParams(sigma_b=0.02, sigma0=0.02)
    assert nondimensionalize(p)["k_b"] == 1.0


def test_eqs_ratio_for_fish_scales():
    ratio, ok = eqs_validity(PhysicalParams(), 1.0, 1e4)
    assert 1e-4 / 3 < ratio < 1e-3 and ok
    assert ratio == pytest.approx(1e4 * np.sqrt(80) / 299792458.0, rel=1e-6)


def test_eqs_static_limit():
    assert eqs_validity(PhysicalParams(), 1.0, 0.0) == (0.0, True)


def test_eqs_fails_at_large_size():
    ratio, ok = eqs_validity(PhysicalParams(), 1e6, 1e4)
    assert ratio > EQS_THRESHOLD and not ok


def test_eqs_rejects_negative_input():
    with pytest.raises(ValueError):
        eqs_validity(PhysicalParams(), -1.0, 1.0)


@pytest.mark.parametrize("name", [f.name for f in dataclasses.fields(PhysicalParams)])
@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan")])
def test_params_must_be_positive(name, bad):
    with pytest.raises(ValueError, match=name):
        PhysicalParams(**{name: bad})


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_unit_rescaling_invariance(lam, kap, cur):
    """Lengths x lam, conductances x kap, currents x cur with voltages fixed by Ohm's law."""
    p = PhysicalParams()
    q = PhysicalParams(V0=p.V0 * cur / kap, L=p.L * lam, omega0=p.omega0,
                       sigma0=p.sigma0 * kap / lam, I0=p.I0 * cur, sigma_b=p.sigma_b * kap / lam,
                       Sigma_skin=p.Sigma_skin * kap / lam ** 2, h=p.h * lam)
    a, b = nondimensionalize(p), nondimensionalize(q)
    for key in a:
        assert b[key] == pytest.approx(a[key], rel=1e-12)
