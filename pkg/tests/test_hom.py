import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from qdinterference.dynamics import EmitterParams
from qdinterference.errors import DataError, ModelAssumptionError
from qdinterference.holography import (
    OpticalGrid,
    beamsplitter_modes,
    realized_transfer_matrix,
    wavefront_match,
)
from qdinterference.hom import (
    HomPairParams,
    NonUnitaryTransferWarning,
    central_peak_area,
    central_peak_density,
    dephasing_for_visibility,
    hom_coincidence_density,
    hom_g2_zero,
    hom_result,
    hom_visibility,
    oracle_g2_zero,
    side_peak_area,
    side_peak_density,
)


def _pair(g1=1.0, g2=1.0, gd1=0.0, gd2=0.0, det=0.0, transfer=None, period=12.5):
    kw = {} if transfer is None else {"transfer": transfer}
    return HomPairParams(EmitterParams(gamma=g1, gamma_d=gd1), EmitterParams(gamma=g2, gamma_d=gd2),
                         det, period, **kw)


def test_perfect_interference_density_vanishes():
    tau = np.linspace(-5, 5, 1001)
    p = central_peak_density(_pair(), tau)
    assert np.max(np.abs(p)) < 1e-15
    assert hom_g2_zero(_pair()) == pytest.approx(0.0, abs=1e-12)


def test_distinguishable_limit():
    far = _pair(det=1e5)
    assert hom_g2_zero(far) == pytest.approx(0.5, abs=1e-6)
    deph = _pair(gd1=1e6, gd2=1e6)
    assert hom_g2_zero(deph) == pytest.approx(0.5, abs=1e-5)
    assert hom_g2_zero(_pair().distinguishable()) == 0.5
    tau = np.linspace(-12, 12, 4801)
    dens = central_peak_density(_pair().distinguishable(), tau)
    side = side_peak_density(_pair(), tau)
    assert np.allclose(dens, 0.5 * side, atol=1e-15)


def test_visibility_definition():
    assert hom_visibility(0.13, 0.50) == pytest.approx(0.74)
    assert round(hom_visibility(0.13, 0.50), 2) == 0.74
    assert hom_visibility(0.0, 0.3) == 1.0
    assert hom_visibility(0.4, 0.4) == 0.0
    with pytest.raises(ZeroDivisionError):
        hom_visibility(0.1, 0.0)


def test_visibility_closed_form_at_zero_detuning():
    # equal emitters: V = gamma / (gamma + gamma_d)
    for gd in (0.1, 0.5, 2.0):
        r = hom_result(_pair(gd1=gd, gd2=gd), np.linspace(-30, 30, 601))
        assert r.visibility == pytest.approx(1 / (1 + gd), rel=1e-12)


def test_dephasing_for_target_visibility():
    gd = dephasing_for_visibility(0.737)
    assert gd == pytest.approx(1 / 0.737 - 1, rel=1e-9)
    r = hom_result(_pair(gd1=gd, gd2=gd), np.linspace(-30, 30, 601))
    assert r.visibility == pytest.approx(0.737, abs=1e-9)
    with pytest.raises(DataError):
        dephasing_for_visibility(1.5)


def test_visibility_decreases_with_dephasing_and_detuning():
    vs = [hom_result(_pair(gd1=gd, gd2=gd), [-1.0, 0.0, 1.0]).visibility
          for gd in (0.0, 0.2, 0.5, 1.0, 3.0)]
    assert np.all(np.diff(vs) < 0)
    vd = [hom_result(_pair(gd1=0.3, gd2=0.3, det=d), [-1.0, 0.0, 1.0]).visibility
          for d in (0.0, 0.2, 0.5, 1.0, 3.0)]
    assert np.all(np.diff(vd) < 0)


@given(g1=st.floats(0.2, 3), g2=st.floats(0.2, 3), d1=st.floats(0, 2), d2=st.floats(0, 2),
       det=st.floats(-3, 3), phases=st.lists(st.floats(0, 2 * np.pi), min_size=3, max_size=3))
def test_swapping_emitters_leaves_density_invariant(g1, g2, d1, d2, det, phases):
    u = np.diag(np.exp(1j * np.array(phases[:2]))) @ np.array([[1, 1], [1, -1]]) / math.sqrt(2)
    u = u @ np.diag([1, np.exp(1j * phases[2])])
    pair = _pair(g1, g2, d1, d2, det, u)
    tau = np.linspace(-20, 20, 201)
    a = hom_coincidence_density(pair, tau).g2
    b = hom_coincidence_density(pair.swapped(), tau).g2
    assert np.max(np.abs(a - b)) < 1e-12
    assert hom_g2_zero(pair) >= -1e-12


def test_central_area_matches_numerical_integral():
    pair = _pair(1.0, 1.7, 0.3, 0.6, 1.2)
    tau = np.linspace(-60, 60, 240001)
    assert trapezoid(central_peak_density(pair, tau), tau) == pytest.approx(
        central_peak_area(pair), abs=1e-7)
    assert side_peak_area(pair) == pytest.approx(1.0)


def test_density_has_side_peaks_at_period():
    pair = _pair(gd1=0.5, gd2=0.5, period=12.5)
    tau = np.linspace(-30, 30, 6001)
    dens = hom_coincidence_density(pair, tau).g2
    i_side = int(np.argmin(np.abs(tau - 12.5)))
    i_zero = int(np.argmin(np.abs(tau)))
    assert dens[i_side] > dens[i_zero]
    window = np.abs(tau - 12.5) < 6
    assert trapezoid(dens[window], tau[window]) == pytest.approx(1.0, abs=0.01)


def test_density_grid_must_be_symmetric():
    with pytest.raises(DataError):
        hom_coincidence_density(_pair(), np.linspace(0, 5, 11))


def test_non_unitary_transfer_warns():
    with pytest.warns(NonUnitaryTransferWarning):
        pair = _pair(transfer=np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert hom_g2_zero(pair) > 0
    assert hom_coincidence_density(pair, np.linspace(-1, 1, 21)).g2.min() >= 0


def test_negative_density_is_reported(monkeypatch):
    import qdinterference.hom as hom

    monkeypatch.setattr(hom, "central_peak_density", lambda pair, tau: -np.ones_like(tau))
    with pytest.raises(ModelAssumptionError):
        hom.hom_coincidence_density(_pair(), np.linspace(-1, 1, 11))


def test_transfer_shape_validation():
    with pytest.raises(DataError):
        _pair(transfer=np.eye(3))


def test_oracle_matches_closed_form_examples():
    pair = _pair(gd1=1.0, gd2=1.0)
    assert oracle_g2_zero(pair) == pytest.approx(hom_g2_zero(pair), abs=0.01)
    pair = _pair(1.0, 1.5, 0.2, 0.4, 1.0)
    assert oracle_g2_zero(pair) == pytest.approx(hom_g2_zero(pair), abs=0.01)


def test_realized_beamsplitter_changes_g2_little():
    grid = OpticalGrid.for_field_of_view()
    (f1, f2), inputs, targets = beamsplitter_modes(grid, [(-5.5, 0.0), (5.5, 0.0)],
                                                   [(0.0, -3.0), (0.0, 3.0)], 0.25)
    rep = realized_transfer_matrix(wavefront_match(inputs, targets, lock_phases=True).mask,
                                   [f1, f2], targets)
    m = rep.matrix / math.sqrt(rep.eta)
    for gd in (0.0, 0.36, 2.0):
        ideal = hom_g2_zero(_pair(gd1=gd, gd2=gd))
        real = hom_g2_zero(_pair(gd1=gd, gd2=gd, transfer=m))
        assert abs(real - ideal) < 0.02
