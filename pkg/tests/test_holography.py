import cmath
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from qdinterference.errors import DataError, GridError
from qdinterference.holography import (
    FOCAL,
    SLM,
    ComplexField,
    OpticalGrid,
    PhaseMask,
    SpotSpec,
    apply_mask,
    backpropagate_lens,
    balance_weights,
    beamsplitter_modes,
    carrier_shift,
    coupling_efficiency,
    far_field,
    find_peaks_2d,
    gaussian_mode,
    ideal_beamsplitter,
    matched_pupil_waist,
    multiplex_hologram,
    overlap,
    plane_wave_mode,
    propagate_lens,
    realized_transfer_matrix,
    spot_powers,
    unitarity_deviation,
    uniform_illumination,
    wavefront_match,
    wrap_phase,
)

GRID = OpticalGrid.for_field_of_view()
SMALL = OpticalGrid.for_field_of_view(n=128)
FIVE_SPOTS = [(-4.0, 3.0), (2.0, 5.0), (5.0, -1.0), (-1.0, -4.0), (-5.0, -2.0)]


def _pixel_offset(grid, a, b):
    dx, dy = grid.focal_pitch
    return max(abs(a[0] - b[0]) / dx, abs(a[1] - b[1]) / dy)


# --- grid and types -----------------------------------------------------------


def test_grid_validation_and_geometry():
    with pytest.raises(GridError):
        OpticalGrid(nx=500)
    with pytest.raises(GridError):
        OpticalGrid(pitch=0.0)
    # the 15 um field of view spans half of each focal-plane axis
    dx, _ = GRID.focal_pitch
    assert GRID.nx * dx == pytest.approx(30.0)
    assert GRID.focal_index((0.0, 0.0)) == (256, 256)


def test_wrap_phase_range():
    ph = wrap_phase(np.array([-np.pi, np.pi, 3 * np.pi, -3.5 * np.pi, 0.1]))
    assert np.all(ph >= -np.pi) and np.all(ph < np.pi)
    assert ph[1] == pytest.approx(-np.pi) and ph[4] == pytest.approx(0.1)


def test_complex_field_rejects_nonfinite():
    a = np.ones((SMALL.ny, SMALL.nx), dtype=complex)
    a[0, 0] = np.nan
    with pytest.raises(DataError):
        ComplexField(SMALL, a)


# --- plane-wave modes ---------------------------------------------------------


def test_on_axis_mode_is_constant_phase():
    f = plane_wave_mode(SpotSpec((0.0, 0.0)), GRID)
    assert np.ptp(np.angle(f.amplitudes)) < 1e-12
    assert f.power == pytest.approx(1.0, abs=1e-12)


def test_modes_seven_um_apart_are_orthogonal():
    a = plane_wave_mode(SpotSpec((-3.5, 0.0)), GRID)
    b = plane_wave_mode(SpotSpec((3.5, 0.0)), GRID)
    assert abs(overlap(a, b)) < 1e-3


@given(x=st.floats(-14, 14), y=st.floats(-14, 14))
def test_mode_conjugate_symmetry(x, y):
    a = plane_wave_mode(SpotSpec((x, y)), SMALL)
    b = plane_wave_mode(SpotSpec((-x, -y)), SMALL)
    # the coordinate origin sits at index n/2, so the mirror is exact on the grid
    assert np.max(np.abs(a.amplitudes - np.conj(b.amplitudes))) < 1e-9


def test_mode_aliasing_error():
    with pytest.raises(GridError):
        plane_wave_mode(SpotSpec((16.0, 0.0)), GRID)


def test_mode_focuses_on_target_pixel():
    for pos in [(3.2, -1.7), (-6.0, 4.4)]:
        focal = propagate_lens(plane_wave_mode(SpotSpec(pos), GRID))
        peak = find_peaks_2d(focal, 1)[0]
        assert _pixel_offset(GRID, peak, pos) <= 1


# --- lens ---------------------------------------------------------------------


def test_constant_field_focuses_to_centre():
    focal = propagate_lens(uniform_illumination(GRID))
    r, c = np.unravel_index(np.argmax(focal.intensity()), focal.intensity().shape)
    assert (r, c) == (256, 256)


def test_parseval():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((GRID.ny, GRID.nx)) + 1j * rng.standard_normal((GRID.ny, GRID.nx))
    f = ComplexField(GRID, a, SLM)
    out = propagate_lens(f)
    assert abs(out.power - f.power) / f.power < 1e-9
    assert out.plane == FOCAL


def test_forward_backward_identity_and_double_transform_inversion():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((SMALL.ny, SMALL.nx)) + 1j * rng.standard_normal((SMALL.ny, SMALL.nx))
    f = ComplexField(SMALL, a, SLM)
    back = backpropagate_lens(propagate_lens(f))
    assert np.max(np.abs(back.amplitudes - a)) < 1e-9
    twice = propagate_lens(propagate_lens(f)).amplitudes
    # two forward transforms image with inversion about the origin pixel
    inverted = np.roll(np.flip(a), (1, 1), axis=(0, 1))
    assert np.max(np.abs(twice - inverted)) < 1e-9


# --- masks --------------------------------------------------------------------


def test_zero_mask_and_negation_are_identities():
    f = plane_wave_mode(SpotSpec((1.0, 2.0)), SMALL, envelope_waist=200.0)
    assert np.array_equal(apply_mask(f, PhaseMask.zeros(SMALL)).amplitudes, f.amplitudes)
    rng = np.random.default_rng(2)
    m = PhaseMask(SMALL, rng.uniform(-np.pi, np.pi, (SMALL.ny, SMALL.nx)))
    out = apply_mask(apply_mask(f, m), -m)
    assert np.max(np.abs(out.amplitudes - f.amplitudes)) < 1e-12
    assert apply_mask(f, m).power == pytest.approx(f.power, rel=1e-14)


def test_mask_grid_mismatch():
    with pytest.raises(GridError):
        apply_mask(uniform_illumination(GRID), PhaseMask.zeros(SMALL))


def test_carrier_shifts_far_field():
    dx, _ = GRID.focal_pitch
    k = 2 * np.pi / GRID.wavelength
    carrier = (20 * dx * k / (GRID.f_eff * 1000), 0.0)
    shift = carrier_shift(GRID, carrier)
    assert shift[0] == pytest.approx(20 * dx)
    focal = far_field(PhaseMask.zeros(GRID).with_carrier(carrier))
    peak = find_peaks_2d(focal, 1)[0]
    assert _pixel_offset(GRID, peak, shift) <= 1


# --- Gaussian modes and coupling ----------------------------------------------


def test_gaussian_mode_properties():
    g = gaussian_mode((0.0, 0.0), 0.5, GRID)
    assert g.power == pytest.approx(1.0, abs=1e-6)
    assert coupling_efficiency(g, g) == pytest.approx(1.0, abs=1e-12)
    shifted = gaussian_mode((0.5, 0.0), 0.5, GRID)
    assert abs(overlap(g, shifted)) == pytest.approx(math.exp(-0.5), abs=1e-3)
    with pytest.raises(GridError):
        gaussian_mode((0.0, 0.0), 0.1, GRID)


def test_orthogonal_plane_waves_do_not_couple():
    a = plane_wave_mode(SpotSpec((0.0, 0.0)), GRID)
    b = plane_wave_mode(SpotSpec((2.0, 1.0)), GRID)
    assert coupling_efficiency(a, b) < 1e-6


def test_single_spot_hologram_couples_into_matched_gaussian():
    waist = 0.25
    illum = gaussian_mode((0.0, 0.0), matched_pupil_waist(GRID, waist), GRID, SLM)
    pos = (3.0, -2.0)
    mask = multiplex_hologram([SpotSpec(pos)], GRID)
    eta = coupling_efficiency(far_field(mask, illum), gaussian_mode(
        find_peaks_2d(far_field(mask, illum), 1)[0], waist, GRID))
    assert eta > 0.8
    assert eta == pytest.approx(1.0, abs=1e-6)


# --- multiplexed holograms ----------------------------------------------------


def test_single_spot_hologram_is_linear_phase():
    pos = (2.0, -3.0)
    mask = multiplex_hologram([SpotSpec(pos)], GRID)
    mode = plane_wave_mode(SpotSpec(pos), GRID)
    assert np.max(np.abs(wrap_phase(mask.phase - np.angle(mode.amplitudes)))) < 1e-9
    focal = far_field(mask)
    assert spot_powers(focal, [pos], window=1)[0] / focal.power > 0.7


def test_multiplex_rejects_empty_and_zero_weights():
    with pytest.raises(DataError):
        multiplex_hologram([], GRID)
    with pytest.raises(DataError):
        multiplex_hologram([SpotSpec((0.0, 0.0), 0.0)], GRID)


def test_five_spot_peaks_on_targets():
    spots = [SpotSpec(p) for p in FIVE_SPOTS]
    focal = far_field(multiplex_hologram(spots, GRID))
    peaks = find_peaks_2d(focal, 5)
    for target in FIVE_SPOTS:
        assert min(_pixel_offset(GRID, target, p) for p in peaks) <= 1


def _phase_only_fourier_ratio(ratio):
    """|c0|^2 / |c1|^2 for the phase of ratio + exp(i psi), by quadrature."""

    def coeff(m):
        def u(psi):
            z = ratio + cmath.exp(1j * psi)
            return z / abs(z) * cmath.exp(-1j * m * psi)

        re = quad(lambda p: u(p).real, 0, 2 * np.pi, epsabs=1e-13)[0]
        im = quad(lambda p: u(p).imag, 0, 2 * np.pi, epsabs=1e-13)[0]
        return complex(re, im) / (2 * np.pi)

    return abs(coeff(0)) ** 2 / abs(coeff(1)) ** 2


def test_two_to_one_weights_distort_power_ratio():
    a, b = (-3.0, 0.0), (3.0, 0.0)
    mask = multiplex_hologram([SpotSpec(a, 1.0), SpotSpec(b, 0.5)], GRID)
    p = spot_powers(far_field(mask), [a, b], window=0)
    expected = _phase_only_fourier_ratio(2.0)
    assert p[0] / p[1] == pytest.approx(expected, rel=1e-6)
    # stronger than the 4:1 of the amplitude-squared weights
    assert p[0] / p[1] > 4


def test_balance_five_spots_uniform_and_gaussian():
    spots = [SpotSpec(p) for p in FIVE_SPOTS]
    for illum in (None, gaussian_mode((0.0, 0.0), matched_pupil_waist(GRID, 0.25), GRID, SLM)):
        res = balance_weights(spots, GRID, illumination=illum, tol=0.01)
        frac = res.powers / res.powers.sum()
        assert np.max(np.abs(frac * 5 - 1)) <= 0.01


def test_balance_unequal_targets():
    spots = [SpotSpec(p) for p in FIVE_SPOTS[:3]]
    targets = np.array([1.0, 2.0, 3.0])
    res = balance_weights(spots, GRID, targets=targets, tol=0.01)
    frac = res.powers / res.powers.sum()
    assert np.max(np.abs(frac / (targets / targets.sum()) - 1)) <= 0.01


# --- transfer matrices and wavefront matching ---------------------------------


def test_ideal_beamsplitter_is_unitary():
    eta, dev = unitarity_deviation(ideal_beamsplitter())
    assert eta == pytest.approx(1.0) and dev < 1e-9
    assert np.allclose(ideal_beamsplitter() * math.sqrt(2), [[1, 1], [1, -1]])


def test_zero_mask_transfer_is_geometric_overlap():
    (f1, f2), _, targets = beamsplitter_modes(GRID, [(-5.5, 0.0), (5.5, 0.0)],
                                              [(-5.5, 0.0), (0.0, 3.0)], 0.25)
    rep = realized_transfer_matrix(PhaseMask.zeros(GRID), [f1, f2], targets)
    direct = overlap(propagate_lens(f1), targets[0])
    assert rep.matrix[0, 0] == pytest.approx(direct)
    assert abs(rep.matrix[1, 1]) < 1e-6


def test_transfer_matrix_is_linear():
    (f1, f2), inputs, targets = beamsplitter_modes(SMALL, [(-5.5, 0.0), (5.5, 0.0)],
                                                   [(0.0, -3.0), (0.0, 3.0)], 0.5)
    mask = wavefront_match(inputs, targets, iterations=3).mask
    a = 0.3 - 1.2j
    m1 = realized_transfer_matrix(mask, [f1, f2], targets).matrix
    m2 = realized_transfer_matrix(mask, [f1 * a, f2], targets).matrix
    assert np.max(np.abs(m2[:, 0] - a * m1[:, 0])) < 1e-10
    assert np.max(np.abs(m2[:, 1] - m1[:, 1])) < 1e-12


def test_wavefront_match_single_pair_phase_conjugation():
    src = plane_wave_mode(SpotSpec((-4.0, 2.0)), GRID)
    tgt = propagate_lens(plane_wave_mode(SpotSpec((3.0, -1.0)), GRID))
    res = wavefront_match([src], [tgt], iterations=1)
    assert res.couplings[0] >= 0.99


@pytest.mark.parametrize("lock", [False, True])
def test_wavefront_match_monotone(lock):
    _, inputs, targets = beamsplitter_modes(GRID, [(-5.5, 0.0), (5.5, 0.0)],
                                            [(0.0, -3.0), (0.0, 3.0)], 0.25)
    res = wavefront_match(inputs, targets, iterations=20, tolerance=0.0, lock_phases=lock)
    assert np.all(np.diff(res.history) >= -1e-12)


def test_wavefront_match_beamsplitter():
    (f1, f2), inputs, targets = beamsplitter_modes(GRID, [(-5.5, 0.0), (5.5, 0.0)],
                                                   [(0.0, -3.0), (0.0, 3.0)], 0.25)
    res = wavefront_match(inputs, targets, lock_phases=True)
    rep = realized_transfer_matrix(res.mask, [f1, f2], targets)
    assert np.all(np.abs(rep.splitting - 0.5) <= 0.02)
    assert rep.unitarity_deviation < 0.05
    # each entry carries half of its column's power within 2 % of the port power
    power = np.abs(rep.matrix) ** 2
    assert np.all(np.abs(power / power.sum(axis=0) - 0.5) <= 0.02)


def test_wavefront_match_swapped_targets_swap_outputs():
    (f1, f2), inputs, targets = beamsplitter_modes(GRID, [(-5.5, 0.0), (5.5, 0.0)],
                                                   [(0.0, -3.0), (0.0, 3.0)], 0.25)
    a = realized_transfer_matrix(wavefront_match(inputs, targets, lock_phases=True).mask,
                                 [f1, f2], targets).matrix
    swapped = wavefront_match(inputs, targets[::-1], lock_phases=True).mask
    b = realized_transfer_matrix(swapped, [f1, f2], targets[::-1]).matrix
    assert np.max(np.abs(np.abs(a) - np.abs(b))) < 1e-6


def test_wavefront_match_input_checks():
    f = uniform_illumination(SMALL)
    with pytest.raises(DataError):
        wavefront_match([f], [])
