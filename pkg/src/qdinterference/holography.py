"""
Fourier-optics model of the SLM routing: plane-wave modes, multiplexed
phase-only holograms, lens propagation, fiber-mode overlaps and single-layer
wavefront matching.

Two planes are modeled.  The SLM plane is sampled at the SLM pixel pitch;
the focal (sample / fiber image) plane is reached by one lens Fourier
transform and sampled at lambda * f_eff / (n * pitch).  Lengths are in um,
f_eff in mm, spatial frequencies in rad/um.  Powers are sum |a|^2 * pixel
area, conserved by every transform here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DataError, GridError

SLM = "slm"
FOCAL = "focal"


@dataclass(frozen=True)
class OpticalGrid:
    nx: int = 512
    ny: int = 512
    pitch: float = 8.0
    wavelength: float = 0.97117
    f_eff: float = 0.24712

    def __post_init__(self):
        for n in (self.nx, self.ny):
            if n < 2 or n & (n - 1):
                raise GridError(f"grid size {n} is not a power of two")
        if not (self.pitch > 0 and self.wavelength > 0 and self.f_eff > 0):
            raise GridError("pitch, wavelength and f_eff must be positive")

    @classmethod
    def for_field_of_view(cls, fov=15.0, n=512, pitch=8.0, wavelength=0.97117):
        """Grid whose focal plane spans 2 * fov, so a fov x fov window covers
        the central quarter of the focal-plane area."""
        f_um = 2 * fov * n * pitch / (n * wavelength)
        return cls(n, n, pitch, wavelength, f_um / 1000.0)

    @property
    def focal_pitch(self) -> tuple[float, float]:
        f_um = self.f_eff * 1000.0
        return (
            self.wavelength * f_um / (self.nx * self.pitch),
            self.wavelength * f_um / (self.ny * self.pitch),
        )

    def spacing(self, plane: str) -> tuple[float, float]:
        if plane == SLM:
            return self.pitch, self.pitch
        if plane == FOCAL:
            return self.focal_pitch
        raise DataError(f"unknown plane {plane!r}")

    def pixel_area(self, plane: str) -> float:
        dx, dy = self.spacing(plane)
        return dx * dy

    def coords(self, plane: str) -> tuple[np.ndarray, np.ndarray]:
        """(X, Y) coordinate arrays of shape (ny, nx), origin at index n/2."""
        dx, dy = self.spacing(plane)
        x = (np.arange(self.nx) - self.nx // 2) * dx
        y = (np.arange(self.ny) - self.ny // 2) * dy
        return np.meshgrid(x, y)

    def focal_index(self, position) -> tuple[int, int]:
        """(row, col) of the focal-plane pixel nearest to ``position``."""
        dx, dy = self.focal_pitch
        return (int(np.round(position[1] / dy)) + self.ny // 2,
                int(np.round(position[0] / dx)) + self.nx // 2)


@dataclass
class ComplexField:
    grid: OpticalGrid
    amplitudes: np.ndarray
    plane: str = SLM

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.grid.ny, self.grid.nx):
            raise GridError(
                f"amplitudes {self.amplitudes.shape} do not match grid ({self.grid.ny}, {self.grid.nx})"
            )
        if not np.all(np.isfinite(self.amplitudes)):
            raise DataError("field contains non-finite values")

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.pixel_area(self.plane))

    def normalized(self) -> "ComplexField":
        p = self.power
        if p <= 0:
            raise DataError("cannot normalize a zero field")
        return ComplexField(self.grid, self.amplitudes / math.sqrt(p), self.plane)

    def __add__(self, other):
        _check_same(self, other)
        return ComplexField(self.grid, self.amplitudes + other.amplitudes, self.plane)

    def __sub__(self, other):
        _check_same(self, other)
        return ComplexField(self.grid, self.amplitudes - other.amplitudes, self.plane)

    def __mul__(self, c):
        return ComplexField(self.grid, self.amplitudes * complex(c), self.plane)

    __rmul__ = __mul__

    def intensity(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


def _check_same(a: ComplexField, b: ComplexField):
    if a.grid != b.grid or a.plane != b.plane:
        raise GridError("fields live on different grids or planes")


def wrap_phase(phase):
    """Wrap into [-pi, pi)."""
    w = np.mod(np.asarray(phase, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(w >= np.pi, w - 2 * np.pi, w)


@dataclass
class PhaseMask:
    grid: OpticalGrid
    phase: np.ndarray
    carrier: tuple = (0.0, 0.0)

    def __post_init__(self):
        self.phase = wrap_phase(self.phase)
        if self.phase.shape != (self.grid.ny, self.grid.nx):
            raise GridError("phase does not match grid")
        self.carrier = (float(self.carrier[0]), float(self.carrier[1]))

    @classmethod
    def zeros(cls, grid: OpticalGrid):
        return cls(grid, np.zeros((grid.ny, grid.nx)))

    def __neg__(self):
        return PhaseMask(self.grid, -self.phase, (-self.carrier[0], -self.carrier[1]))

    def with_carrier(self, carrier) -> "PhaseMask":
        """Add a blazed (linear) carrier grating of spatial frequency (kx, ky) rad/um."""
        x, y = self.grid.coords(SLM)
        ph = self.phase + carrier[0] * x + carrier[1] * y
        return PhaseMask(self.grid, ph,
                         (self.carrier[0] + carrier[0], self.carrier[1] + carrier[1]))


@dataclass(frozen=True)
class SpotSpec:
    """Target position (um, sample plane) and complex weight."""

    position: tuple
    weight: complex = 1.0


def carrier_shift(grid: OpticalGrid, carrier) -> tuple[float, float]:
    """Focal-plane displacement (um) produced by a carrier grating."""
    f_um = grid.f_eff * 1000.0
    k = 2 * np.pi / grid.wavelength
    return carrier[0] * f_um / k, carrier[1] * f_um / k


def plane_wave_mode(spot: SpotSpec, grid: OpticalGrid, snap=True,
                    envelope_waist: float | None = None) -> ComplexField:
    """Unit-power plane wave at the SLM whose lens focus sits at ``spot.position``.

    The transverse wavevector is (2 pi / lambda) r / f_eff.  With ``snap`` the
    position is rounded to the nearest focal-plane pixel, which makes modes of
    distinct pixels exactly orthogonal on the finite aperture.
    ``envelope_waist`` (um, SLM plane) restricts the wave to a Gaussian pupil.
    """
    dx, dy = grid.focal_pitch
    mx, my = spot.position[0] / dx, spot.position[1] / dy
    if snap:
        mx, my = float(np.round(mx)), float(np.round(my))
    if not (-grid.nx / 2 <= mx < grid.nx / 2 and -grid.ny / 2 <= my < grid.ny / 2):
        raise GridError(f"spot {spot.position} aliases beyond the Nyquist limit")
    x, y = grid.coords(SLM)
    kx = 2 * np.pi * mx / (grid.nx * grid.pitch)
    ky = 2 * np.pi * my / (grid.ny * grid.pitch)
    amp = np.exp(1j * (kx * x + ky * y)) / (math.sqrt(grid.nx * grid.ny) * grid.pitch)
    if envelope_waist is not None:
        amp = amp * np.exp(-(x**2 + y**2) / envelope_waist**2)
        return ComplexField(grid, amp, SLM).normalized()
    return ComplexField(grid, amp, SLM)


def uniform_illumination(grid: OpticalGrid) -> ComplexField:
    return plane_wave_mode(SpotSpec((0.0, 0.0)), grid)


def gaussian_mode(center, w0: float, grid: OpticalGrid, plane=FOCAL) -> ComplexField:
    """Unit-power Gaussian exp(-|r - center|^2 / w0^2) in the given plane."""
    dx, dy = grid.spacing(plane)
    if w0 < 2 * max(dx, dy):
        raise GridError(f"waist {w0} um is under-resolved (pixel {max(dx, dy):.4g} um)")
    x, y = grid.coords(plane)
    amp = np.exp(-((x - center[0]) ** 2 + (y - center[1]) ** 2) / w0**2)
    return ComplexField(grid, amp, plane).normalized()


def propagate_lens(fld: ComplexField) -> ComplexField:
    """Unitary Fourier transform through the lens (SLM -> focal plane, or a
    second lens focal -> SLM, which images with coordinate inversion)."""
    g = fld.grid
    src = fld.plane
    dst = FOCAL if src == SLM else SLM
    a = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(fld.amplitudes), norm="ortho"))
    a *= math.sqrt(g.pixel_area(src) / g.pixel_area(dst))
    return ComplexField(g, a, dst)


def backpropagate_lens(fld: ComplexField) -> ComplexField:
    """Inverse of :func:`propagate_lens` (conjugate lens transform)."""
    g = fld.grid
    src = fld.plane
    dst = SLM if src == FOCAL else FOCAL
    a = np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(fld.amplitudes), norm="ortho"))
    a *= math.sqrt(g.pixel_area(src) / g.pixel_area(dst))
    return ComplexField(g, a, dst)


def apply_mask(fld: ComplexField, mask: PhaseMask) -> ComplexField:
    if fld.grid != mask.grid:
        raise GridError("field and mask grids differ")
    if fld.plane != SLM:
        raise GridError("masks act in the SLM plane")
    return ComplexField(fld.grid, fld.amplitudes * np.exp(1j * mask.phase), SLM)


def overlap(fld: ComplexField, mode: ComplexField) -> complex:
    """<mode|field> with pixel-area weighting."""
    _check_same(fld, mode)
    return complex(np.vdot(mode.amplitudes, fld.amplitudes) * fld.grid.pixel_area(fld.plane))


def coupling_efficiency(fld: ComplexField, mode: ComplexField) -> float:
    """|<mode|field>|^2 for unit-power inputs."""
    return abs(overlap(fld, mode)) ** 2


def multiplex_hologram(spots: Sequence[SpotSpec], grid: OpticalGrid, carrier=(0.0, 0.0),
                       snap=True) -> PhaseMask:
    """Phase of sum_k weight_k * plane_wave_mode_k, plus a carrier grating."""
    if not spots:
        raise DataError("need at least one spot")
    if all(abs(s.weight) == 0 for s in spots):
        raise DataError("all spot weights are zero")
    total = np.zeros((grid.ny, grid.nx), dtype=complex)
    for s in spots:
        if s.weight != 0:
            total += complex(s.weight) * plane_wave_mode(s, grid, snap).amplitudes
    mask = PhaseMask(grid, np.angle(total))
    if carrier[0] or carrier[1]:
        mask = mask.with_carrier(carrier)
    return mask


def far_field(mask: PhaseMask, illumination: ComplexField | None = None) -> ComplexField:
    illum = uniform_illumination(mask.grid) if illumination is None else illumination
    return propagate_lens(apply_mask(illum, mask))


def spot_powers(focal: ComplexField, positions, window=1) -> np.ndarray:
    """Power within a (2 window + 1)^2 pixel box around each position."""
    inten = focal.intensity() * focal.grid.pixel_area(FOCAL)
    out = []
    for pos in positions:
        r, c = focal.grid.focal_index(pos)
        out.append(inten[max(r - window, 0) : r + window + 1, max(c - window, 0) : c + window + 1].sum())
    return np.array(out)


def find_peaks_2d(focal: ComplexField, count: int, exclusion=3) -> list:
    """Positions (um) of the ``count`` brightest pixels, suppressing neighbours
    within ``exclusion`` pixels of an already picked peak."""
    inten = focal.intensity().copy()
    dx, dy = focal.grid.focal_pitch
    found = []
    for _ in range(count):
        r, c = np.unravel_index(np.argmax(inten), inten.shape)
        found.append(((c - focal.grid.nx // 2) * dx, (r - focal.grid.ny // 2) * dy))
        inten[max(r - exclusion, 0) : r + exclusion + 1, max(c - exclusion, 0) : c + exclusion + 1] = 0
    return found


@dataclass
class BalanceResult:
    spots: list
    mask: PhaseMask
    powers: np.ndarray
    iterations: int
    history: list = field(default_factory=list)

    @property
    def imbalance(self) -> float:
        """max |P_k / mean(P) - 1| over the spots (relative to target ratios)."""
        return self.history[-1] if self.history else float("nan")


def balance_weights(spots: Sequence[SpotSpec], grid: OpticalGrid, targets=None,
                    illumination: ComplexField | None = None, tol=0.01, max_iter=100,
                    window=1, carrier=(0.0, 0.0)) -> BalanceResult:
    """Iteratively rescale |weight_k| until the simulated spot powers match the
    target ratios (equal by default) within ``tol``."""
    spots = list(spots)
    n = len(spots)
    tgt = np.ones(n) if targets is None else np.asarray(targets, dtype=float)
    tgt = tgt / tgt.sum()
    shift = carrier_shift(grid, carrier)
    positions = [(s.position[0] + shift[0], s.position[1] + shift[1]) for s in spots]
    history = []
    for it in range(1, max_iter + 1):
        mask = multiplex_hologram(spots, grid, carrier)
        p = spot_powers(far_field(mask, illumination), positions, window)
        ratio = (p / p.sum()) / tgt
        history.append(float(np.max(np.abs(ratio - 1.0))))
        if history[-1] <= tol:
            return BalanceResult(spots, mask, p, it, history)
        spots = [replace(s, weight=s.weight / math.sqrt(r)) for s, r in zip(spots, ratio)]
        norm = max(abs(s.weight) for s in spots)
        spots = [replace(s, weight=s.weight / norm) for s in spots]
    return BalanceResult(spots, mask, p, max_iter, history)


@dataclass
class TransferReport:
    matrix: np.ndarray
    eta: float
    unitarity_deviation: float

    @property
    def splitting(self) -> np.ndarray:
        """Fraction of each input's transmitted power reaching each output."""
        p = np.abs(self.matrix) ** 2
        return p / p.sum(axis=0, keepdims=True)


def unitarity_deviation(m: np.ndarray) -> tuple[float, float]:
    """(eta, ||M^dag M / eta - I||_2) with eta the mean transmitted power per input."""
    m = np.asarray(m, dtype=complex)
    mm = m.conj().T @ m
    eta = float(np.real(np.trace(mm)) / m.shape[1])
    if eta <= 0:
        return 0.0, float("inf")
    return eta, float(np.linalg.norm(mm / eta - np.eye(m.shape[1]), 2))


def realized_transfer_matrix(mask: PhaseMask, input_modes: Sequence[ComplexField],
                             output_modes: Sequence[ComplexField]) -> TransferReport:
    """M_ij = <output_i | lens(mask * input_j)>."""
    outs = [propagate_lens(apply_mask(f, mask)) for f in input_modes]
    m = np.array([[overlap(o, t) for o in outs] for t in output_modes])
    eta, dev = unitarity_deviation(m)
    return TransferReport(m, eta, dev)


def ideal_beamsplitter() -> np.ndarray:
    return np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / math.sqrt(2.0)


@dataclass
class WavefrontMatchResult:
    mask: PhaseMask
    couplings: np.ndarray
    history: list
    converged: bool


class WavefrontMatchStall(UserWarning):
    pass


def wavefront_match(inputs: Sequence[ComplexField], targets: Sequence[ComplexField],
                    iterations=50, tolerance=1e-6, lock_phases=False) -> WavefrontMatchResult:
    """Single phase layer mapping inputs[m] (SLM plane) onto targets[m]
    (focal plane) after the lens.

    Each update sets the phase to arg(sum_m c_m t_m conj(in_m)), where t_m is
    the back-propagated target and c_m the current overlap, which never
    decreases the mean coupling sum_m |c_m|^2 / M.  The first update uses
    c_m = 1.

    With ``lock_phases`` the weights are |c_m|, so the relative phases of the
    targets are kept as given instead of being re-optimized.  This matters
    when the targets define a transfer matrix (e.g. a beamsplitter), since
    the unconstrained optimum may trade column balance for total coupling.
    """
    if len(inputs) != len(targets) or not inputs:
        raise DataError("inputs and targets must be non-empty lists of equal length")
    grid = inputs[0].grid
    ins = [f.amplitudes for f in inputs]
    backs = [backpropagate_lens(t).amplitudes for t in targets]
    area = grid.pixel_area(SLM)
    weights = np.ones(len(ins), dtype=complex)
    history = []
    phase = None
    converged = False
    for _ in range(iterations):
        acc = np.zeros_like(ins[0])
        for c, a, b in zip(weights, ins, backs):
            acc += c * b * np.conj(a)
        phase = np.angle(acc)
        e = np.exp(1j * phase)
        overlaps = np.array([np.vdot(b, e * a) * area for a, b in zip(ins, backs)])
        weights = np.abs(overlaps).astype(complex) if lock_phases else overlaps
        history.append(float(np.mean(np.abs(overlaps) ** 2)))
        if len(history) > 1 and history[-1] - history[-2] < tolerance:
            converged = True
            break
    if len(history) > 1 and history[-1] < history[0] - 1e-12:
        import warnings

        warnings.warn(f"wavefront matching stalled: {history}", WavefrontMatchStall)
    return WavefrontMatchResult(PhaseMask(grid, phase), np.abs(weights) ** 2, history, converged)


def matched_pupil_waist(grid: OpticalGrid, core_waist: float) -> float:
    """SLM-plane waist of a focal-plane Gaussian of waist ``core_waist``."""
    return grid.wavelength * grid.f_eff * 1000.0 / (math.pi * core_waist)


def beamsplitter_modes(grid: OpticalGrid, emitters, cores, core_waist: float,
                       pupil_waist: float | None = None, target_phase=math.pi / 2):
    """Emitter modes f1, f2, inputs (f1 +- f2)/sqrt2 and core Gaussian targets.

    The emitter modes carry a Gaussian pupil, by default matched to the
    back-propagated core mode.  The second target is multiplied by
    exp(i target_phase); a quarter wave balances the two emitter columns when
    the cores sit symmetrically about the emitter axis.  Use with
    ``wavefront_match(..., lock_phases=True)``.
    """
    if pupil_waist is None:
        pupil_waist = matched_pupil_waist(grid, core_waist)
    f1 = plane_wave_mode(SpotSpec(tuple(emitters[0])), grid, envelope_waist=pupil_waist)
    f2 = plane_wave_mode(SpotSpec(tuple(emitters[1])), grid, envelope_waist=pupil_waist)
    s = 1 / math.sqrt(2)
    inputs = [(f1 + f2) * s, (f1 - f2) * s]
    targets = [gaussian_mode(tuple(c), core_waist, grid, FOCAL) for c in cores]
    targets[1] = targets[1] * complex(np.exp(1j * target_phase))
    return (f1, f2), inputs, targets
