"""
Pulsed two-emitter Hong-Ou-Mandel coincidences behind a 2x2 beamsplitter.

Each emitter is prepared excited at the start of every pulse and emits one
photon with envelope gamma_k exp(-gamma_k t).  The output modes are
b_i = t_i1 a_1 + t_i2 a_2.  Coincidences between b_1 at t and b_2 at t + tau
within one pulse form the central peak; pairs from different pulses form
uncorrelated side peaks at multiples of the repetition period.

Dephasing enters with the same convention as the master equation: gamma_d is
the Lindblad rate of the sigma+ sigma- dissipator, so a single photon's
first-order coherence decays at gamma/2 + gamma_d/2 and the two-photon
interference term at the sum over both emitters.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq

from .correlation import energy_to_detuning
from .dynamics import CorrelationTrace, EmitterParams, EnsembleConfig, cross_correlation_oracle
from .errors import DataError, ModelAssumptionError
from .holography import ideal_beamsplitter, unitarity_deviation

UNITARITY_WARN = 0.05
DEFAULT_PERIOD = 12.5


class NonUnitaryTransferWarning(UserWarning):
    pass


@dataclass(frozen=True)
class HomPairParams:
    """Two emitters, their detuning and the beamsplitter transfer matrix.

    Parameters
    ----------
    first, second : EmitterParams
        Only ``gamma`` and ``gamma_d`` are used; ``omega`` is ignored in
        favour of ``detuning_uev``.
    detuning_uev : float
        hbar (omega_2 - omega_1) in ueV.
    period : float
        Pulse repetition period [ns].
    transfer : array, shape (2, 2)
        Amplitude transfer matrix, rows = outputs, columns = emitters.
    """

    first: EmitterParams
    second: EmitterParams
    detuning_uev: float = 0.0
    period: float = DEFAULT_PERIOD
    transfer: np.ndarray = field(default_factory=ideal_beamsplitter)

    def __post_init__(self):
        t = np.asarray(self.transfer, dtype=complex)
        if t.shape != (2, 2):
            raise DataError(f"transfer matrix must be 2x2, got shape {t.shape}")
        if not np.all(np.isfinite(t)):
            raise DataError("transfer matrix must be finite")
        if not (self.period > 0 and math.isfinite(self.period)):
            raise DataError(f"period must be > 0, got {self.period}")
        if not math.isfinite(self.detuning_uev):
            raise DataError("detuning must be finite")
        object.__setattr__(self, "transfer", t)
        _, dev = unitarity_deviation(t)
        if dev > UNITARITY_WARN:
            warnings.warn(
                f"transfer matrix unitarity deviation {dev:.3g} exceeds {UNITARITY_WARN}",
                NonUnitaryTransferWarning,
                stacklevel=2,
            )

    @property
    def detuning(self) -> float:
        """omega_2 - omega_1 [rad/ns]."""
        return float(energy_to_detuning(self.detuning_uev))

    @property
    def interference_decay(self) -> float:
        """Decay rate of the two-photon interference term [1/ns]."""
        a, b = self.first, self.second
        return 0.5 * (a.gamma + b.gamma) + 0.5 * (a.gamma_d + b.gamma_d)

    def swapped(self) -> "HomPairParams":
        """Same physics with the emitter labels exchanged."""
        return HomPairParams(self.second, self.first, -self.detuning_uev, self.period,
                             self.transfer[:, ::-1].copy())

    def distinguishable(self) -> "HomPairParams":
        """Reference pair without two-photon interference (orthogonal photons)."""
        return _NoInterference(self.first, self.second, self.detuning_uev, self.period,
                               self.transfer)


class _NoInterference(HomPairParams):
    pass


@dataclass
class HomResult:
    tau: np.ndarray
    density: np.ndarray
    g2_zero: float
    g2_distinguishable: float
    visibility: float

    def trace(self) -> CorrelationTrace:
        return CorrelationTrace(self.tau, self.density)


def _weights(pair: HomPairParams):
    t = pair.transfer
    direct = abs(t[0, 0] * t[1, 1]) ** 2  # emitter 1 -> b1, emitter 2 -> b2
    crossed = abs(t[0, 1] * t[1, 0]) ** 2
    x = 0j if isinstance(pair, _NoInterference) else t[0, 0] * t[1, 1] * np.conj(t[0, 1] * t[1, 0])
    return direct, crossed, x


def _pair_envelope(g1: float, g2: float, tau: np.ndarray) -> np.ndarray:
    """int I_1(t) I_2(t + tau) dt for envelopes g exp(-g t), unit area."""
    pref = g1 * g2 / (g1 + g2)
    return pref * np.where(tau >= 0, np.exp(-g2 * np.abs(tau)), np.exp(-g1 * np.abs(tau)))


def central_peak_density(pair: HomPairParams, tau) -> np.ndarray:
    """Same-pulse coincidence density between b1 (t) and b2 (t + tau)."""
    tau = np.asarray(tau, dtype=float)
    g1, g2 = pair.first.gamma, pair.second.gamma
    direct, crossed, x = _weights(pair)
    p = direct * _pair_envelope(g1, g2, tau) + crossed * _pair_envelope(g2, g1, tau)
    if x != 0:
        pref = g1 * g2 / (g1 + g2)
        osc = np.real(x * np.exp(1j * pair.detuning * tau))
        p = p + 2.0 * pref * osc * np.exp(-pair.interference_decay * np.abs(tau))
    return p


def side_peak_density(pair: HomPairParams, tau) -> np.ndarray:
    """Coincidence density between photons of two different pulses, centred at 0."""
    tau = np.asarray(tau, dtype=float)
    t = np.abs(pair.transfer) ** 2
    g = (pair.first.gamma, pair.second.gamma)
    out = np.zeros_like(tau)
    for j in range(2):
        for k in range(2):
            out += t[0, j] * t[1, k] * _pair_envelope(g[j], g[k], tau)
    return out


def hom_coincidence_density(pair: HomPairParams, tau_grid) -> CorrelationTrace:
    """Central peak plus side peaks at every multiple of the period inside the grid.

    Raises
    ------
    DataError
        If the grid is not symmetric about zero.
    ModelAssumptionError
        If the density goes negative (a non-physical transfer matrix).
    """
    tau = np.asarray(tau_grid, dtype=float)
    if tau.size == 0 or not np.allclose(tau, -tau[::-1], atol=1e-9 * max(1.0, np.abs(tau).max())):
        raise DataError("HOM density needs a tau grid symmetric about zero")
    p = central_peak_density(pair, tau)
    kmax = int(math.ceil(np.abs(tau).max() / pair.period)) + 1
    for k in range(1, kmax + 1):
        for sgn in (1, -1):
            p = p + side_peak_density(pair, tau - sgn * k * pair.period)
    scale = max(float(np.max(np.abs(p))), 1e-300)
    if np.any(p < -1e-12 * scale):
        raise ModelAssumptionError(
            f"negative coincidence density (min {p.min():.3g}); transfer matrix is not physical"
        )
    return CorrelationTrace(tau, np.clip(p, 0.0, None))


def central_peak_area(pair: HomPairParams) -> float:
    g1, g2 = pair.first.gamma, pair.second.gamma
    direct, crossed, x = _weights(pair)
    gam = pair.interference_decay
    lorentz = 2.0 * gam / (gam**2 + pair.detuning**2)
    return direct + crossed + 2.0 * np.real(x) * (g1 * g2 / (g1 + g2)) * lorentz


def side_peak_area(pair: HomPairParams) -> float:
    t = np.abs(pair.transfer) ** 2
    return float(t[0].sum() * t[1].sum())


def hom_g2_zero(pair: HomPairParams) -> float:
    """Central-peak area over the area of one uncorrelated side peak."""
    s = side_peak_area(pair)
    if s <= 0:
        raise DataError("an output port receives no light")
    return float(central_peak_area(pair) / s)


def hom_visibility(g2_ind: float, g2_dis: float) -> float:
    """V0 = 1 - g2_ind(0) / g2_dis(0)."""
    if g2_dis == 0:
        raise ZeroDivisionError("g2_dis must be nonzero")
    return 1.0 - g2_ind / g2_dis


def hom_result(pair: HomPairParams, tau_grid) -> HomResult:
    dens = hom_coincidence_density(pair, tau_grid)
    g_ind = hom_g2_zero(pair)
    g_dis = hom_g2_zero(pair.distinguishable())
    return HomResult(dens.tau, dens.g2, g_ind, g_dis, hom_visibility(g_ind, g_dis))


def dephasing_for_visibility(target: float, gamma1=1.0, gamma2=None, detuning_uev=0.0,
                             transfer=None, upper=1e4) -> float:
    """Common gamma_d at which the visibility equals ``target`` (bisection).

    The visibility falls strictly with gamma_d, so the root is unique when it
    lies between the gamma_d = 0 and gamma_d = ``upper`` values.
    """
    gamma2 = gamma1 if gamma2 is None else gamma2
    tr = ideal_beamsplitter() if transfer is None else transfer

    def vis(gd):
        pair = HomPairParams(EmitterParams(gamma=gamma1, gamma_d=gd),
                             EmitterParams(gamma=gamma2, gamma_d=gd), detuning_uev,
                             transfer=tr)
        return hom_visibility(hom_g2_zero(pair), hom_g2_zero(pair.distinguishable()))

    lo, hi = vis(0.0), vis(upper)
    if not (hi < target <= lo):
        raise DataError(f"visibility {target} outside the reachable range ({hi:.4g}, {lo:.4g}]")
    if target == lo:
        return 0.0
    return float(brentq(lambda gd: vis(gd) - target, 0.0, upper, xtol=1e-12, rtol=1e-12))


def oracle_g2_zero(pair: HomPairParams, pump_fraction=1e-4, span_decays=40.0,
                   points=8001) -> float:
    """HOM g2(0) from the master-equation cross-correlation in the weak-pump
    CW limit.

    Each emitter is pumped at ``pump_fraction * gamma`` and weighted by
    1/sqrt(n_e) so both contribute equal flux.  The central-peak area relative
    to the side peak is then 1 - rate * int (1 - g_x(tau)) dtau with
    rate = g1 g2 / (g1 + g2).  Exact for a balanced beamsplitter.
    """
    g1, g2 = pair.first.gamma, pair.second.gamma
    w2 = pair.detuning
    ems = (
        EmitterParams(omega=-0.5 * w2, gamma=g1, gamma_p=pump_fraction * g1,
                      gamma_d=pair.first.gamma_d),
        EmitterParams(omega=0.5 * w2, gamma=g2, gamma_p=pump_fraction * g2,
                      gamma_d=pair.second.gamma_d),
    )
    ens = EnsembleConfig.equal_brightness(ems, intensity=2.0)
    c = np.array(ens.weights)
    t = pair.transfer
    b1 = (t[0, 0] * c[0], t[0, 1] * c[1])
    b2 = (t[1, 0] * c[0], t[1, 1] * c[1])
    span = span_decays / min(g1, g2)
    tau = np.linspace(-span, span, points)
    gx = cross_correlation_oracle(ens, b1, b2, tau).g2
    rate = g1 * g2 / (g1 + g2)
    return float(1.0 - rate * trapezoid(1.0 - gx, tau))
