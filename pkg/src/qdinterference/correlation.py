"""Closed-form common-mode g2(tau) for N equal-brightness emitters, detector
response convolution and reference values."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import CorrelationTrace, EmitterParams
from .errors import DataError, GridError

HBAR_UEV_NS = 0.6582119569
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
IRF_TRUNCATION = 5.0

DEFAULT_TAU_SPAN = 10.0
DEFAULT_TAU_STEP = 0.005


def energy_to_detuning(hbar_delta_uev):
    """Energy detuning in ueV -> angular frequency in rad/ns."""
    return np.asarray(hbar_delta_uev, dtype=float) / HBAR_UEV_NS if np.ndim(hbar_delta_uev) else float(hbar_delta_uev) / HBAR_UEV_NS


def detuning_to_energy(delta_rad_ns):
    return np.asarray(delta_rad_ns, dtype=float) * HBAR_UEV_NS if np.ndim(delta_rad_ns) else float(delta_rad_ns) * HBAR_UEV_NS


def default_tau_grid(span=DEFAULT_TAU_SPAN, step=DEFAULT_TAU_STEP):
    n = int(round(span / step))
    return np.arange(-n, n + 1) * step


@dataclass(frozen=True)
class AnalyticG2Params:
    """Parameters of the closed-form g2.

    rate_sums[k] = gamma_k + gamma_p_k; decoherence[k, j] = Gamma_kj;
    detuning[k, j] = omega_k - omega_j (rad/ns).
    """

    rate_sums: np.ndarray
    decoherence: np.ndarray
    detuning: np.ndarray

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.rate_sums, dtype=float))
        g = np.asarray(self.decoherence, dtype=float)
        d = np.asarray(self.detuning, dtype=float)
        n = s.size
        if g.shape != (n, n) or d.shape != (n, n):
            raise DataError("pairwise matrices must be N x N")
        if not np.allclose(d, -d.T, atol=1e-12):
            raise DataError("detuning matrix must be antisymmetric")
        object.__setattr__(self, "rate_sums", s)
        object.__setattr__(self, "decoherence", g)
        object.__setattr__(self, "detuning", d)

    @property
    def n(self) -> int:
        return self.rate_sums.size

    @classmethod
    def from_emitters(cls, emitters) -> "AnalyticG2Params":
        s = np.array([e.gamma + e.gamma_p for e in emitters])
        gd = np.array([e.gamma_d for e in emitters])
        w = np.array([e.omega for e in emitters])
        return cls.from_rates(s, gd, w)

    @classmethod
    def from_rates(cls, rate_sums, gamma_d, omegas) -> "AnalyticG2Params":
        """Build from per-emitter gamma+gamma_p, gamma_d and frequencies.

        Scalars broadcast to all emitters; the emitter count is taken from
        ``omegas``.
        """
        w = np.atleast_1d(np.asarray(omegas, dtype=float))
        n = w.size
        s = np.broadcast_to(np.asarray(rate_sums, dtype=float), (n,)).copy()
        gd = np.broadcast_to(np.asarray(gamma_d, dtype=float), (n,)).copy()
        dec = 0.5 * ((s + gd)[:, None] + (s + gd)[None, :])
        return cls(s, dec, w[:, None] - w[None, :])


def g2_analytic(params: AnalyticG2Params, tau_grid, coherent=True) -> CorrelationTrace:
    """g2(tau) = 1 - (G_inc(tau) - Re G_coh(tau)) / N^2, even in tau.

    With ``coherent=False`` the inter-emitter term is dropped, which is the
    fully distinguishable limit.
    """
    tau = np.asarray(tau_grid, dtype=float)
    t = np.abs(tau)
    n = params.n
    g_inc = np.exp(-np.outer(t, params.rate_sums)).sum(axis=1)
    g = 1.0 - g_inc / n**2
    if coherent and n > 1:
        off = ~np.eye(n, dtype=bool)
        rates = params.decoherence[off] + 1j * params.detuning[off]
        g_coh = np.exp(-np.outer(t, rates)).sum(axis=1).real
        g = g + g_coh / n**2
    return CorrelationTrace(tau, g)


def distinguishable_baseline(n: int) -> float:
    """g2(0) of N distinguishable, equal-brightness single-photon sources."""
    if n < 1:
        raise DataError("N must be >= 1")
    return (n - 1) / n


def ideal_bunching_peak(n: int) -> float:
    """g2(0) of N identical emitters without dephasing or detuning."""
    if n < 1:
        raise DataError("N must be >= 1")
    return 2.0 * (n - 1) / n


def gaussian_kernel(fwhm: float, dt: float) -> np.ndarray:
    sigma = fwhm * FWHM_TO_SIGMA
    half = int(math.ceil(IRF_TRUNCATION * sigma / dt))
    x = np.arange(-half, half + 1) * dt
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _convolve_uniform(values, kernel):
    half = kernel.size // 2
    padded = np.pad(values, half, mode="edge")
    return np.convolve(padded, kernel, mode="valid")


def convolve_irf(trace: CorrelationTrace, fwhm: float) -> CorrelationTrace:
    """Convolve with a unit-sum Gaussian of the given FWHM (ns), truncated at
    +-5 sigma.  The trace is extended with its edge values outside the grid."""
    if fwhm < 0:
        raise DataError(f"fwhm must be >= 0, got {fwhm}")
    if fwhm == 0 or len(trace) < 2:
        return CorrelationTrace(trace.tau.copy(), trace.g2.copy(), trace.sigma)
    if not trace.is_uniform():
        raise GridError("IRF convolution requires a uniform tau grid")
    dt = trace.spacing
    if dt > fwhm / 10 * (1 + 1e-9):
        raise GridError(f"grid spacing {dt:g} ns exceeds fwhm/10 = {fwhm / 10:g} ns")
    g = _convolve_uniform(trace.g2, gaussian_kernel(fwhm, dt))
    return CorrelationTrace(trace.tau.copy(), g, trace.sigma)


def g2_model(params: AnalyticG2Params, tau_grid, irf_fwhm=0.0, coherent=True) -> np.ndarray:
    """Analytic g2 convolved with the IRF, sampled on an arbitrary uniform grid.

    Unlike :func:`convolve_irf` this never rejects a coarse grid: it evaluates
    on an integer-refined, padded grid, convolves and samples back.
    """
    tau = np.asarray(tau_grid, dtype=float)
    if irf_fwhm <= 0 or tau.size < 2:
        return g2_analytic(params, tau, coherent).g2
    d = np.diff(tau)
    dt = float(d.mean())
    if np.any(np.abs(d - dt) > 1e-6 * abs(dt)):
        raise GridError("IRF convolution requires a uniform tau grid")
    refine = max(1, int(math.ceil(dt / (irf_fwhm / 10))))
    fine_dt = dt / refine
    pad = int(math.ceil(IRF_TRUNCATION * irf_fwhm * FWHM_TO_SIGMA / fine_dt)) + 1
    idx = np.arange(-pad, (tau.size - 1) * refine + pad + 1)
    fine = tau[0] + idx * fine_dt
    if abs(fine[0] + fine[-1]) < 1e-9 * fine_dt:
        # symmetric grid: evaluate the non-negative half and mirror
        half = g2_analytic(params, fine[fine.size // 2 :], coherent).g2
        g = np.concatenate([half[:0:-1], half])
    else:
        g = g2_analytic(params, fine, coherent).g2
    conv = np.convolve(g, gaussian_kernel(irf_fwhm, fine_dt), mode="same")
    return conv[pad : pad + (tau.size - 1) * refine + 1 : refine]
