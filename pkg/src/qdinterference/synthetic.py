"""Deterministic synthetic datasets for tests, examples and the packaged fixtures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correlation import AnalyticG2Params, default_tau_grid, energy_to_detuning, g2_model
from .dynamics import CorrelationTrace
from .errors import DataError
from .fitting import CoincidenceHistogram

DETUNING_SERIES_UEV = (0.0, 4.8, 9.5, 14.3, 19.1)
REFERENCE_RATE_SUM = 1.5
REFERENCE_GAMMA_D = 3.0
REFERENCE_IRF = 0.035


@dataclass(frozen=True)
class SyntheticSpec:
    """Ground truth of a synthetic common-mode g2 trace.

    ``energies_uev`` are emitter transition energies relative to an arbitrary
    origin; their count fixes N.
    """

    energies_uev: tuple
    gamma_d: float = REFERENCE_GAMMA_D
    rate_sum: float = REFERENCE_RATE_SUM
    irf_fwhm: float = REFERENCE_IRF

    @property
    def n(self) -> int:
        return len(self.energies_uev)

    def params(self) -> AnalyticG2Params:
        w = energy_to_detuning(np.asarray(self.energies_uev, dtype=float))
        return AnalyticG2Params.from_rates(self.rate_sum, self.gamma_d, w)

    def model(self, tau) -> np.ndarray:
        return g2_model(self.params(), tau, self.irf_fwhm)


def noisy_trace(spec: SyntheticSpec, tau=None, noise=0.01, seed=0) -> CorrelationTrace:
    """Model plus Gaussian noise of fixed standard deviation ``noise``."""
    tau = default_tau_grid() if tau is None else np.asarray(tau, dtype=float)
    rng = np.random.default_rng(seed)
    g = spec.model(tau)
    y = g + noise * rng.standard_normal(tau.size)
    return CorrelationTrace(tau, np.clip(y, 0.0, None), np.full(tau.size, float(noise)))


def poisson_histogram(spec: SyntheticSpec, baseline_counts=10_000, tau=None, seed=0,
                      label="") -> CoincidenceHistogram:
    """Coincidence counts with mean ``baseline_counts * g2`` per bin."""
    if baseline_counts <= 0:
        raise DataError("baseline_counts must be > 0")
    tau = default_tau_grid() if tau is None else np.asarray(tau, dtype=float)
    rng = np.random.default_rng(seed)
    counts = rng.poisson(baseline_counts * np.clip(spec.model(tau), 0.0, None))
    return CoincidenceHistogram(tau, counts, label=label)


def detuning_series(energies_uev=DETUNING_SERIES_UEV, gamma_d=REFERENCE_GAMMA_D,
                    rate_sum=REFERENCE_RATE_SUM, irf_fwhm=REFERENCE_IRF, noise=0.01,
                    tau=None, seed=0):
    """Two-emitter traces at each detuning; returns (specs, traces)."""
    specs = [SyntheticSpec((0.0, float(e)), gamma_d, rate_sum, irf_fwhm) for e in energies_uev]
    traces = [noisy_trace(s, tau, noise, seed + i) for i, s in enumerate(specs)]
    return specs, traces


def n_scaling_series(ns=(2, 3, 4, 5), gamma_d=REFERENCE_GAMMA_D, rate_sum=REFERENCE_RATE_SUM,
                     irf_fwhm=REFERENCE_IRF, noise=0.01, tau=None, seed=0):
    """Degenerate N-emitter traces; returns (specs, traces)."""
    specs = [SyntheticSpec((0.0,) * n, gamma_d, rate_sum, irf_fwhm) for n in ns]
    traces = [noisy_trace(s, tau, noise, seed + i) for i, s in enumerate(specs)]
    return specs, traces


def write_detuning_fixture(directory, baseline_counts=10_000, seed=2024) -> list:
    """Write the detuning-series histograms and a ``manifest.yaml`` of the
    ground truth into ``directory``.  Returns the histogram paths."""
    from pathlib import Path

    import yaml

    from .io import save_histogram

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    specs = [SyntheticSpec((0.0, e)) for e in DETUNING_SERIES_UEV]
    paths = []
    for i, s in enumerate(specs):
        name = f"detuning_{s.energies_uev[1]:04.1f}ueV.csv"
        paths.append(save_histogram(poisson_histogram(s, baseline_counts, seed=seed + i), d / name))
    manifest = {
        "description": "two-emitter common-mode coincidence histograms, Poisson counts",
        "files": [p.name for p in paths],
        "detuning_uev": list(DETUNING_SERIES_UEV),
        "gamma_d": REFERENCE_GAMMA_D,
        "rate_sum": REFERENCE_RATE_SUM,
        "irf_fwhm_ns": REFERENCE_IRF,
        "baseline_counts": baseline_counts,
        "seed": seed,
    }
    (d / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=True), encoding="utf-8")
    return paths
