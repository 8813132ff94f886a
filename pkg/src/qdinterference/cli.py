"""
Command-line interface.

Every scenario reads an optional YAML file of the form::

    scenario: simulate-g2
    seed: 0
    output: results/
    params:
      n: 5
      gamma_d: 3.0

Command-line flags override file values: ``--seed``, ``--output``, one
``--<param>`` flag per parameter (values parsed as YAML) and the generic
``--set key=value``.  Energies are in ueV, rates in 1/ns, times in ns unless a
parameter name carries a unit suffix (``irf_fwhm_ps``).

Outputs of a run go to one directory: ``result.json`` (config echo, version,
seed, reports), ``trace_<name>.csv`` tables, ``mask_<name>.{pgm,json,npy}``
and ``timing.json``.  Everything except ``timing.json`` is byte-identical for
a fixed config and seed.

Exit codes: 0 success, 1 usage/config, 2 data, 3 numerical.
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import sys
import time
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from . import __version__
from .correlation import (
    AnalyticG2Params,
    convolve_irf,
    default_tau_grid,
    detuning_to_energy,
    distinguishable_baseline,
    energy_to_detuning,
    g2_analytic,
    g2_model,
    ideal_bunching_peak,
)
from .dynamics import EmitterParams, EnsembleConfig, g2_oracle
from .errors import ConfigError, DataError, QDIError
from .fitting import (
    detuning_series_spec,
    fit_single_emitter,
    joint_fit,
    n_scaling_spec,
    normalize_histogram,
)
from .holography import (
    SLM,
    OpticalGrid,
    apply_mask,
    SpotSpec,
    balance_weights,
    beamsplitter_modes,
    coupling_efficiency,
    carrier_shift,
    find_peaks_2d,
    gaussian_mode,
    ideal_beamsplitter,
    matched_pupil_waist,
    propagate_lens,
    realized_transfer_matrix,
    spot_powers,
    uniform_illumination,
    wavefront_match,
)
from .hom import HomPairParams, dephasing_for_visibility, hom_result, oracle_g2_zero
from .io import dump_json, load_config, load_histogram, load_mask, load_table, save_mask, save_table
from .synthetic import SyntheticSpec, poisson_histogram

PACKAGED_DATA = "packaged"

_GRID_DEFAULTS = {"grid_n": 512, "fov": 15.0, "pitch": 8.0, "wavelength": 0.97117}

DEFAULTS = {
    "simulate-g2": {
        "n": 5,
        "gamma": 1.0,
        "gamma_p": 0.5,
        "gamma_d": 3.0,
        "detuning_uev": 0.0,
        "energies_uev": None,
        "irf_fwhm_ps": 35.0,
        "tau_span": 10.0,
        "tau_step": 0.005,
    },
    "oracle-g2": {
        "n": 2,
        "gamma": 1.0,
        "gamma_p": 0.5,
        "gamma_d": 3.0,
        "detuning_uev": 0.0,
        "energies_uev": None,
        "irf_fwhm_ps": 35.0,
        "tau_span": 10.0,
        "tau_step": 0.0025,
        "method": "propagator",
    },
    "fit": {
        "kind": "detuning-series",
        "data": PACKAGED_DATA,
        "ns": None,
        "rate_sum": 1.5,
        "irf_fwhm_ps": 35.0,
        "baseline_window": [6.0, 10.0],
        "n_starts": 16,
        "bootstrap": 0,
    },
    "single-dot-fit": {
        "data": "synthetic",
        "synthetic_rate_sum": 1.5,
        "baseline_counts": 10000,
        "irf_fwhm_ps": 35.0,
        "baseline_window": [6.0, 10.0],
        "n_starts": 8,
    },
    "hologram": {
        "spots": [[0.0, 0.0, 1.0]],
        "carrier": [0.0, 0.0],
        "balance": True,
        "balance_tol": 0.01,
        "max_iter": 100,
        "illumination": "gaussian",
        "fiber_waist": 0.25,
        **_GRID_DEFAULTS,
    },
    "wavefront-match": {
        "emitters": [[-5.5, 0.0], [5.5, 0.0]],
        "cores": [[0.0, -3.0], [0.0, 3.0]],
        "core_waist": 0.25,
        "target_phase_deg": 90.0,
        "iterations": 50,
        "tolerance": 1e-6,
        "lock_phases": True,
        **_GRID_DEFAULTS,
    },
    "hom": {
        "gamma1": 1.0,
        "gamma2": 1.0,
        "gamma_d1": 0.0,
        "gamma_d2": 0.0,
        "detuning_uev": 0.0,
        "period": 12.5,
        "transfer": "ideal",
        "tau_span": 40.0,
        "tau_step": 0.01,
        "oracle": False,
        "target_visibility": None,
    },
}

SCENARIOS = tuple(DEFAULTS)


@dataclass
class RunConfig:
    """One scenario with fully merged parameters."""

    scenario: str
    params: dict
    seed: int = 0
    output: str | None = None

    def __post_init__(self):
        if self.scenario not in DEFAULTS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        unknown = set(self.params) - set(DEFAULTS[self.scenario])
        if unknown:
            raise ConfigError(f"unknown parameters for {self.scenario}: {', '.join(sorted(unknown))}")
        merged = dict(DEFAULTS[self.scenario])
        merged.update(self.params)
        self.params = merged
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")

    @classmethod
    def from_sources(cls, scenario: str, file_cfg: dict | None = None, overrides: dict | None = None,
                     seed: int | None = None, output: str | None = None) -> "RunConfig":
        file_cfg = dict(file_cfg or {})
        extra = set(file_cfg) - {"scenario", "seed", "output", "params"}
        if extra:
            raise ConfigError(f"unknown top-level config keys: {', '.join(sorted(extra))}")
        declared = file_cfg.get("scenario")
        if declared is not None and declared != scenario:
            raise ConfigError(f"config declares scenario {declared!r} but {scenario!r} was requested")
        params = dict(file_cfg.get("params") or {})
        params.update(overrides or {})
        return cls(
            scenario,
            params,
            seed if seed is not None else file_cfg.get("seed", 0),
            output if output is not None else file_cfg.get("output"),
        )

    def echo(self) -> dict:
        return {"scenario": self.scenario, "seed": self.seed, "params": dict(self.params)}


@dataclass
class ResultBundle:
    """Everything a run produced, plus the config that produced it.

    ``traces`` maps a name to columns; ``tau`` is required, ``data`` and
    ``model`` are optional, further columns are kept as-is.
    """

    config: dict
    version: str
    seed: int
    traces: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def write(self, directory) -> list:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        written = []
        trace_files = {}
        for name, cols in self.traces.items():
            p = save_table(d / f"trace_{name}.csv", cols)
            trace_files[name] = p.name
            written.append(p)
        mask_files = {}
        for name, mask in self.masks.items():
            paths = save_mask(mask, d / f"mask_{name}")
            mask_files[name] = {k: v.name for k, v in paths.items()}
            written.extend(paths.values())
        doc = {
            "config": self.config,
            "version": self.version,
            "seed": self.seed,
            "report": self.report,
            "traces": trace_files,
            "masks": mask_files,
        }
        written.append(Path(d / "result.json"))
        dump_json(doc, written[-1])
        written.append(Path(d / "timing.json"))
        dump_json(self.timing, written[-1])
        return written

    @classmethod
    def read(cls, directory) -> "ResultBundle":
        d = Path(directory)
        path = d / "result.json"
        if not path.is_file():
            raise DataError(f"{path}: no result bundle here")
        doc = json.loads(path.read_text(encoding="utf-8"))
        traces = {name: load_table(d / fname) for name, fname in doc.get("traces", {}).items()}
        masks = {name: load_mask(d / Path(files["raw"]).stem) for name, files in doc.get("masks", {}).items()}
        timing_path = d / "timing.json"
        timing = json.loads(timing_path.read_text(encoding="utf-8")) if timing_path.is_file() else {}
        return cls(doc["config"], doc["version"], doc["seed"], traces, masks, doc.get("report", {}), timing)


# ---------------------------------------------------------------------------
# parameter helpers
# ---------------------------------------------------------------------------


def _positive(p, key):
    v = p[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0 or not math.isfinite(v):
        raise ConfigError(f"{key} must be a positive number, got {v!r}")
    return float(v)


def _nonneg(p, key):
    v = p[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not v >= 0 or not math.isfinite(v):
        raise ConfigError(f"{key} must be a non-negative number, got {v!r}")
    return float(v)


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _tau_grid(p):
    span, step = _positive(p, "tau_span"), _positive(p, "tau_step")
    if span / step > 2e6:
        raise ConfigError("tau grid too large")
    return default_tau_grid(span, step)


def _grid(p) -> OpticalGrid:
    n = p["grid_n"]
    if isinstance(n, bool) or not isinstance(n, int):
        raise ConfigError(f"grid_n must be an integer, got {n!r}")
    return OpticalGrid.for_field_of_view(_positive(p, "fov"), n, _positive(p, "pitch"),
                                         _positive(p, "wavelength"))


def _ensemble_energies(p, n, spacing):
    if p.get("energies_uev") is not None:
        e = [float(x) for x in _as_list(p["energies_uev"])]
        if len(e) != n:
            raise ConfigError(f"energies_uev has {len(e)} entries for n = {n}")
        return e
    return [k * float(spacing) for k in range(n)]


def _sweep(p):
    """(n, detuning) pairs; ``n`` and ``detuning_uev`` may each be lists."""
    ns = _as_list(p["n"])
    for n in ns:
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError(f"n must be a positive integer, got {n!r}")
    return list(itertools.product(ns, _as_list(p["detuning_uev"])))


def _trace_name(n, det, many):
    return f"N{n}_D{float(det):g}ueV" if many else "g2"


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------


def _simulate_g2(cfg: RunConfig, bundle: ResultBundle):
    p = cfg.params
    gamma, gamma_p, gamma_d = _positive(p, "gamma"), _nonneg(p, "gamma_p"), _nonneg(p, "gamma_d")
    irf = _nonneg(p, "irf_fwhm_ps") / 1000.0
    tau = _tau_grid(p)
    sweep = _sweep(p)
    rows = {}
    for n, det in sweep:
        w = energy_to_detuning(np.array(_ensemble_energies(p, n, det)))
        params = AnalyticG2Params.from_rates(gamma + gamma_p, gamma_d, w)
        raw = g2_analytic(params, tau).g2
        conv = g2_model(params, tau, irf)
        name = _trace_name(n, det, len(sweep) > 1)
        bundle.traces[name] = {"tau": tau, "model": conv, "unconvolved": raw}
        i0 = int(np.argmin(np.abs(tau)))
        rows[name] = {
            "n": n,
            "energies_uev": _ensemble_energies(p, n, det),
            "g2_zero": float(conv[i0]),
            "g2_zero_unconvolved": float(raw[i0]),
            "distinguishable_baseline": distinguishable_baseline(n),
            "ideal_bunching_peak": ideal_bunching_peak(n),
        }
    bundle.report["traces"] = rows


def _oracle_g2(cfg: RunConfig, bundle: ResultBundle):
    p = cfg.params
    gamma, gamma_p, gamma_d = _positive(p, "gamma"), _positive(p, "gamma_p"), _nonneg(p, "gamma_d")
    irf = _nonneg(p, "irf_fwhm_ps") / 1000.0
    tau = _tau_grid(p)
    sweep = _sweep(p)
    rows = {}
    for n, det in sweep:
        energies = _ensemble_energies(p, n, det)
        w = energy_to_detuning(np.array(energies))
        ems = [EmitterParams(omega=float(x), gamma=gamma, gamma_p=gamma_p, gamma_d=gamma_d) for x in w]
        ens = EnsembleConfig.equal_brightness(ems, irf_fwhm=irf)
        oracle = g2_oracle(ens, tau, method=p["method"])
        analytic = g2_analytic(AnalyticG2Params.from_emitters(ems), tau).g2
        conv = convolve_irf(oracle, irf).g2
        name = _trace_name(n, det, len(sweep) > 1)
        bundle.traces[name] = {"tau": tau, "model": conv, "unconvolved": oracle.g2,
                               "analytic": analytic}
        i0 = int(np.argmin(np.abs(tau)))
        rows[name] = {
            "n": n,
            "energies_uev": energies,
            "g2_zero": float(conv[i0]),
            "g2_zero_unconvolved": float(oracle.g2[i0]),
            "max_abs_diff_vs_analytic": float(np.max(np.abs(oracle.g2 - analytic))),
        }
    bundle.report["traces"] = rows


def packaged_dataset_dir() -> Path:
    return Path(str(resources.files("qdinterference") / "data" / "detuning_series"))


def _load_histograms(data):
    """Histograms plus the manifest (if the packaged set is used)."""
    if data == PACKAGED_DATA:
        d = packaged_dataset_dir()
        manifest = yaml.safe_load((d / "manifest.yaml").read_text(encoding="utf-8"))
        return [load_histogram(d / f) for f in manifest["files"]], manifest
    paths = _as_list(data)
    if not paths or not all(isinstance(x, str) for x in paths):
        raise ConfigError("data must be 'packaged' or a list of file paths")
    return [load_histogram(x) for x in paths], None


def _fit(cfg: RunConfig, bundle: ResultBundle):
    p = cfg.params
    hists, manifest = _load_histograms(p["data"])
    window = tuple(float(x) for x in p["baseline_window"])
    traces = [normalize_histogram(h, window) for h in hists]
    irf = _nonneg(p, "irf_fwhm_ps") / 1000.0
    rate_sum = _positive(p, "rate_sum")
    labels = [h.label for h in hists]
    if p["kind"] == "detuning-series":
        spec = detuning_series_spec(traces, rate_sum, irf, labels=labels,
                                    n_starts=int(p["n_starts"]), seed=cfg.seed)
    elif p["kind"] == "n-scaling":
        ns = p["ns"]
        if ns is None or len(_as_list(ns)) != len(traces):
            raise ConfigError("n-scaling needs one entry of ns per data file")
        spec = n_scaling_spec(traces, _as_list(ns), rate_sum, irf, n_starts=int(p["n_starts"]),
                              seed=cfg.seed)
    else:
        raise ConfigError(f"unknown fit kind {p['kind']!r}")
    result = joint_fit(spec, bootstrap=int(p["bootstrap"]))
    report = result.report()
    for i, ds in enumerate(spec.datasets):
        vals = result.dataset_values(i)
        model = ds.model(ds.trace.tau, **vals)
        bundle.traces[f"fit_{ds.label}"] = {
            "tau": ds.trace.tau, "data": ds.trace.g2, "model": model,
            "sigma": ds.trace.sigma,
        }
        if "delta" in vals:
            full = f"delta[{ds.label}]"
            report.setdefault("detuning_uev", {})[ds.label] = {
                "value": float(detuning_to_energy(vals["delta"])),
                "error": float(detuning_to_energy(result.errors.get(full, float("nan")))),
            }
    if manifest is not None:
        report["reference"] = {k: manifest[k] for k in ("gamma_d", "detuning_uev", "rate_sum",
                                                        "irf_fwhm_ns")}
    bundle.report["fit"] = report


def _single_dot_fit(cfg: RunConfig, bundle: ResultBundle):
    p = cfg.params
    irf = _nonneg(p, "irf_fwhm_ps") / 1000.0
    if p["data"] == "synthetic":
        spec = SyntheticSpec((0.0,), 0.0, _positive(p, "synthetic_rate_sum"), irf)
        hist = poisson_histogram(spec, int(p["baseline_counts"]), seed=cfg.seed, label="synthetic")
    else:
        hist = load_histogram(p["data"])
    trace = normalize_histogram(hist, tuple(float(x) for x in p["baseline_window"]))
    result = fit_single_emitter(trace, irf, n_starts=int(p["n_starts"]), seed=cfg.seed)
    vals = result.dataset_values(0)
    model = result._problem.spec.datasets[0].model(trace.tau, **vals)
    bundle.traces["single_dot"] = {"tau": trace.tau, "data": trace.g2, "model": model,
                                   "sigma": trace.sigma}
    bundle.report["fit"] = result.report()


def _spots(p):
    out = []
    for s in p["spots"]:
        s = _as_list(s)
        if len(s) not in (2, 3):
            raise ConfigError(f"spot {s!r} must be [x, y] or [x, y, weight]")
        out.append(SpotSpec((float(s[0]), float(s[1])), complex(s[2]) if len(s) == 3 else 1.0))
    if not out:
        raise ConfigError("need at least one spot")
    return out


def _hologram(cfg: RunConfig, bundle: ResultBundle):
    p = cfg.params
    grid = _grid(p)
    spots = _spots(p)
    waist = _positive(p, "fiber_waist")
    if p["illumination"] == "gaussian":
        illum = gaussian_mode((0.0, 0.0), matched_pupil_waist(grid, waist), grid, SLM)
    elif p["illumination"] == "uniform":
        illum = uniform_illumination(grid)
    else:
        raise ConfigError(f"illumination must be 'gaussian' or 'uniform', got {p['illumination']!r}")
    carrier = tuple(float(x) for x in p["carrier"])
    max_iter = int(p["max_iter"]) if p["balance"] else 1
    bal = balance_weights(spots, grid, illumination=illum, tol=float(p["balance_tol"]),
                          max_iter=max_iter, carrier=carrier)
    masked = apply_mask(illum, bal.mask)
    focal = propagate_lens(masked)
    targets = [s.position for s in spots]
    shift = carrier_shift(grid, carrier)
    shifted = [(x + shift[0], y + shift[1]) for x, y in targets]
    peaks = find_peaks_2d(focal, len(spots))
    dx, dy = grid.focal_pitch
    peak_err = []
    for t in shifted:
        d = [max(abs(t[0] - q[0]) / dx, abs(t[1] - q[1]) / dy) for q in peaks]
        peak_err.append(float(min(d)))
    couplings = [coupling_efficiency(focal, gaussian_mode(t, waist, grid)) for t in shifted]
    powers = spot_powers(focal, shifted)
    bundle.masks["hologram"] = bal.mask
    bundle.report["hologram"] = {
        "grid": {"nx": grid.nx, "ny": grid.ny, "pitch": grid.pitch, "wavelength": grid.wavelength,
                 "f_eff_mm": grid.f_eff, "focal_pitch_um": list(grid.focal_pitch)},
        "spots": [[s.position[0], s.position[1], abs(s.weight)] for s in bal.spots],
        "balance_iterations": bal.iterations,
        "imbalance_history": bal.history,
        "spot_power_fraction": (powers / powers.sum()).tolist(),
        "peak_offset_pixels": peak_err,
        "fiber_coupling": couplings,
        "parseval_error": abs(focal.power - masked.power) / masked.power,
    }


def _wavefront_match(cfg: RunConfig, bundle: ResultBundle):
    p = cfg.params
    grid = _grid(p)
    ems = [tuple(float(v) for v in e) for e in p["emitters"]]
    cores = [tuple(float(v) for v in c) for c in p["cores"]]
    if len(ems) != 2 or len(cores) != 2:
        raise ConfigError("wavefront-match needs exactly two emitters and two cores")
    (f1, f2), inputs, targets = beamsplitter_modes(
        grid, ems, cores, _positive(p, "core_waist"),
        target_phase=math.radians(float(p["target_phase_deg"])),
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = wavefront_match(inputs, targets, int(p["iterations"]), float(p["tolerance"]),
                              lock_phases=bool(p["lock_phases"]))
    rep = realized_transfer_matrix(res.mask, [f1, f2], targets)
    bundle.masks["beamsplitter"] = res.mask
    bundle.report["wavefront_match"] = {
        "transfer_matrix_re": rep.matrix.real.tolist(),
        "transfer_matrix_im": rep.matrix.imag.tolist(),
        "transfer_power": (np.abs(rep.matrix) ** 2).tolist(),
        "eta": rep.eta,
        "unitarity_deviation": rep.unitarity_deviation,
        "splitting": rep.splitting.tolist(),
        "couplings": res.couplings.tolist(),
        "history": res.history,
        "converged": res.converged,
        "warnings": [str(w.message) for w in caught],
    }


def _transfer_from(spec):
    if spec == "ideal":
        return ideal_beamsplitter()
    if isinstance(spec, str):
        path = Path(spec)
        if path.is_dir():
            path = path / "result.json"
        if not path.is_file():
            raise ConfigError(f"transfer: {spec} is neither 'ideal' nor a result file")
        wm = json.loads(path.read_text(encoding="utf-8"))["report"].get("wavefront_match")
        if wm is None:
            raise DataError(f"{path}: not a wavefront-match result")
        m = np.array(wm["transfer_matrix_re"]) + 1j * np.array(wm["transfer_matrix_im"])
        # normalize the mean transmitted power so only the splitting enters
        return m / math.sqrt(wm["eta"])
    m = np.asarray(spec, dtype=float)
    if m.shape == (2, 2, 2):
        return m[..., 0] + 1j * m[..., 1]
    if m.shape == (2, 2):
        return m.astype(complex)
    raise ConfigError("transfer must be 'ideal', a result path or a 2x2 ([re, im]) matrix")


def _hom(cfg: RunConfig, bundle: ResultBundle):
    p = cfg.params
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        pair = HomPairParams(
            EmitterParams(gamma=_positive(p, "gamma1"), gamma_d=_nonneg(p, "gamma_d1")),
            EmitterParams(gamma=_positive(p, "gamma2"), gamma_d=_nonneg(p, "gamma_d2")),
            float(p["detuning_uev"]),
            _positive(p, "period"),
            _transfer_from(p["transfer"]),
        )
    tau = _tau_grid(p)
    res = hom_result(pair, tau)
    dis = hom_result(pair.distinguishable(), tau)
    bundle.traces["hom"] = {"tau": tau, "model": res.density}
    bundle.traces["hom_distinguishable"] = {"tau": tau, "model": dis.density}
    rep = {
        "g2_zero": res.g2_zero,
        "g2_zero_distinguishable": res.g2_distinguishable,
        "visibility": res.visibility,
        "warnings": [str(w.message) for w in caught],
    }
    if p["oracle"]:
        rep["oracle_g2_zero"] = oracle_g2_zero(pair)
    if p["target_visibility"] is not None:
        rep["gamma_d_for_target_visibility"] = dephasing_for_visibility(
            float(p["target_visibility"]), pair.first.gamma, pair.second.gamma,
            pair.detuning_uev, pair.transfer,
        )
    bundle.report["hom"] = rep


RUNNERS: dict[str, Callable] = {
    "simulate-g2": _simulate_g2,
    "oracle-g2": _oracle_g2,
    "fit": _fit,
    "single-dot-fit": _single_dot_fit,
    "hologram": _hologram,
    "wavefront-match": _wavefront_match,
    "hom": _hom,
}


def run_scenario(config: RunConfig) -> ResultBundle:
    """Run one scenario; the result is a function of the config alone."""
    bundle = ResultBundle(config.echo(), __version__, config.seed)
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        RUNNERS[config.scenario](config, bundle)
    msgs = sorted({f"{w.category.__name__}: {w.message}" for w in caught})
    if msgs:
        bundle.report["warnings"] = msgs
    bundle.timing = {"wall_seconds": time.perf_counter() - t0}
    return bundle


def emit_plotdata(bundle: ResultBundle, directory) -> list:
    """One CSV per trace with columns tau, data, model, residual (those present)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    for name, cols in bundle.traces.items():
        table = {"tau": cols["tau"]}
        for key in ("data", "model"):
            if key in cols:
                table[key] = cols[key]
        if "data" in cols and "model" in cols:
            table["residual"] = np.asarray(cols["data"]) - np.asarray(cols["model"])
        out.append(save_table(d / f"plot_{name}.csv", table))
    return out


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _yaml_value(text):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qdinterference", description="Multi-emitter photon correlation toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, defaults in DEFAULTS.items():
        sp = sub.add_parser(name, help=f"run the {name} scenario")
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="random seed (default 0)")
        sp.add_argument("--output", "-o", help="output directory")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a parameter (value parsed as YAML)")
        for key, val in defaults.items():
            sp.add_argument(f"--{key.replace('_', '-')}", dest=f"param_{key}", default=None,
                            metavar="VALUE", help=f"default: {val!r}")
    ep = sub.add_parser("emit-plotdata", help="write plot-ready tables from a result directory")
    ep.add_argument("bundle", help="result directory of a previous run")
    ep.add_argument("--output", "-o", help="directory for the plot files (default: bundle)")
    return parser


def _overrides(args) -> dict:
    out = {}
    for k, v in vars(args).items():
        if k.startswith("param_") and v is not None:
            out[k[len("param_"):]] = _yaml_value(v)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        out[key.strip().replace("-", "_")] = _yaml_value(val)
    return out


def _error_record(exc: BaseException, code: int, command) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code,
                       "command": command}, sort_keys=True)


def main(argv=None) -> int:
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        if command is None:
            raise ConfigError("no subcommand given; see --help")
        if command == "emit-plotdata":
            bundle = ResultBundle.read(args.bundle)
            paths = emit_plotdata(bundle, args.output or args.bundle)
            print(json.dumps({"written": [str(p) for p in paths]}, indent=2))
            return 0
        file_cfg = load_config(args.config) if args.config else {}
        cfg = RunConfig.from_sources(command, file_cfg, _overrides(args), args.seed, args.output)
        bundle = run_scenario(cfg)
        if cfg.output:
            bundle.write(cfg.output)
        print(dump_json({"scenario": command, "output": cfg.output, "report": bundle.report}), end="")
        return 0
    except (QDIError, ZeroDivisionError, ArithmeticError, np.linalg.LinAlgError, OSError) as exc:
        if isinstance(exc, QDIError):
            code = exc.exit_code
        elif isinstance(exc, OSError):
            code = 2
        else:
            code = 3
        print(_error_record(exc, code, command), file=sys.stderr)
        return code


def entry_point():  # pragma: no cover - console script shim
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    entry_point()
