"""
Coincidence-histogram normalization and joint reduced-chi^2 fitting of the
analytic g2 model across several datasets.

A joint fit shares some parameters (typically the dephasing rate) between
all datasets while every dataset keeps its own detunings, amplitude and
background.  The optimizer is a deterministic multi-start: Sobol-spread
starting points, a bounded Powell search from each, and a trust-region
least-squares polish.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import curve_fit, least_squares, minimize
from scipy.signal import find_peaks
from scipy.stats import qmc

from .correlation import AnalyticG2Params, g2_model
from .dynamics import CorrelationTrace
from .errors import DataError, FitError, GridError

logger = logging.getLogger(__name__)

THREADS_ENV = "QDINTERFERENCE_THREADS"


class ParameterAtBoundWarning(UserWarning):
    pass


class SingularCurvatureWarning(UserWarning):
    pass


@dataclass
class CoincidenceHistogram:
    """Start-stop coincidence counts on uniform delay bins (ns)."""

    bin_centers: np.ndarray
    counts: np.ndarray
    bin_width: float | None = None
    label: str = ""

    def __post_init__(self):
        self.bin_centers = np.asarray(self.bin_centers, dtype=float)
        counts = np.asarray(self.counts)
        if counts.shape != self.bin_centers.shape or counts.ndim != 1:
            raise DataError("bin_centers and counts must be 1-D and equal length")
        if counts.size and np.any(counts < 0):
            raise DataError("counts must be non-negative")
        if counts.size and not np.all(np.equal(np.mod(counts, 1), 0)):
            raise DataError("counts must be integers")
        self.counts = counts.astype(np.int64)
        if self.bin_centers.size > 1:
            d = np.diff(self.bin_centers)
            w = float(d.mean())
            if w <= 0 or np.any(np.abs(d - w) > 1e-6 * w):
                raise GridError("histogram bins must be uniform and increasing")
            if self.bin_width is None:
                self.bin_width = w
        if self.bin_width is None:
            raise DataError("bin_width required for a single-bin histogram")


def normalize_histogram(hist: CoincidenceHistogram, baseline_window) -> CorrelationTrace:
    """Divide counts by the mean count of the bins whose |tau| lies inside
    ``baseline_window = (tau_min, tau_max)``.

    Per-bin errors combine Poisson noise of the bin with the uncertainty of
    the baseline mean in quadrature.  Empty bins get the one-count error.
    """
    lo, hi = baseline_window
    at = np.abs(hist.bin_centers)
    sel = (at >= lo) & (at <= hi)
    n_win = int(sel.sum())
    if n_win < 20:
        raise DataError(f"baseline window {baseline_window} holds {n_win} bins (< 20)")
    total = hist.counts[sel].sum()
    if total <= 0:
        raise DataError("baseline window has zero counts")
    mean = total / n_win
    c = hist.counts.astype(float)
    g2 = c / mean
    sigma = np.sqrt(np.maximum(c, 1.0) / mean**2 + g2**2 / total)
    return CorrelationTrace(hist.bin_centers.copy(), g2, sigma)


def _envelope(t, a, b):
    return a * np.exp(-b * t)


def _damped_beat(t, a, b, amp, decay, omega, phase):
    return a * np.exp(-b * t) + amp * np.exp(-decay * t) * np.cos(omega * t + phase)


def beat_frequency_estimate(trace: CorrelationTrace, min_periods=1.0):
    """Dominant beat angular frequency (rad/ns) of a g2 trace, or None.

    The non-negative-delay half is detrended with a single exponential, the
    residual spectrum seeds a damped-cosine fit, and the beat is accepted only
    if the data span at least two periods and at least ``min_periods`` periods
    fit inside the part of the envelope that stays above three times the
    residual noise.
    """
    if not trace.is_uniform():
        raise GridError("beat estimate requires a uniform grid")
    m = trace.tau >= 0
    if m.sum() < 16:
        return None
    t = trace.tau[m] - trace.tau[m][0]
    y = trace.g2[m] - trace.g2[m][int(0.8 * m.sum()) :].mean()
    dt = t[1] - t[0]
    try:
        pe, _ = curve_fit(_envelope, t, y, p0=[y[0], 1.0], maxfev=5000)
    except RuntimeError:
        pe = np.array([y[0], 1.0])
    resid = y - _envelope(t, *pe)
    nfft = 16 * t.size
    spec = np.abs(np.fft.rfft(resid, nfft))
    omega = 2 * np.pi * np.fft.rfftfreq(nfft, dt)
    peaks, _ = find_peaks(spec)
    peaks = peaks[omega[peaks] > 2 * np.pi / t[-1]]
    if peaks.size == 0:
        return None
    best = None
    lower = [-np.inf, 0, 0, 0, 0, -np.pi]
    upper = [np.inf, np.inf, np.inf, np.inf, np.inf, np.pi]
    for i in peaks[np.argsort(spec[peaks])[::-1][:3]]:
        p0 = [pe[0], max(pe[1], 1e-3), np.abs(resid).max(), 2.0, omega[i], 0.0]
        try:
            p, _ = curve_fit(_damped_beat, t, y, p0=p0, bounds=(lower, upper), maxfev=5000)
        except (RuntimeError, ValueError):
            continue
        sse = float(np.sum((y - _damped_beat(t, *p)) ** 2))
        if best is None or sse < best[0]:
            best = (sse, p)
    if best is None:
        return None
    sse, p = best
    amp, decay, w = p[2], p[3], p[4]
    if w <= 0 or w * t[-1] < 4 * np.pi:
        return None
    noise = max(math.sqrt(sse / t.size), 1e-3 * amp)
    if amp <= 3 * noise:
        return None
    t_env = min(math.log(amp / (3 * noise)) / decay if decay > 0 else t[-1], t[-1])
    if w * t_env / (2 * np.pi) < min_periods:
        return None
    return float(w)


# ---------------------------------------------------------------------------
# joint fitting
# ---------------------------------------------------------------------------


@dataclass
class Param:
    """A fit parameter: starting value, bounds and whether it is held fixed.

    ``spread`` limits the Sobol multi-start box to value +- spread (clipped to
    the bounds); None spreads starts over the full bounds.
    """

    value: float
    lower: float = -np.inf
    upper: float = np.inf
    fixed: bool = False
    spread: float | None = None


@dataclass
class DatasetSpec:
    """One dataset and its model template.

    ``model(tau, **params)`` receives the shared parameters and this
    dataset's own parameters by name.
    """

    trace: CorrelationTrace
    model: Callable[..., np.ndarray]
    params: dict = field(default_factory=dict)
    label: str = ""


@dataclass
class FitSpec:
    datasets: list
    shared: dict = field(default_factory=dict)
    n_starts: int = 16
    seed: int = 0
    maxfev_search: int = 1500
    threads: int | None = None


@dataclass
class FitResult:
    values: dict
    errors: dict
    chi2: float
    chi2_red: float
    dof: int
    n_free: int
    converged: bool
    message: str
    start_chi2: list
    at_bound: list
    shared_names: list
    dataset_names: list
    error_method: str = "curvature"
    bootstrap_errors: dict | None = None
    jacobian: np.ndarray | None = field(default=None, repr=False)
    free_names: list = field(default_factory=list, repr=False)
    _problem: object = field(default=None, repr=False)

    def dataset_values(self, index: int) -> dict:
        """Shared and per-dataset values as the model of dataset ``index`` sees them."""
        out = {k: self.values[k] for k in self.shared_names}
        for local, full in self.dataset_names[index].items():
            out[local] = self.values[full]
        return out

    def report(self) -> dict:
        return {
            "values": dict(self.values),
            "errors": dict(self.errors),
            "bootstrap_errors": self.bootstrap_errors,
            "error_method": self.error_method,
            "chi2": self.chi2,
            "chi2_red": self.chi2_red,
            "dof": self.dof,
            "n_free": self.n_free,
            "converged": self.converged,
            "message": self.message,
            "start_chi2": list(self.start_chi2),
            "at_bound": list(self.at_bound),
            "shared": list(self.shared_names),
        }


class _Problem:
    """Flattened view of a FitSpec: free-parameter vector <-> named values."""

    def __init__(self, spec: FitSpec):
        if not spec.datasets:
            raise DataError("fit needs at least one dataset")
        self.spec = spec
        self.entries = []  # (full_name, Param)
        self.shared_names = list(spec.shared)
        for name, p in spec.shared.items():
            self.entries.append((name, p))
        self.dataset_names = []
        for i, ds in enumerate(spec.datasets):
            tag = ds.label or str(i)
            names = {}
            for name, p in ds.params.items():
                if name in spec.shared:
                    raise DataError(f"parameter {name!r} is both shared and per-dataset")
                full = f"{name}[{tag}]"
                names[name] = full
                self.entries.append((full, p))
            self.dataset_names.append(names)
        full_names = [n for n, _ in self.entries]
        if len(set(full_names)) != len(full_names):
            raise DataError("duplicate parameter names; give datasets unique labels")
        self.free = [(n, p) for n, p in self.entries if not p.fixed]
        for n, p in self.free:
            if not (math.isfinite(p.lower) and math.isfinite(p.upper) and p.lower < p.upper):
                raise DataError(f"free parameter {n!r} needs finite bounds lower < upper")
        self.lower = np.array([p.lower for _, p in self.free])
        self.upper = np.array([p.upper for _, p in self.free])
        self.x_init = np.clip([p.value for _, p in self.free], self.lower, self.upper)
        self.data = []
        for ds in spec.datasets:
            tr = ds.trace
            sig = tr.sigma if tr.sigma is not None else np.ones(len(tr))
            if np.any(sig <= 0):
                raise DataError("all sigma values must be > 0 for chi^2 fitting")
            self.data.append((tr.tau, tr.g2, sig))
        self.n_points = sum(len(d[0]) for d in self.data)
        self._cache = [None] * len(spec.datasets)

    @property
    def free_names(self):
        return [n for n, _ in self.free]

    def values(self, x) -> dict:
        vals = {n: float(p.value) for n, p in self.entries}
        for (n, _), v in zip(self.free, x):
            vals[n] = float(v)
        return vals

    def dataset_kwargs(self, vals, i):
        kw = {n: vals[n] for n in self.shared_names}
        for local, full in self.dataset_names[i].items():
            kw[local] = vals[full]
        return kw

    def residuals(self, x, use_cache=True) -> np.ndarray:
        vals = self.values(x)
        parts = []
        for i, (ds, (tau, g2, sig)) in enumerate(zip(self.spec.datasets, self.data)):
            kw = self.dataset_kwargs(vals, i)
            key = tuple(sorted(kw.items()))
            cached = self._cache[i] if use_cache else None
            if cached is not None and cached[0] == key:
                parts.append(cached[1])
                continue
            r = (g2 - ds.model(tau, **kw)) / sig
            if use_cache:
                self._cache[i] = (key, r)
            parts.append(r)
        return np.concatenate(parts)

    def chi2(self, x) -> float:
        r = self.residuals(x)
        v = float(r @ r)
        return v if math.isfinite(v) else 1e300


def _thread_count(spec: FitSpec) -> int:
    if spec.threads:
        return max(1, int(spec.threads))
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _start_points(problem: _Problem, n_starts: int, seed: int) -> np.ndarray:
    d = len(problem.free)
    starts = [problem.x_init]
    if n_starts > 1 and d > 0:
        sob = qmc.Sobol(d, scramble=True, seed=seed)
        u = sob.random(int(2 ** math.ceil(math.log2(n_starts - 1))))[: n_starts - 1]
        lo = problem.lower.copy()
        hi = problem.upper.copy()
        for j, (_, p) in enumerate(problem.free):
            if p.spread is not None:
                lo[j] = max(lo[j], problem.x_init[j] - p.spread)
                hi[j] = min(hi[j], problem.x_init[j] + p.spread)
        starts.extend(lo + u * (hi - lo))
    return np.array(starts)


def _local_fit(spec: FitSpec, x0: np.ndarray):
    # each worker owns its problem so the residual cache is never shared
    problem = _Problem(spec)
    if len(problem.free) == 0:
        return x0, problem.chi2(x0), True, "no free parameters", None
    scale = problem.upper - problem.lower

    def objective(z):
        return problem.chi2(problem.lower + z * scale)

    z0 = (x0 - problem.lower) / scale
    search = minimize(
        objective,
        z0,
        method="Powell",
        bounds=[(0.0, 1.0)] * len(z0),
        options={"maxfev": spec.maxfev_search, "xtol": 1e-4, "ftol": 1e-8},
    )
    x1 = np.clip(problem.lower + search.x * scale, problem.lower, problem.upper)
    if not np.all(np.isfinite(problem.residuals(x1))):
        return x1, math.inf, False, "non-finite residuals", None
    polish = least_squares(
        problem.residuals,
        x1,
        bounds=(problem.lower, problem.upper),
        method="trf",
        x_scale=scale,
        xtol=1e-12,
        ftol=1e-12,
        gtol=1e-12,
        max_nfev=200 * (len(x1) + 1),
    )
    x = polish.x
    return x, float(2 * polish.cost), polish.status > 0, polish.message, polish.jac


def _jacobian(problem: _Problem, x: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian of the weighted residuals, stepping inward at bounds."""
    scale = problem.upper - problem.lower
    jac = np.empty((problem.n_points, x.size))
    for j in range(x.size):
        h = 1e-6 * max(abs(x[j]), scale[j] * 1e-3, 1e-8)
        xp, xm = x.copy(), x.copy()
        if x[j] + h > problem.upper[j]:
            xp[j], xm[j] = x[j], x[j] - 2 * h
            span = 2 * h
        elif x[j] - h < problem.lower[j]:
            xp[j], xm[j] = x[j] + 2 * h, x[j]
            span = 2 * h
        else:
            xp[j] += h
            xm[j] -= h
            span = 2 * h
        jac[:, j] = (problem.residuals(xp, False) - problem.residuals(xm, False)) / span
    return jac


def joint_fit(spec: FitSpec, bootstrap=0) -> FitResult:
    """Minimize the summed chi^2 of all datasets and report reduced chi^2,
    values and curvature-matrix standard errors.

    Raises FitError if no start converges.
    """
    problem = _Problem(spec)
    starts = _start_points(problem, spec.n_starts, spec.seed)
    n_threads = _thread_count(spec)
    if n_threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            runs = list(pool.map(lambda s: _local_fit(spec, s), starts))
    else:
        runs = [_local_fit(spec, s) for s in starts]
    ok = [r for r in runs if r[2]]
    if not ok:
        raise FitError(
            f"no converged start out of {len(runs)}: " + "; ".join(str(r[3]) for r in runs[:3])
        )
    best_i = min(range(len(runs)), key=lambda i: (not runs[i][2], runs[i][1], i))
    x, chi2, _, message, _ = runs[best_i]
    n_free = len(problem.free)
    dof = problem.n_points - n_free
    if dof <= 0:
        raise FitError(f"{problem.n_points} points for {n_free} free parameters")
    at_bound = []
    for (name, p), v in zip(problem.free, x):
        tol = 1e-6 * (p.upper - p.lower)
        if v - p.lower <= tol or p.upper - v <= tol:
            at_bound.append(name)
    if at_bound:
        warnings.warn(f"parameters at bounds: {', '.join(at_bound)}", ParameterAtBoundWarning)
    result = FitResult(
        values=problem.values(x),
        errors={},
        chi2=chi2,
        chi2_red=chi2 / dof,
        dof=dof,
        n_free=n_free,
        converged=True,
        message=str(message),
        start_chi2=[float(r[1]) for r in runs],
        at_bound=at_bound,
        shared_names=list(problem.shared_names),
        dataset_names=list(problem.dataset_names),
        jacobian=_jacobian(problem, x) if n_free else None,
        free_names=problem.free_names,
        _problem=problem,
    )
    result.errors = param_errors(result, bootstrap=bootstrap, seed=spec.seed)
    return result


def _bootstrap(result: FitResult, n_resamples: int, seed: int) -> dict:
    """Parametric bootstrap: resample data around the best-fit model and refit
    locally from the best-fit point."""
    problem: _Problem = result._problem
    rng = np.random.default_rng(seed)
    x_best = np.array([result.values[n] for n in problem.free_names])
    best_vals = result.values
    models = [
        ds.model(tau, **problem.dataset_kwargs(best_vals, i))
        for i, (ds, (tau, _, _)) in enumerate(zip(problem.spec.datasets, problem.data))
    ]
    samples = []
    for _ in range(n_resamples):
        datasets = []
        for ds, m, (tau, _, sig) in zip(problem.spec.datasets, models, problem.data):
            noisy = np.clip(m + rng.normal(0.0, sig), 0.0, None)
            datasets.append(
                DatasetSpec(CorrelationTrace(tau, noisy, sig), ds.model, ds.params, ds.label)
            )
        sub = _Problem(FitSpec(datasets, problem.spec.shared))
        fit = least_squares(
            sub.residuals, x_best, bounds=(sub.lower, sub.upper), method="trf",
            x_scale=sub.upper - sub.lower,
        )
        samples.append(fit.x)
    sd = np.std(np.array(samples), axis=0, ddof=1)
    return dict(zip(problem.free_names, map(float, sd)))


def param_errors(result: FitResult, bootstrap=0, seed=0, scale_by_chi2=False) -> dict:
    """Standard errors from the inverse curvature matrix (J^T J)^-1 of the
    weighted residuals at the optimum.

    With ``bootstrap > 0`` a parametric bootstrap of that many resamples is
    stored in ``result.bootstrap_errors``; it replaces the curvature errors if
    the curvature matrix is singular.
    """
    if not result.converged:
        raise FitError("errors are only defined for a converged fit")
    names = result.free_names
    if not names:
        return {}
    jac = result.jacobian
    curv = jac.T @ jac
    errors = None
    try:
        cond = np.linalg.cond(curv)
        if not math.isfinite(cond) or cond > 1e14:
            raise np.linalg.LinAlgError(f"condition number {cond:.3g}")
        cov = np.linalg.inv(curv)
        if scale_by_chi2:
            cov = cov * result.chi2_red
        diag = np.diag(cov)
        if np.any(diag < 0):
            raise np.linalg.LinAlgError("negative variance")
        errors = dict(zip(names, map(float, np.sqrt(diag))))
        result.error_method = "curvature"
    except np.linalg.LinAlgError as exc:
        warnings.warn(f"singular curvature matrix ({exc}); using bootstrap", SingularCurvatureWarning)
        bootstrap = max(bootstrap, 100)
    if bootstrap:
        result.bootstrap_errors = _bootstrap(result, bootstrap, seed)
        if errors is None:
            errors = dict(result.bootstrap_errors)
            result.error_method = "bootstrap"
    return errors


# ---------------------------------------------------------------------------
# model templates
# ---------------------------------------------------------------------------


class G2Template:
    """a * (IRF (*) g2_analytic) + c for N equal-brightness emitters.

    Emitters share one pure dephasing rate and one fixed gamma + gamma_p.
    Detunings are frequencies relative to emitter 1: ``delta`` for N = 2,
    ``delta_2 .. delta_N`` otherwise.
    """

    def __init__(self, n: int, rate_sum: float, irf_fwhm: float = 0.0):
        if n < 1:
            raise DataError("N must be >= 1")
        self.n = n
        self.rate_sum = float(rate_sum)
        self.irf_fwhm = float(irf_fwhm)

    @property
    def detuning_names(self) -> list:
        if self.n == 1:
            return []
        if self.n == 2:
            return ["delta"]
        return [f"delta_{k}" for k in range(2, self.n + 1)]

    def omegas(self, params: Mapping) -> np.ndarray:
        return np.array([0.0] + [params[k] for k in self.detuning_names])

    def __call__(self, tau, gamma_d=0.0, amplitude=1.0, offset=0.0, **detunings):
        p = AnalyticG2Params.from_rates(self.rate_sum, gamma_d, self.omegas(detunings))
        return amplitude * g2_model(p, tau, self.irf_fwhm) + offset


class AntibunchingTemplate:
    """a * (IRF (*) (1 - exp(-rate_sum |tau|))) + c for a single emitter."""

    def __init__(self, irf_fwhm: float = 0.0):
        self.irf_fwhm = float(irf_fwhm)

    def __call__(self, tau, rate_sum=1.0, amplitude=1.0, offset=0.0):
        p = AnalyticG2Params.from_rates(rate_sum, 0.0, [0.0])
        return amplitude * g2_model(p, tau, self.irf_fwhm) + offset


def nuisance_params(amplitude=True, offset=True) -> dict:
    return {
        "amplitude": Param(1.0, 0.5, 1.5, fixed=not amplitude, spread=0.1),
        "offset": Param(0.0, -0.5, 0.5, fixed=not offset, spread=0.1),
    }


def fit_single_emitter(trace: CorrelationTrace, irf_fwhm=0.0, rate_bounds=(0.05, 50.0),
                       n_starts=8, seed=0) -> FitResult:
    """Fit gamma + gamma_p (``rate_sum``) to a single-emitter antibunching trace."""
    params = {"rate_sum": Param(math.sqrt(rate_bounds[0] * rate_bounds[1]), *rate_bounds)}
    params.update(nuisance_params())
    spec = FitSpec([DatasetSpec(trace, AntibunchingTemplate(irf_fwhm), params, "single")],
                   n_starts=n_starts, seed=seed)
    return joint_fit(spec)


def _scan_detuning(trace, template, gamma_d_guess, bounds, n_grid=161):
    """Coarse chi^2 scan over the N=2 detuning with nuisances at their defaults."""
    sig = trace.sigma if trace.sigma is not None else np.ones(len(trace))
    grid = np.linspace(bounds[0], bounds[1], n_grid)
    chi = [np.sum(((trace.g2 - template(trace.tau, gamma_d=gamma_d_guess, delta=d)) / sig) ** 2)
           for d in grid]
    return float(grid[int(np.argmin(chi))])


def detuning_series_spec(traces: Sequence[CorrelationTrace], rate_sum: float, irf_fwhm: float,
                         gamma_d_bounds=(0.0, 20.0), delta_bounds=(0.0, 60.0),
                         gamma_d_guess=2.0, labels=None, n_starts=16, seed=0) -> FitSpec:
    """FitSpec for two-emitter traces at several detunings with a shared gamma_d.

    Each detuning starts from the beat-frequency estimate when a beat is
    detected, otherwise from a coarse chi^2 scan.
    """
    template = G2Template(2, rate_sum, irf_fwhm)
    datasets = []
    for i, tr in enumerate(traces):
        est = beat_frequency_estimate(tr)
        if est is None or not (delta_bounds[0] <= est <= delta_bounds[1]):
            est = _scan_detuning(tr, template, gamma_d_guess, delta_bounds)
        span = 0.05 * (delta_bounds[1] - delta_bounds[0])
        params = {"delta": Param(est, *delta_bounds, spread=span)}
        params.update(nuisance_params())
        label = labels[i] if labels else str(i)
        datasets.append(DatasetSpec(tr, template, params, label))
    shared = {"gamma_d": Param(gamma_d_guess, *gamma_d_bounds)}
    return FitSpec(datasets, shared, n_starts=n_starts, seed=seed)


def n_scaling_spec(traces: Sequence[CorrelationTrace], ns: Sequence[int], rate_sum: float,
                   irf_fwhm: float, gamma_d_bounds=(0.0, 20.0), gamma_d_guess=2.0,
                   n_starts=16, seed=0) -> FitSpec:
    """FitSpec for N-emitter common-mode traces (detunings held at zero)."""
    datasets = []
    for tr, n in zip(traces, ns):
        template = G2Template(n, rate_sum, irf_fwhm)
        params = {name: Param(0.0, fixed=True) for name in template.detuning_names}
        params.update(nuisance_params())
        datasets.append(DatasetSpec(tr, template, params, f"N{n}"))
    shared = {"gamma_d": Param(gamma_d_guess, *gamma_d_bounds)}
    return FitSpec(datasets, shared, n_starts=n_starts, seed=seed)
