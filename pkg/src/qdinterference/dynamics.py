"""
Lindblad dynamics of N independent two-level emitters and quantum-regression
correlation functions.

Each emitter k has a Hamiltonian omega_k * sigma+ sigma- (rotating frame) and
three dissipators: decay sigma- at gamma, incoherent pumping sigma+ at
gamma_p and pure dephasing sigma+ sigma- at gamma_d.  The composite generator
is the Kronecker sum of the single-emitter generators, so it is never built
densely; it acts on the reshaped density tensor one emitter at a time.

Conventions
-----------
* time in ns, rates in ns^-1, angular frequencies in rad/ns.
* single-emitter basis: index 0 = |g>, index 1 = |e>.
* density matrices are vectorized row-major, vec(A rho B) = (A kron B^T) vec(rho).
* emitter 0 is the most significant factor of the product basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .errors import DataError, DimensionError, NumericalError, ZeroIntensityError

MAX_EMITTERS = 8

SIGMA_MINUS = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.T.copy()
NUMBER = SIGMA_PLUS @ SIGMA_MINUS
_ID2 = np.eye(2, dtype=complex)

RTOL = 1e-8
ATOL = 1e-10


@dataclass(frozen=True)
class EmitterParams:
    """Rates and frequency of one two-level emitter.

    Parameters
    ----------
    omega : float
        Angular frequency offset from a common rotating frame [rad/ns].
    gamma : float
        Radiative decay rate [1/ns].
    gamma_p : float
        Incoherent pump rate [1/ns].
    gamma_d : float
        Pure dephasing rate [1/ns] (Lindblad rate of the sigma+ sigma- dissipator).
    """

    omega: float = 0.0
    gamma: float = 1.0
    gamma_p: float = 0.0
    gamma_d: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.omega):
            raise DataError(f"omega must be finite, got {self.omega}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise DataError(f"gamma must be > 0, got {self.gamma}")
        if not (self.gamma_p >= 0 and math.isfinite(self.gamma_p)):
            raise DataError(f"gamma_p must be >= 0, got {self.gamma_p}")
        if not (self.gamma_d >= 0 and math.isfinite(self.gamma_d)):
            raise DataError(f"gamma_d must be >= 0, got {self.gamma_d}")

    @property
    def rate_sum(self) -> float:
        """gamma + gamma_p, the population relaxation rate."""
        return self.gamma + self.gamma_p

    @property
    def coherence_decay(self) -> float:
        """Decay rate of <sigma+> under CW conditions: (gamma + gamma_p + gamma_d) / 2."""
        return 0.5 * (self.gamma + self.gamma_p + self.gamma_d)


@dataclass(frozen=True)
class EnsembleConfig:
    """Emitters plus the complex weights w_k of the collective operator
    sigma_C+ = sum_k w_k sigma_k+.

    ``irf_fwhm`` is the detector response FWHM in ns (0 disables convolution).
    """

    emitters: tuple
    weights: tuple
    irf_fwhm: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "emitters", tuple(self.emitters))
        object.__setattr__(self, "weights", tuple(complex(w) for w in self.weights))
        n = len(self.emitters)
        if n < 1:
            raise DataError("ensemble needs at least one emitter")
        if n > MAX_EMITTERS:
            raise DimensionError(f"N={n} exceeds the cap of {MAX_EMITTERS} emitters")
        if len(self.weights) != n:
            raise DataError(f"{len(self.weights)} weights for {n} emitters")
        if not any(abs(w) > 0 for w in self.weights):
            raise DataError("all collection weights are zero")
        if not (self.irf_fwhm >= 0 and math.isfinite(self.irf_fwhm)):
            raise DataError(f"irf_fwhm must be >= 0, got {self.irf_fwhm}")

    @property
    def n(self) -> int:
        return len(self.emitters)

    @classmethod
    def equal_brightness(cls, emitters, phases=None, intensity=1.0, irf_fwhm=0.0):
        """Weights with N |w_k|^2 n_k^e = intensity, i.e. every emitter
        contributes the same steady-state intensity to the collective mode."""
        emitters = tuple(emitters)
        n = len(emitters)
        if phases is None:
            phases = np.zeros(n)
        weights = []
        for em, ph in zip(emitters, phases):
            n_e, _ = steady_state(em)
            if n_e <= 0:
                raise ZeroIntensityError(
                    "equal brightness needs gamma_p > 0 for every emitter"
                )
            weights.append(math.sqrt(intensity / (n * n_e)) * np.exp(1j * ph))
        return cls(emitters, tuple(weights), irf_fwhm)


@dataclass
class DensityOperator:
    """Density matrix of the 2^N-dimensional product space."""

    matrix: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if self.check:
            self.validate()

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_emitters(self) -> int:
        return int(round(math.log2(self.dim)))

    def validate(self, trace_tol=1e-9, herm_tol=1e-12, eig_tol=1e-9):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DataError(f"density matrix must be square, got {m.shape}")
        d = m.shape[0]
        if d < 2 or d & (d - 1):
            raise DataError(f"dimension {d} is not a power of two")
        if abs(np.trace(m) - 1.0) > trace_tol:
            raise DataError(f"trace {np.trace(m).real:.12g} deviates from 1")
        if np.max(np.abs(m - m.conj().T)) > herm_tol:
            raise DataError("density matrix is not Hermitian")
        if np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() < -eig_tol:
            raise DataError("density matrix has negative eigenvalues")

    def expect(self, op: np.ndarray) -> complex:
        return complex(np.sum(op.T * self.matrix))


def steady_state(emitter: EmitterParams) -> tuple[float, float]:
    """Excited and ground occupations (n_e, n_g) of one emitter."""
    s = emitter.gamma + emitter.gamma_p
    return emitter.gamma_p / s, emitter.gamma / s


def single_emitter_superop(emitter: EmitterParams, omega=None) -> np.ndarray:
    """4x4 Lindbladian of one emitter in the row-major vec convention."""
    w = emitter.omega if omega is None else omega
    sup = -1j * w * (np.kron(NUMBER, _ID2) - np.kron(_ID2, NUMBER.T))
    for op, rate in (
        (SIGMA_MINUS, emitter.gamma),
        (SIGMA_PLUS, emitter.gamma_p),
        (NUMBER, emitter.gamma_d),
    ):
        if rate == 0:
            continue
        od = op.conj().T @ op
        sup += rate * (
            np.kron(op, op.conj()) - 0.5 * np.kron(od, _ID2) - 0.5 * np.kron(_ID2, od.T)
        )
    return sup


def _apply_site(mat4, tensor, k, n):
    x = np.moveaxis(tensor, (k, n + k), (0, 1))
    shape = x.shape
    x = (mat4 @ x.reshape(4, -1)).reshape(shape)
    return np.moveaxis(x, (0, 1), (k, n + k))


class LindbladGenerator:
    """Kronecker-sum generator of N independent emitters.

    The frequencies are shifted to the ensemble mean, which leaves every
    observable that depends on frequency differences unchanged.
    """

    def __init__(self, emitters: Sequence[EmitterParams]):
        emitters = tuple(emitters)
        if len(emitters) > MAX_EMITTERS:
            raise DimensionError(
                f"N={len(emitters)} exceeds the cap of {MAX_EMITTERS} emitters"
            )
        if not emitters:
            raise DataError("generator needs at least one emitter")
        self.emitters = emitters
        self.n = len(emitters)
        self.dim = 2**self.n
        mean_w = float(np.mean([e.omega for e in emitters]))
        self.site_superops = [
            single_emitter_superop(e, e.omega - mean_w) for e in emitters
        ]
        self._prop_cache: dict[float, list] = {}

    def _as_tensor(self, rho):
        return np.asarray(rho, dtype=complex).reshape((2,) * (2 * self.n))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """L(rho) for a 2^N x 2^N (not necessarily physical) operator."""
        t = self._as_tensor(rho)
        out = np.zeros_like(t)
        for k, s in enumerate(self.site_superops):
            out += _apply_site(s, t, k, self.n)
        return out.reshape(self.dim, self.dim)

    def site_propagators(self, t: float) -> list:
        key = float(t)
        props = self._prop_cache.get(key)
        if props is None:
            props = [expm(s * t) for s in self.site_superops]
            if len(self._prop_cache) < 4096:
                self._prop_cache[key] = props
        return props

    def propagate(self, rho: np.ndarray, t: float) -> np.ndarray:
        """exp(L t) rho, exact: product of single-emitter propagators."""
        tens = self._as_tensor(rho)
        for k, p in enumerate(self.site_propagators(t)):
            tens = _apply_site(p, tens, k, self.n)
        return tens.reshape(self.dim, self.dim)

    def dense(self) -> np.ndarray:
        """Full 4^N x 4^N superoperator; only sensible for small N."""
        d = self.dim
        cols = [
            self.apply(np.eye(d * d, dtype=complex)[:, i].reshape(d, d)).ravel()
            for i in range(d * d)
        ]
        return np.array(cols).T


def build_generator(ensemble) -> LindbladGenerator:
    """Generator for an EnsembleConfig (or a plain emitter sequence)."""
    emitters = ensemble.emitters if isinstance(ensemble, EnsembleConfig) else ensemble
    return LindbladGenerator(emitters)


def product_steady_state(emitters: Sequence[EmitterParams]) -> DensityOperator:
    rho = np.ones((1, 1), dtype=complex)
    for e in emitters:
        n_e, n_g = steady_state(e)
        rho = np.kron(rho, np.diag([n_g, n_e]).astype(complex))
    return DensityOperator(rho)


def product_state(occupations: Sequence[float]) -> DensityOperator:
    """Diagonal product state with excited occupations ``occupations``."""
    rho = np.ones((1, 1), dtype=complex)
    for p in occupations:
        rho = np.kron(rho, np.diag([1.0 - p, p]).astype(complex))
    return DensityOperator(rho)


def _evolve_ode(gen: LindbladGenerator, rho0: np.ndarray, t: float, rtol, atol):
    d = gen.dim

    def rhs(_, y):
        return gen.apply(y.reshape(d, d)).ravel()

    sol = solve_ivp(
        rhs, (0.0, t), rho0.ravel(), method="DOP853", rtol=rtol, atol=atol
    )
    if not sol.success:
        raise NumericalError(
            f"integrator failed at t={sol.t[-1]:.6g} ns of {t:.6g} ns after "
            f"{sol.nfev} evaluations: {sol.message}"
        )
    return sol.y[:, -1].reshape(d, d)


def evolve(generator, rho0, t: float, method="ode", rtol=RTOL, atol=ATOL):
    """Evolve a density operator for a time ``t`` ns.

    ``method="ode"`` integrates the master equation with an adaptive
    8th-order Runge-Kutta scheme acting matrix-free on rho;
    ``method="propagator"`` applies the exact single-emitter exponentials.
    """
    if t < 0:
        raise DataError(f"evolution time must be >= 0, got {t}")
    m = rho0.matrix if isinstance(rho0, DensityOperator) else np.asarray(rho0, complex)
    if t == 0:
        out = m.copy()
    elif method == "ode":
        out = _evolve_ode(generator, m, t, rtol, atol)
    elif method == "propagator":
        out = generator.propagate(m, t)
    else:
        raise ValueError(f"unknown method {method!r}")
    if isinstance(rho0, DensityOperator):
        return DensityOperator(0.5 * (out + out.conj().T))
    return out


def site_operator(op: np.ndarray, k: int, n: int) -> np.ndarray:
    """Embed a single-emitter operator acting on emitter k into the N-emitter space."""
    out = np.ones((1, 1), dtype=complex)
    for j in range(n):
        out = np.kron(out, op if j == k else _ID2)
    return out


def collective_raising(weights: Sequence[complex]) -> np.ndarray:
    """sigma_C+ = sum_k w_k sigma_k+."""
    n = len(weights)
    return sum(w * site_operator(SIGMA_PLUS, k, n) for k, w in enumerate(weights))


@dataclass
class CorrelationTrace:
    """g2 values on a strictly increasing delay grid (ns)."""

    tau: np.ndarray
    g2: np.ndarray
    sigma: np.ndarray | None = None

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.g2 = np.asarray(self.g2, dtype=float)
        if self.tau.ndim != 1 or self.tau.shape != self.g2.shape:
            raise DataError("tau and g2 must be 1-D arrays of equal length")
        if self.tau.size > 1 and np.any(np.diff(self.tau) <= 0):
            raise DataError("tau grid must be strictly increasing")
        if not np.all(np.isfinite(self.g2)):
            raise DataError("g2 contains non-finite values")
        if np.any(self.g2 < -1e-9):
            raise DataError(f"g2 must be >= 0 (min {self.g2.min():.3g})")
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float)
            if self.sigma.shape != self.tau.shape:
                raise DataError("sigma must match tau in shape")
            if np.any(self.sigma < 0):
                raise DataError("sigma must be non-negative")

    def __len__(self):
        return self.tau.size

    @property
    def spacing(self) -> float:
        return float(np.median(np.diff(self.tau)))

    def is_uniform(self, rtol=1e-6) -> bool:
        if self.tau.size < 3:
            return True
        d = np.diff(self.tau)
        return bool(np.all(np.abs(d - d.mean()) <= rtol * abs(d.mean())))


def _two_time_correlation(gen, x0, readout, taus):
    out = np.empty(len(taus), dtype=complex)
    ro_t = readout.T
    for i, t in enumerate(taus):
        xt = x0 if t == 0 else gen.propagate(x0, t)
        out[i] = np.sum(ro_t * xt)
    return out


def _check_method(method):
    if method not in ("propagator", "ode"):
        raise ValueError(f"unknown method {method!r}")


def _correlate(gen, rho_ss, raise_a, raise_b, taus, method):
    """<A+(0) B+(t) B-(t) A-(0)> for t in taus (t >= 0), by quantum regression."""
    x0 = raise_a.conj().T @ rho_ss @ raise_a
    readout = raise_b @ raise_b.conj().T
    if method == "propagator":
        return _two_time_correlation(gen, x0, readout, taus).real
    order = np.argsort(taus)
    d = gen.dim
    sorted_t = np.asarray(taus, float)[order]
    if sorted_t[-1] == 0:
        return np.full(len(taus), np.sum(readout.T * x0).real)
    sol = solve_ivp(
        lambda _, y: gen.apply(y.reshape(d, d)).ravel(),
        (0.0, float(sorted_t[-1])),
        x0.ravel(),
        method="DOP853",
        t_eval=sorted_t,
        rtol=RTOL,
        atol=ATOL,
    )
    if not sol.success:
        raise NumericalError(f"regression integration failed: {sol.message}")
    vals = np.array([np.sum(readout.T * y.reshape(d, d)) for y in sol.y.T])
    out = np.empty(len(taus))
    out[order] = vals.real
    return out


def g2_oracle(ensemble: EnsembleConfig, tau_grid, method="propagator") -> CorrelationTrace:
    """Normalized common-mode g2(tau) from the full master equation.

    The steady state is collapsed with sigma_C- . sigma_C+, evolved under the
    generator and read out with sigma_C+ sigma_C-; the result is divided by
    I0^2 with I0 = <sigma_C+ sigma_C->_ss.  Negative delays use |tau| (the
    single-detector autocorrelation is even).
    """
    _check_method(method)
    tau = np.asarray(tau_grid, dtype=float)
    gen = build_generator(ensemble)
    rho = product_steady_state(ensemble.emitters).matrix
    sp = collective_raising(ensemble.weights)
    i0 = np.sum((sp @ sp.conj().T).T * rho).real
    if i0 <= 1e-300:
        raise ZeroIntensityError("collective mode has zero steady-state intensity")
    g = _correlate(gen, rho, sp, sp, np.abs(tau), method) / i0**2
    g[(g < 0) & (g > -1e-9)] = 0.0
    return CorrelationTrace(tau, g)


def cross_correlation_oracle(
    ensemble: EnsembleConfig, weights_b1, weights_b2, tau_grid, method="propagator"
) -> CorrelationTrace:
    """Normalized cross-correlation between two collective modes.

    tau > 0 means the port-2 detection follows the port-1 detection:
    <B1+(0) B2+(tau) B2-(tau) B1-(0)> / (I_B1 I_B2).  For tau < 0 the roles of
    the ports are exchanged, so swapping the weight vectors mirrors the trace.
    """
    _check_method(method)
    n = ensemble.n
    if len(weights_b1) != n or len(weights_b2) != n:
        raise DataError("port weight vectors must have one entry per emitter")
    tau = np.asarray(tau_grid, dtype=float)
    gen = build_generator(ensemble)
    rho = product_steady_state(ensemble.emitters).matrix
    b1 = collective_raising(weights_b1)
    b2 = collective_raising(weights_b2)
    intens = []
    for port, b in (("b1", b1), ("b2", b2)):
        i = np.sum((b @ b.conj().T).T * rho).real
        if i <= 1e-300:
            raise ZeroIntensityError(f"port {port} has zero steady-state intensity")
        intens.append(i)
    out = np.empty(tau.size)
    pos = tau >= 0
    if pos.any():
        out[pos] = _correlate(gen, rho, b1, b2, tau[pos], method)
    if (~pos).any():
        out[~pos] = _correlate(gen, rho, b2, b1, -tau[~pos], method)
    out /= intens[0] * intens[1]
    out[(out < 0) & (out > -1e-9)] = 0.0
    return CorrelationTrace(tau, out)
