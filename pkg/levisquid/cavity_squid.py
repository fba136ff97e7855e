"""
    Flux-tunable microwave resonator: complex reflection model and fit,
    SQUID inductance versus bias flux, the participation tuning model and
    flux responsivity s_w. Rates and frequencies are angular internally;
    flux biases are in units of the flux quantum; s_w is in Hz per flux
    quantum.
"""

from __future__ import annotations
from .errors import (
    ExtrapolationError, FitError, InitializationError, NearSingularityError,
    SlopeRangeError, dert, tert, vert,
)
from .interfaces import TuningModelProtocol
from dataclasses import dataclass, field
from scipy import constants, optimize
import logging
import numpy as np


logger = logging.getLogger(__name__)

PHI0 = constants.physical_constants['mag. flux quantum'][0]
EPS_GAP = 1e-3
MIN_TRACE_POINTS = 20
MIN_TRACE_LINEWIDTHS = 3
MAX_FIT_EVALUATIONS = 200
BETA_L_TOLERANCE = 0.2


@dataclass
class CavityParams:
    """Resonator state. resonance and the kappas are angular (rad/s)."""
    resonance: float = field()
    kappa_int: float = field()
    kappa_ext: float = field()
    s_w: float = field(default=0.0)
    bias_flux: float = field(default=0.0)
    nr: float = field(default=0.0)

    def __post_init__(self) -> None:
        dert(self.kappa_int >= 0 and self.kappa_ext >= 0, 'decay rates must be >= 0')
        dert(self.nr >= 0, 'nr must be >= 0')

    @property
    def kappa_tot(self) -> float:
        return self.kappa_int + self.kappa_ext

    def to_dict(self) -> dict:
        return {
            'resonance_Hz': self.resonance / (2 * np.pi),
            'kappa_int_Hz': self.kappa_int / (2 * np.pi),
            'kappa_ext_Hz': self.kappa_ext / (2 * np.pi),
            'kappa_tot_Hz': self.kappa_tot / (2 * np.pi),
            's_w_Hz_per_Phi0': self.s_w,
            'bias_flux_Phi0': self.bias_flux,
            'nr': self.nr,
        }


@dataclass
class SquidParams:
    """Two-junction SQUID and the lumped resonator it terminates."""
    critical_current: float = field(default=0.5e-6)
    loop_inductance: float = field(default=0.12e-9)
    beta_L: float = field(default=0.06)
    resonator_inductance: float = field(default=1.4e-9)
    resonator_capacitance: float = field(default=310e-15)
    effective_area: float = field(default=56e-6**2)

    def __post_init__(self) -> None:
        dert(self.critical_current > 0, 'critical_current must be > 0')
        dert(self.loop_inductance > 0, 'loop_inductance must be > 0')
        implied = 2 * self.loop_inductance * self.critical_current / PHI0
        vert(abs(implied - self.beta_L) <= BETA_L_TOLERANCE * self.beta_L,
             f'beta_L={self.beta_L} inconsistent with 2 Ls Ic / Phi0 = {implied:.4f}')

    @property
    def sweet_spot_inductance(self) -> float:
        """Parallel Josephson inductance of the pair at zero bias."""
        return float(squid_inductance(0.0, self.critical_current))

    def lumped_resonance(self, phi: float = 0.0) -> float:
        """Angular resonance 1/sqrt((Lr + L_sq + Ls) C) of the lumped
            circuit at bias phi.
        """
        dert(self.resonator_capacitance > 0, 'resonator_capacitance must be > 0')
        total = (self.resonator_inductance + self.loop_inductance
                 + squid_inductance(phi, self.critical_current))
        return float(1 / np.sqrt(total * self.resonator_capacitance))

    @property
    def flux_per_field(self) -> float:
        """Flux quanta threading the loop per tesla of applied field."""
        return self.effective_area / PHI0


@dataclass
class FitResult:
    """Fitted resonator with covariance of (resonance, kappa_int, kappa_ext)."""
    params: CavityParams = field()
    covariance: np.ndarray = field()
    chi2: float = field()
    nfev: int = field()

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def to_dict(self) -> dict:
        err = self.std_errors / (2 * np.pi)
        return {
            **self.params.to_dict(),
            'resonance_err_Hz': float(err[0]),
            'kappa_int_err_Hz': float(err[1]),
            'kappa_ext_err_Hz': float(err[2]),
            'chi2': self.chi2,
            'nfev': self.nfev,
        }


def s21_model(omega: float|np.ndarray, resonance: float, kappa_int: float,
              kappa_ext: float) -> complex|np.ndarray:
    """Reflection coefficient of a single-port resonator. Equal to
        [d^2 + i ki d + (ke^2 - ki^2)/4] / (d + i k/2)^2 with d = w - wr.
    """
    dert(kappa_int >= 0 and kappa_ext >= 0, 'decay rates must be >= 0')
    detuning = np.asarray(omega, dtype=float) - resonance
    return ((detuning + 0.5j * (kappa_int - kappa_ext))
            / (detuning + 0.5j * (kappa_int + kappa_ext)))

def _s21_jacobian(omega: np.ndarray, resonance: float, kappa_int: float,
                  kappa_ext: float) -> np.ndarray:
    """Complex partial derivatives, shape (N, 3)."""
    detuning = omega - resonance
    den = detuning + 0.5j * (kappa_int + kappa_ext)
    num = detuning + 0.5j * (kappa_int - kappa_ext)
    den2 = den**2
    return np.column_stack([
        -1j * kappa_ext / den2,
        -kappa_ext / (2 * den2),
        -0.5j * (den + num) / den2,
    ])

def synth_s21(omega: np.ndarray, resonance: float, kappa_int: float, kappa_ext: float,
              sigma: float = 0.0, seed: int|None = None) -> np.ndarray:
    """Model trace with additive complex Gaussian noise of std sigma per quadrature."""
    trace = s21_model(omega, resonance, kappa_int, kappa_ext)
    if sigma > 0:
        rng = np.random.default_rng(seed)
        trace = trace + sigma * (rng.standard_normal(len(omega))
                                 + 1j * rng.standard_normal(len(omega)))
    return trace

def initial_guess(omega: np.ndarray, s21: np.ndarray) -> tuple[float, float, float]:
    """Starting point from the Lorentzian |1 - S21|^2, which peaks at
        4 ke^2/k^2 on resonance with full width k.
    """
    excess = np.abs(1 - s21)**2
    if np.sqrt(excess.max()) < 1e-3 or np.ptp(np.abs(s21)) + np.ptp(np.angle(s21)) < 1e-3:
        raise InitializationError('trace shows no resonance feature')
    peak_index = int(np.argmax(excess))
    peak = excess[peak_index]
    above = excess >= peak / 2
    lo = peak_index
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = peak_index
    while hi < len(omega) - 1 and above[hi + 1]:
        hi += 1
    step = float(np.median(np.abs(np.diff(omega))))
    kappa = max(float(abs(omega[hi] - omega[lo])), 2 * step)
    kappa_ext = min(kappa * np.sqrt(peak) / 2, 0.99 * kappa)
    kappa_int = max(kappa - kappa_ext, 0.01 * kappa)
    return float(omega[peak_index]), kappa_int, kappa_ext

def fit_s21(omega: np.ndarray, s21: np.ndarray,
            guess: tuple[float, float, float]|None = None) -> FitResult:
    """Damped least-squares fit of the complex trace with stacked real
        and imaginary residuals and the analytic Jacobian. Raises
        InitializationError for a featureless trace and FitError (with
        the best parameters) when the iteration limit is reached.
    """
    omega = np.asarray(omega, dtype=float)
    s21 = np.asarray(s21, dtype=complex)
    tert(omega.shape == s21.shape, 'omega and s21 must have the same shape')
    vert(len(omega) >= MIN_TRACE_POINTS, f'trace needs >= {MIN_TRACE_POINTS} points')
    resonance0, kappa_int0, kappa_ext0 = guess or initial_guess(omega, s21)
    scale = kappa_int0 + kappa_ext0
    dert(scale > 0, 'initial linewidth must be > 0')
    vert(np.ptp(omega) >= MIN_TRACE_LINEWIDTHS * scale,
         f'trace must span >= {MIN_TRACE_LINEWIDTHS} linewidths')

    def unpack(p: np.ndarray) -> tuple[float, float, float]:
        return resonance0 + p[0] * scale, p[1] * scale, p[2] * scale

    def residuals(p: np.ndarray) -> np.ndarray:
        resonance, ki, ke = unpack(p)
        detuning = omega - resonance
        diff = (detuning + 0.5j * (ki - ke)) / (detuning + 0.5j * (ki + ke)) - s21
        return np.concatenate([diff.real, diff.imag])

    def jacobian(p: np.ndarray) -> np.ndarray:
        jac = _s21_jacobian(omega, *unpack(p)) * scale
        return np.vstack([jac.real, jac.imag])

    start = np.array([0.0, kappa_int0 / scale, kappa_ext0 / scale])
    fit = optimize.least_squares(residuals, start, jac=jacobian, method='lm',
                                 xtol=1e-10, ftol=1e-12, gtol=1e-12,
                                 max_nfev=MAX_FIT_EVALUATIONS)
    resonance, ki, ke = unpack(fit.x)
    if fit.status == 0:
        logger.warning('s21_fit_not_converged nfev=%d cost=%.3g', fit.nfev, fit.cost)
        raise FitError('S21 fit did not converge within the iteration limit', best={
            'resonance': resonance, 'kappa_int': ki, 'kappa_ext': ke,
        })

    chi2 = float(np.sum(fit.fun**2))
    dof = max(len(fit.fun) - 3, 1)
    jtj = fit.jac.T @ fit.jac
    covariance = (chi2 / dof) * np.linalg.pinv(jtj) * scale**2
    logger.debug('s21_fit_done resonance_Hz=%.9g chi2=%.3g nfev=%d',
                 resonance / (2 * np.pi), chi2, fit.nfev)
    return FitResult(
        params=CavityParams(resonance=resonance, kappa_int=abs(ki), kappa_ext=abs(ke)),
        covariance=covariance,
        chi2=chi2,
        nfev=int(fit.nfev),
    )

def read_s21_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Read a (frequency_Hz, re_S21, im_S21) trace; returns angular
        frequencies and complex S21.
    """
    data = np.atleast_2d(np.loadtxt(path, delimiter=',', skiprows=1))
    tert(data.shape[1] == 3, 'trace CSV must have three columns')
    return 2 * np.pi * data[:, 0], data[:, 1] + 1j * data[:, 2]

def write_s21_csv(path: str, omega: np.ndarray, s21: np.ndarray) -> None:
    data = np.column_stack([np.asarray(omega) / (2 * np.pi), np.real(s21), np.imag(s21)])
    np.savetxt(path, data, delimiter=',', header='frequency_Hz,re_S21,im_S21',
               comments='', fmt='%.17g')

def squid_inductance(phi: float|np.ndarray, critical_current: float,
                     beta_L: float|None = None, eps_gap: float = EPS_GAP) -> float|np.ndarray:
    """Parallel inductance of two junctions, Phi0 / (2 pi 2 Ic |cos(pi phi)|),
        with phi in flux quanta. beta_L is accepted for documentation only.
        Raises NearSingularityError within eps_gap of half a flux quantum.
    """
    dert(critical_current > 0, 'critical_current must be > 0')
    phi = np.asarray(phi, dtype=float)
    distance = np.abs(phi - np.floor(phi) - 0.5)
    if np.any(distance < eps_gap):
        raise NearSingularityError(
            f'bias within {eps_gap} flux quanta of half a flux quantum')
    result = PHI0 / (2 * np.pi * 2 * critical_current * np.abs(np.cos(np.pi * phi)))
    return float(result) if result.ndim == 0 else result


@dataclass
class TuningModel:
    """Participation model w_r = w0 / sqrt(1 + (L_sq + Ls) / Lr), with
        w0 and Lr treated as fit parameters.
    """
    omega0: float = field()
    resonator_inductance: float = field()
    loop_inductance: float = field(default=0.12e-9)
    critical_current: float = field(default=0.5e-6)
    eps_gap: float = field(default=EPS_GAP)

    def __post_init__(self) -> None:
        dert(self.omega0 > 0, 'omega0 must be > 0')
        dert(self.resonator_inductance > 0, 'resonator_inductance must be > 0')
        dert(self.loop_inductance >= 0, 'loop_inductance must be >= 0')

    def _participation(self, phi: float|np.ndarray) -> float|np.ndarray:
        lsq = squid_inductance(phi, self.critical_current, eps_gap=self.eps_gap)
        return (lsq + self.loop_inductance) / self.resonator_inductance

    def frequency(self, phi: float|np.ndarray) -> float|np.ndarray:
        return self.omega0 / np.sqrt(1 + self._participation(phi))

    def slope(self, phi: float|np.ndarray) -> float|np.ndarray:
        """Signed s_w in Hz per flux quantum."""
        u = self._participation(phi)
        phi = np.asarray(phi, dtype=float)
        l0 = PHI0 / (4 * np.pi * self.critical_current)
        dlsq = l0 * np.pi * np.tan(np.pi * phi) / np.abs(np.cos(np.pi * phi))
        domega = -0.5 * self.omega0 * (1 + u)**-1.5 * dlsq / self.resonator_inductance
        result = domega / (2 * np.pi)
        return float(result) if np.ndim(result) == 0 else result

    @classmethod
    def from_span(cls, f_sweet: float, f_edge: float, phi_edge: float,
                  loop_inductance: float = 0.12e-9,
                  critical_current: float = 0.5e-6) -> TuningModel:
        """Model through the sweet-spot frequency and one tuned point
            (both in Hz), solved in closed form for w0 and Lr.
        """
        dert(0 < f_edge < f_sweet, 'need 0 < f_edge < f_sweet')
        lsq0 = squid_inductance(0.0, critical_current)
        lsq_edge = squid_inductance(phi_edge, critical_current)
        k = (f_sweet / f_edge)**2
        a_edge = lsq_edge + loop_inductance
        a_sweet = lsq0 + loop_inductance
        dert(a_edge > k * a_sweet, 'frequency span too wide for the SQUID inductance')
        inv_lr = (k - 1) / (a_edge - k * a_sweet)
        omega0 = 2 * np.pi * f_sweet * np.sqrt(1 + a_sweet * inv_lr)
        return cls(omega0=omega0, resonator_inductance=1 / inv_lr,
                   loop_inductance=loop_inductance, critical_current=critical_current)


@dataclass
class TuningCurve:
    """A tuning model valid for |phi| below phi_max (modulo one flux quantum)."""
    model: TuningModelProtocol = field()
    phi_max: float = field()

    def __post_init__(self) -> None:
        tert(isinstance(self.model, TuningModelProtocol),
             'model must implement TuningModelProtocol')
        vert(0 < self.phi_max < 0.5, 'phi_max must lie in (0, 0.5)')


def tuning_curve(phis: np.ndarray, model: TuningModelProtocol) -> np.ndarray:
    """Rows of (phi, w_r) on the given grid."""
    phis = np.asarray(phis, dtype=float)
    return np.column_stack([phis, model.frequency(phis)])

def fit_tuning_curve(phis: np.ndarray, frequencies_Hz: np.ndarray,
                     loop_inductance: float = 0.12e-9,
                     critical_current: float = 0.5e-6) -> TuningCurve:
    """Least-squares fit of w0 and Lr to measured (phi, f_r) points."""
    phis = np.asarray(phis, dtype=float)
    freqs = np.asarray(frequencies_Hz, dtype=float)
    tert(phis.shape == freqs.shape, 'phis and frequencies must have the same shape')
    vert(len(phis) >= 3, 'need at least three tuning points')
    reduced = np.abs(phis - np.round(phis))
    start = TuningModel.from_span(
        float(freqs[np.argmin(reduced)]) if reduced.min() == 0 else float(freqs.max()),
        float(freqs[np.argmax(reduced)]), float(reduced.max()),
        loop_inductance, critical_current,
    )
    scale = np.array([start.omega0, start.resonator_inductance])

    def residuals(p: np.ndarray) -> np.ndarray:
        model = TuningModel(p[0] * scale[0], p[1] * scale[1],
                            loop_inductance, critical_current)
        return model.frequency(phis) / (2 * np.pi) / freqs - 1

    fit = optimize.least_squares(residuals, np.ones(2), bounds=([1e-3, 1e-3], [1e3, 1e3]),
                                 xtol=1e-14, ftol=1e-14, gtol=1e-14)
    model = TuningModel(fit.x[0] * scale[0], fit.x[1] * scale[1],
                        loop_inductance, critical_current)
    logger.debug('tuning_fit_done omega0=%.6g Lr=%.4g', model.omega0, model.resonator_inductance)
    return TuningCurve(model=model, phi_max=float(reduced.max()))

def _reduce(phi: float) -> float:
    return float(phi - np.round(phi))

def slope_at_bias(curve: TuningCurve, phi: float) -> float:
    """Signed s_w (Hz per flux quantum) at bias phi. Raises
        ExtrapolationError outside the interior of the curve.
    """
    reduced = _reduce(phi)
    if abs(reduced) >= curve.phi_max:
        raise ExtrapolationError(
            f'bias {phi} outside the fitted range |phi| < {curve.phi_max}')
    return float(curve.model.slope(reduced))

def bias_for_slope(curve: TuningCurve, target: float, samples: int = 2001) -> float:
    """Smallest bias in [0, phi_max) whose |s_w| reaches target. Raises
        SlopeRangeError carrying the largest achievable |s_w|.
    """
    dert(target >= 0, 'target must be >= 0')
    if target == 0:
        return 0.0
    grid = np.linspace(0, curve.phi_max, samples)[:-1]
    magnitude = np.abs(curve.model.slope(grid))
    reached = np.flatnonzero(magnitude >= target)
    if len(reached) == 0:
        raise SlopeRangeError(
            f'target {target:.4g} Hz/Phi0 exceeds max |s_w| {magnitude.max():.4g}',
            max_slope=float(magnitude.max()))
    i = int(reached[0])
    if magnitude[i] == target:
        return float(grid[i])
    return float(optimize.brentq(
        lambda phi: abs(curve.model.slope(phi)) - target, grid[i - 1], grid[i], xtol=1e-14))
