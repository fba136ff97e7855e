"""
    Efficiency and noise accounting for the electromechanical readout.
    Rates (kappa, Gamma) and the coupling G are angular; G/2pi values in
    Hz/m appear only at the boundaries, in BackActionInputs and report
    keys.
"""

from __future__ import annotations
from .errors import DivergenceError, UnphysicalInputError, dert, vert
from .mech_trap import (
    AXES, SphereParams, TrapConfig, gradient_from_current, mode_from_config,
)
from dataclasses import dataclass, field, replace
from scipy import constants
from typing import Callable
import numpy as np


PHI0 = constants.physical_constants['mag. flux quantum'][0]


def db_to_linear(db: float) -> float:
    return 10 ** (db / 10)

def linear_to_db(ratio: float) -> float:
    dert(ratio > 0, 'ratio must be > 0')
    return 10 * np.log10(ratio)


@dataclass
class AmplifierStage:
    noise_temperature: float = field()
    gain_dB: float = field()

    def __post_init__(self) -> None:
        dert(self.noise_temperature >= 0, 'noise_temperature must be >= 0')
        vert(np.isfinite(self.gain_dB), 'gain must be finite')

    @property
    def gain(self) -> float:
        return db_to_linear(self.gain_dB)

    @property
    def noise_measure(self) -> float:
        """T / (1 - 1/G); the chain ordering that minimises T_tot sorts
            stages by this value.
        """
        return self.noise_temperature / (1 - 1 / self.gain) if self.gain > 1 else np.inf


@dataclass
class EfficiencyBudget:
    """Detection chain efficiencies. The optional fields are filled by
        with_measurement and with_amplifier.
    """
    eta_cav: float = field()
    eta_cryo: float = field()
    eta_warm: float = field()
    eta_d: float = field()
    eta_e: float|None = field(default=None)
    eta: float|None = field(default=None)
    n_hemt: float|None = field(default=None)
    transmissivity: float|None = field(default=None)

    def __post_init__(self) -> None:
        for name in ('eta_cav', 'eta_cryo', 'eta_warm', 'eta_d'):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise UnphysicalInputError(f'{name}={value} outside (0, 1]')
        vert(np.isclose(self.eta_d, self.eta_cav * self.eta_cryo * self.eta_warm,
                        rtol=1e-9, atol=0),
             'eta_d must equal eta_cav * eta_cryo * eta_warm')

    @property
    def n_add_cryo(self) -> float:
        return noise_photons_from_efficiency(self.eta_cryo)

    def with_measurement(self, cq: float) -> EfficiencyBudget:
        eta_e = measurement_efficiency(cq)
        return replace(self, eta_e=eta_e, eta=total_efficiency(self.eta_d, eta_e))

    def with_amplifier(self, n_hemt: float) -> EfficiencyBudget:
        return replace(self, n_hemt=n_hemt,
                       transmissivity=invert_loss(n_hemt, self.n_add_cryo))

    def to_dict(self) -> dict:
        data = {
            'eta_cav': self.eta_cav, 'eta_cryo': self.eta_cryo,
            'eta_warm': self.eta_warm, 'eta_d': self.eta_d,
            'n_add_cryo_photons': self.n_add_cryo,
        }
        if self.eta_e is not None:
            data['eta_e'] = self.eta_e
            data['eta'] = self.eta
            data['n_min_phonons'] = min_phonons(self.eta)
        if self.transmissivity is not None:
            data['n_hemt_photons'] = self.n_hemt
            data['transmissivity'] = self.transmissivity
            data['transmissivity_dB'] = linear_to_db(self.transmissivity)
        return data


@dataclass
class BackActionInputs:
    G_Hz_per_m: float = field()
    nr: float = field()
    kappa: float = field()
    mass: float = field()
    frequency: float = field()
    linewidth: float = field()
    effective_linewidth: float = field()

    def __post_init__(self) -> None:
        dert(self.nr >= 0, 'nr must be >= 0')
        dert(all(v > 0 for v in (self.kappa, self.mass, self.frequency,
                                 self.linewidth, self.effective_linewidth)),
             'kappa, mass, frequency and linewidths must be > 0')


@dataclass
class LedgerFactor:
    name: str = field()
    multiplier: float = field()
    note: str = field(default='')

    def __post_init__(self) -> None:
        vert(self.multiplier > 0 and np.isfinite(self.multiplier),
             f'multiplier of {self.name} must be finite and > 0')


@dataclass
class ProjectionLedger:
    """Starting cooperativity and the ordered improvement factors."""
    base_cq: float = field()
    factors: list[LedgerFactor] = field(default_factory=list)

    def __post_init__(self) -> None:
        dert(self.base_cq > 0, 'base_cq must be > 0')


@dataclass
class Measured:
    """A value with its one-sigma uncertainty."""
    value: float = field()
    sigma: float = field(default=0.0)


@dataclass
class DesignCooperativity:
    printed: float = field()
    assembled: float = field()

    @property
    def ratio(self) -> float:
        return self.assembled / self.printed


def imprecision_quantum(kappa: float, nr: float, G: float, omega: float = 0.0) -> float:
    """Quantum-limited imprecision kappa/(16 nr G^2) (1 + 4 omega^2/kappa^2)
        in m^2/Hz, for G in rad/s per metre.
    """
    dert(nr > 0 and G > 0 and kappa > 0, 'nr, G and kappa must be > 0')
    return kappa / (16 * nr * G**2) * (1 + 4 * omega**2 / kappa**2)

def detection_efficiency(s_imp_quantum: float, s_imp_detected: float) -> float:
    dert(s_imp_quantum > 0, 's_imp_quantum must be > 0')
    if s_imp_detected < s_imp_quantum:
        raise UnphysicalInputError('detected imprecision below the quantum limit')
    return s_imp_quantum / s_imp_detected

def cooperativity(nr: float, g0: float, kappa: float, linewidth: float, nth: float) -> float:
    """Cq = 4 nr g0^2 / (kappa Gamma_m nth), g0 angular."""
    dert(kappa > 0 and linewidth > 0 and nth > 0, 'kappa, linewidth and nth must be > 0')
    dert(nr >= 0, 'nr must be >= 0')
    return 4 * nr * g0**2 / (kappa * linewidth * nth)

def measurement_efficiency(cq: float) -> float:
    dert(cq > 0, 'cooperativity must be > 0')
    return 1 / (1 + 1 / cq)

def total_efficiency(eta_d: float, eta_e: float) -> float:
    return eta_d * eta_e

def min_phonons(eta: float) -> float:
    """Lowest occupation reachable by feedback at total efficiency eta."""
    if eta == 0:
        raise DivergenceError('min_phonons diverges at zero efficiency')
    dert(0 < eta <= 1, 'eta must lie in (0, 1]')
    return (1 / np.sqrt(eta) - 1) / 2

def required_cooperativity(eta_target: float, eta_d: float) -> float:
    """Cq that lifts eta_d * eta_e to eta_target."""
    dert(0 < eta_target <= 1 and 0 < eta_d <= 1, 'efficiencies must lie in (0, 1]')
    if eta_d <= eta_target:
        raise UnphysicalInputError(
            f'eta_d={eta_d} cannot reach eta={eta_target} at any cooperativity')
    return 1 / (eta_d / eta_target - 1)

def noise_photons_from_efficiency(eta: float) -> float:
    """Added photons n with eta = 1/(1 + 2n)."""
    if eta == 0:
        raise DivergenceError('added noise diverges at zero efficiency')
    dert(0 < eta <= 1, 'eta must lie in (0, 1]')
    return (1 / eta - 1) / 2

def ground_state_density(xzpf: float, linewidth: float, nth: float) -> float:
    """Displacement density 4 xzpf^2 / (Gamma_m nth) needed to resolve the
        ground state.
    """
    dert(xzpf > 0 and linewidth > 0 and nth > 0, 'inputs must be > 0')
    return 4 * xzpf**2 / (linewidth * nth)

def susceptibility(omega: float|np.ndarray, mass: float, frequency: float,
                   linewidth: float) -> complex|np.ndarray:
    dert(mass > 0, 'mass must be > 0')
    omega = np.asarray(omega, dtype=float)
    result = 1 / (mass * (frequency**2 - omega**2 - 1j * linewidth * omega))
    return complex(result) if result.ndim == 0 else result

def back_action_force(inputs: BackActionInputs) -> float:
    """S_FF = 4 hbar^2 G^2 nr / kappa (N^2/Hz)."""
    G = 2 * np.pi * inputs.G_Hz_per_m
    return 4 * constants.hbar**2 * G**2 * inputs.nr / inputs.kappa

def back_action_densities(inputs: BackActionInputs) -> tuple[float, float]:
    """Back-action displacement densities on resonance for the thermal
        and the feedback-broadened linewidth.
    """
    force = back_action_force(inputs)
    chi_th = susceptibility(inputs.frequency, inputs.mass, inputs.frequency, inputs.linewidth)
    chi_gs = susceptibility(inputs.frequency, inputs.mass, inputs.frequency,
                            inputs.effective_linewidth)
    return force * abs(chi_th)**2, force * abs(chi_gs)**2

def friis(stages: list[AmplifierStage]) -> float:
    """Cascade noise temperature T1 + T2/G1 + T3/(G1 G2) + ..."""
    vert(len(stages) > 0, 'amplifier chain must have at least one stage')
    total, gain = 0.0, 1.0
    for stage in stages:
        total += stage.noise_temperature / gain
        gain *= stage.gain
    return total

def added_photons(temperature: float, omega: float) -> float:
    dert(temperature >= 0, 'temperature must be >= 0')
    dert(omega > 0, 'omega must be > 0')
    return constants.k * temperature / (constants.hbar * omega)

def cryo_chain(n_hemt: float, transmissivity: float) -> float:
    """Added photons at the cavity after a beamsplitter loss before the
        first amplifier.
    """
    if transmissivity == 0:
        raise DivergenceError('lossy chain diverges at zero transmissivity')
    dert(0 < transmissivity <= 1, 'transmissivity must lie in (0, 1]')
    return n_hemt / transmissivity + (1 - transmissivity) / (2 * transmissivity)

def invert_loss(n_hemt: float, n_add: float) -> float:
    dert(n_hemt >= 0, 'n_hemt must be >= 0')
    if n_add < n_hemt:
        raise UnphysicalInputError(f'n_add={n_add} below amplifier noise n_hemt={n_hemt}')
    return (n_hemt + 0.5) / (n_add + 0.5)

def cavity_efficiency(kappa_int: float, kappa_ext: float) -> float:
    dert(kappa_int >= 0 and kappa_ext >= 0 and kappa_int + kappa_ext > 0,
         'decay rates must be >= 0 with a positive total')
    return kappa_ext / (kappa_int + kappa_ext)

def budget_assemble(eta_cav: float|None = None, eta_cryo: float|None = None,
                    eta_warm: float|None = None,
                    eta_d: float|None = None) -> EfficiencyBudget:
    """Combine the chain factors. When one of the four is omitted it is
        solved from the others; an implied factor above one raises
        UnphysicalInputError.
    """
    given = {'eta_cav': eta_cav, 'eta_cryo': eta_cryo, 'eta_warm': eta_warm, 'eta_d': eta_d}
    missing = [k for k, v in given.items() if v is None]
    vert(len(missing) <= 1, f'at most one factor may be omitted, got {missing}')
    for name, value in given.items():
        if value is not None and not 0 < value <= 1:
            raise UnphysicalInputError(f'{name}={value} outside (0, 1]')
    if not missing or missing == ['eta_d']:
        if eta_d is not None and not np.isclose(eta_d, eta_cav * eta_cryo * eta_warm,
                                                rtol=1e-9, atol=0):
            raise UnphysicalInputError('eta_d inconsistent with the chain factors')
        given['eta_d'] = eta_cav * eta_cryo * eta_warm
    else:
        others = [v for k, v in given.items() if k not in ('eta_d', missing[0])]
        solved = eta_d / (others[0] * others[1])
        if solved > 1:
            raise UnphysicalInputError(f'implied {missing[0]}={solved:.4g} exceeds 1')
        given[missing[0]] = solved
    return EfficiencyBudget(**given)

def propagate(func: Callable[..., float], *inputs: Measured,
              relative_step: float = 1e-6) -> Measured:
    """First-order uncertainty of func at the input values, with partial
        derivatives by central differences.
    """
    values = np.array([m.value for m in inputs], dtype=float)
    variance = 0.0
    for i, m in enumerate(inputs):
        if m.sigma == 0:
            continue
        h = relative_step * max(abs(m.value), m.sigma)
        up, down = values.copy(), values.copy()
        up[i] += h
        down[i] -= h
        slope = (func(*up) - func(*down)) / (2 * h)
        variance += (slope * m.sigma)**2
    return Measured(value=float(func(*values)), sigma=float(np.sqrt(variance)))

def design_cooperativity(trap: TrapConfig, sphere: SphereParams, nr: float, kappa: float,
                         s_w: float, alpha: float, F: float,
                         axis: str = 'z') -> DesignCooperativity:
    """Cq from platform parameters in closed form (s_w per weber, F in
        place of the unnamed geometric factor) and the same quantity
        assembled through g0 and cooperativity. The two differ by the
        constant 1/pi.
    """
    vert(axis in AXES, f'axis must be one of {AXES}')
    dert(nr > 0 and kappa > 0 and s_w > 0 and alpha > 0, 'inputs must be > 0')
    b = abs(gradient_from_current(trap)[AXES.index(axis)])
    s_w_per_weber = s_w / PHI0
    printed = (np.sqrt(3 * constants.mu_0 / (2 * sphere.density))
               * b * nr * trap.quality * sphere.radius
               / (constants.k * trap.bath_temperature * kappa)
               * (2 * np.pi * constants.hbar * s_w_per_weber * alpha * F)**2)
    mode = mode_from_config(trap, sphere, axis)
    g0 = 2 * np.pi * s_w * alpha * abs(F) * b * sphere.radius**2 * mode.xzpf / PHI0
    assembled = cooperativity(nr, g0, kappa, mode.linewidth, mode.nth)
    return DesignCooperativity(printed=float(printed), assembled=float(assembled))

def default_ledger(base_cq: float = 5e-17) -> ProjectionLedger:
    """The six planned upgrades of the first-generation device."""
    return ProjectionLedger(base_cq=base_cq, factors=[
        LedgerFactor('readout', 200, 'nr raised to 10 photons'),
        LedgerFactor('positioning', 4e10, 'pickup repositioned, coupling x2e5'),
        LedgerFactor('transformer', 2.5e3, 'full-chip transformer, nu_i 0.5'),
        LedgerFactor('slope', 10, 's_w raised to 5 GHz/Phi0'),
        LedgerFactor('linewidth', 300, 'critically coupled 100 kHz cavity'),
        LedgerFactor('current_switch', 19, 'persistent current switch'),
    ])

def project(ledger: ProjectionLedger) -> tuple[float, list[dict]]:
    """Projected Cq and the cumulative table in ledger order."""
    cq = ledger.base_cq
    table = []
    for factor in ledger.factors:
        cq *= factor.multiplier
        table.append({'name': factor.name, 'multiplier': factor.multiplier,
                      'cumulative_cq': cq, 'note': factor.note})
    vert(np.isfinite(cq), 'projected cooperativity overflowed')
    return cq, table
