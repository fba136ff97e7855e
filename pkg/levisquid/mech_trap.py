"""
    Mechanics of a superconducting sphere levitated in a quadrupole
    trap: mode frequencies from the field gradient, zero-point motion,
    thermal occupation and linewidths. All quantities are SI; angular
    frequencies are used throughout and converted to Hz only at I/O.
"""

from __future__ import annotations
from .errors import dert, tert, vert
from dataclasses import dataclass, field
from scipy import constants
import numpy as np


DEFAULT_DENSITY = 1.09e4
AXES = ('x', 'y', 'z')
SIGN_CONVENTIONS = {
    'z_negative_sum': np.array([1.0, 1.0, -1.0]),
}
SOLENOIDAL_TOLERANCE = 0.02


@dataclass
class SphereParams:
    """Levitated sphere. The mass is derived from radius and density."""
    radius: float = field()
    density: float = field(default=DEFAULT_DENSITY)
    mass: float = field(init=False)

    def __post_init__(self) -> None:
        dert(self.radius > 0, 'radius must be > 0')
        dert(self.density > 0, 'density must be > 0')
        self.mass = 4.0 / 3.0 * np.pi * self.radius**3 * self.density


def sphere_from_radius(radius: float, density: float = DEFAULT_DENSITY) -> SphereParams:
    """Build a SphereParams with the derived mass."""
    return SphereParams(radius=radius, density=density)


@dataclass
class TrapConfig:
    """Quadrupole trap settings. Gradients are stored as magnitudes per
        ampere and signed through the sign_convention.
    """
    gradient_per_ampere: tuple[float, float, float] = field(default=(23.5, 24.2, 48.1))
    current: float = field(default=1.0)
    quality: float = field(default=2.6e7)
    bath_temperature: float = field(default=15e-3)
    sign_convention: str = field(default='z_negative_sum')

    def __post_init__(self) -> None:
        tert(len(self.gradient_per_ampere) == 3,
             'gradient_per_ampere must have three components')
        self.gradient_per_ampere = tuple(float(b) for b in self.gradient_per_ampere)
        vert(self.sign_convention in SIGN_CONVENTIONS,
             f'sign_convention must be one of {tuple(SIGN_CONVENTIONS)}')
        dert(all(b >= 0 for b in self.gradient_per_ampere),
             'gradient_per_ampere stores magnitudes and must be >= 0')
        dert(self.quality > 0, 'quality must be > 0')
        dert(self.bath_temperature > 0, 'bath_temperature must be > 0')
        dert(self.current >= 0, 'current must be >= 0')
        signed = SIGN_CONVENTIONS[self.sign_convention] * np.array(self.gradient_per_ampere)
        scale = np.max(np.abs(signed))
        vert(scale == 0 or abs(signed.sum()) <= SOLENOIDAL_TOLERANCE * scale,
             f'signed gradients {tuple(signed)} are not solenoidal within '
             f'{SOLENOIDAL_TOLERANCE:.0%}')

    def frequencies(self, density: float = DEFAULT_DENSITY) -> np.ndarray:
        """Angular frequencies of the x, y and z modes."""
        return trap_frequency(gradient_from_current(self), density)


@dataclass
class MechMode:
    """One translational mode of the levitated sphere."""
    axis: str = field()
    frequency: float = field()
    xzpf: float = field()
    linewidth: float = field()
    nth: float = field()
    effective_linewidth: float = field()

    @property
    def frequency_Hz(self) -> float:
        return self.frequency / (2 * np.pi)


def trap_frequency(b: float|np.ndarray, density: float = DEFAULT_DENSITY) -> float|np.ndarray:
    """Mode angular frequency sqrt(3/(2 mu0 rho)) |b| for a gradient b
        (T/m). Raises DomainError for non-positive density.
    """
    dert(density > 0, 'density must be > 0')
    return np.sqrt(3.0 / (2.0 * constants.mu_0 * density)) * np.abs(b)

def gradient_from_current(cfg: TrapConfig) -> np.ndarray:
    """Signed gradient vector b_i = sign_i * BI_i * I_trap (T/m)."""
    signs = SIGN_CONVENTIONS[cfg.sign_convention]
    return signs * np.array(cfg.gradient_per_ampere) * cfg.current

def zero_point_motion(mass: float, frequency: float|np.ndarray) -> float|np.ndarray:
    """Zero-point amplitude sqrt(hbar/(2 m Omega)). Raises DomainError
        for non-positive inputs.
    """
    dert(mass > 0, 'mass must be > 0')
    dert(np.all(np.asarray(frequency) > 0), 'frequency must be > 0')
    return np.sqrt(constants.hbar / (2.0 * mass * np.asarray(frequency)))

def thermal_occupation(temperature: float, frequency: float|np.ndarray) -> float|np.ndarray:
    """High-temperature phonon occupation kB T / (hbar Omega)."""
    dert(temperature > 0, 'temperature must be > 0')
    dert(np.all(np.asarray(frequency) > 0), 'frequency must be > 0')
    return constants.k * temperature / (constants.hbar * np.asarray(frequency))

def bose_occupation(temperature: float, frequency: float) -> float:
    """Bose-Einstein occupation, for comparison with thermal_occupation."""
    dert(temperature > 0, 'temperature must be > 0')
    dert(frequency > 0, 'frequency must be > 0')
    return 1.0 / np.expm1(constants.hbar * frequency / (constants.k * temperature))

def mode_from_config(cfg: TrapConfig, sphere: SphereParams, axis: str) -> MechMode:
    """Assemble the mode along axis from the trap settings and sphere."""
    vert(axis in AXES, f'axis must be one of {AXES}')
    b = gradient_from_current(cfg)[AXES.index(axis)]
    omega = trap_frequency(b, sphere.density)
    dert(omega > 0, f'trap current {cfg.current} A gives no confinement along {axis}')
    linewidth = omega / cfg.quality
    nth = thermal_occupation(cfg.bath_temperature, omega)
    return MechMode(
        axis=axis,
        frequency=float(omega),
        xzpf=float(zero_point_motion(sphere.mass, omega)),
        linewidth=float(linewidth),
        nth=float(nth),
        effective_linewidth=float(linewidth * nth),
    )

def trap_current_for_frequency(cfg: TrapConfig, sphere: SphereParams, axis: str,
                               frequency: float) -> float:
    """Trap current (A) that puts the mode along axis at the angular
        frequency given.
    """
    vert(axis in AXES, f'axis must be one of {AXES}')
    dert(frequency >= 0, 'frequency must be >= 0')
    per_ampere = trap_frequency(cfg.gradient_per_ampere[AXES.index(axis)], sphere.density)
    dert(per_ampere > 0, f'no gradient along {axis}')
    return float(frequency / per_ampere)
