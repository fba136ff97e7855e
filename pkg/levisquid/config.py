"""
    Run configuration. Files are TOML (or JSON when the path ends in
    .json) with one table per section and unit-suffixed keys, e.g.
    `kappa_ext_MHz = 18` under [cavity]. Every value is converted to SI
    on load; rates and frequencies listed with a 2 pi scale are stored
    as angular. Missing keys take the built-in device profile.
"""

from __future__ import annotations
from .cavity_squid import SquidParams
from .errors import ConfigError, UnitError, tert
from .flux_geometry import GradiometricLoop, TransformerParams
from .mech_trap import SphereParams, TrapConfig
from .noise_budget import AmplifierStage, LedgerFactor, ProjectionLedger, default_ledger
from .spectral_pipeline import CalibrationChain
from dataclasses import dataclass, field
from typing import Any
import json
import math
import re
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


SCHEMA_VERSION = 1
TWO_PI = 2 * math.pi

LENGTH = {'m': 1.0, 'mm': 1e-3, 'um': 1e-6, 'nm': 1e-9, 'fm': 1e-15}
INDUCTANCE = {'H': 1.0, 'nH': 1e-9, 'pH': 1e-12}
ANGULAR = {'Hz': TWO_PI, 'kHz': TWO_PI * 1e3, 'MHz': TWO_PI * 1e6, 'GHz': TWO_PI * 1e9,
           'rad_per_s': 1.0}
CYCLIC = {'Hz': 1.0, 'kHz': 1e3, 'mHz': 1e-3}
SLOPE = {'Hz_per_Phi0': 1.0, 'MHz_per_Phi0': 1e6, 'GHz_per_Phi0': 1e9}
TEMPERATURE = {'K': 1.0, 'mK': 1e-3}
NONE = {'': 1.0}

# section -> field -> (accepted unit suffixes with SI scale, default in SI)
SCHEMA: dict[str, dict[str, tuple[dict[str, float]|type, Any]]] = {
    'sphere': {
        'radius': (LENGTH, 50e-6),
        'density': ({'kg_per_m3': 1.0, 'g_per_cm3': 1e3}, 1.09e4),
    },
    'trap': {
        'gradient_x': ({'T_per_m_per_A': 1.0}, 23.5),
        'gradient_y': ({'T_per_m_per_A': 1.0}, 24.2),
        'gradient_z': ({'T_per_m_per_A': 1.0}, 48.1),
        'current': ({'A': 1.0, 'mA': 1e-3}, 1.0),
        'quality': (NONE, 2.6e7),
        'bath_temperature': (TEMPERATURE, 15e-3),
        'sign_convention': (str, 'z_negative_sum'),
    },
    'loop': {
        'square_side': (LENGTH, 150e-6),
        'center_separation': (LENGTH, 158e-6),
        'in_plane_rotation': ({'rad': 1.0, 'deg': math.pi / 180}, math.pi / 4),
        'offset_x': (LENGTH, 450e-6),
        'offset_y': (LENGTH, 250e-6),
        'offset_z': (LENGTH, 250e-6),
        'segments_per_side': (int, 64),
    },
    'transformer': {
        'squid_inductance': (INDUCTANCE, 0.12e-9),
        'input_coil_inductance': (INDUCTANCE, 20.5e-9),
        'twisted_pair_inductance': (INDUCTANCE, 100e-9),
        'pickup_inductance': (INDUCTANCE, 0.9e-9),
        'coupling': (NONE, 0.1),
    },
    'squid': {
        'critical_current': ({'A': 1.0, 'uA': 1e-6}, 0.5e-6),
        'beta_L': (NONE, 0.06),
        'resonator_inductance': (INDUCTANCE, 1.4e-9),
        'resonator_capacitance': ({'F': 1.0, 'fF': 1e-15}, 310e-15),
        'effective_area': ({'m2': 1.0, 'um2': 1e-12}, 56e-6**2),
        'edge_frequency': (ANGULAR, TWO_PI * 4.1e9),
        'edge_flux': ({'Phi0': 1.0}, 0.4),
    },
    'cavity': {
        'resonance': (ANGULAR, TWO_PI * 4.44e9),
        'kappa_int': (ANGULAR, TWO_PI * 5e6),
        'kappa_ext': (ANGULAR, TWO_PI * 18e6),
        's_w': (SLOPE, 1.7e9),
        'bias_flux': ({'Phi0': 1.0}, 0.0),
        'nr': (NONE, 0.05),
    },
    'calibration': {
        'ext_coil_periodicity': ({'V_per_Phi0': 1.0, 'mV_per_Phi0': 1e-3}, 0.467),
        'cal_coil_ratio': ({'V_per_V': 1.0, 'mV_per_V': 1e-3}, 0.0217),
        'cal_tone_freq': (CYCLIC, 223.0),
        'cal_tone_amplitude': ({'V': 1.0, 'mV': 1e-3}, 1.0),
    },
    'spectral': {
        'segment_fraction': (NONE, 0.1),
        'mix_freq': (CYCLIC, 0.0),
        'mode_frequency': (CYCLIC, 140.0),
        'mode_amplitude': (LENGTH, 740e-9),
        'floor_band_low': (CYCLIC, 400.0),
        'floor_band_high': (CYCLIC, 550.0),
        'phase_gain': ({'rad_per_Phi0': 1.0}, 1.0),
    },
    'synth': {
        'G': ({'Hz_per_m': 1.0, 'THz_per_m': 1e12}, 0.16e12),
        'displacement_floor': ({'m2_per_Hz': 1.0}, (102e-9)**2),
        'sample_rate': (CYCLIC, 1000.0),
        'duration': ({'s': 1.0}, 120.0),
        'carrier_freq': (CYCLIC, 0.0),
    },
    'placement': {
        'sensitivity_x': ({'Phi0_per_m': 1.0}, 72.0),
        'sensitivity_y': ({'Phi0_per_m': 1.0}, 826.0),
        'sensitivity_z': ({'Phi0_per_m': 1.0}, 78.0),
        'dz_prior': (LENGTH, 300e-6),
        'dz_sigma': (LENGTH, 50e-6),
        'extent': (LENGTH, 600e-6),
        'pitch': (LENGTH, 5e-6),
        'ratio_tolerance': (NONE, 0.1),
        'workers': (int, 1),
    },
    'budget': {
        'kappa_int': (ANGULAR, TWO_PI * 110e6),
        'kappa_ext': (ANGULAR, TWO_PI * 25e6),
        'kappa_int_sigma': (ANGULAR, TWO_PI * 13e6),
        'kappa_ext_sigma': (ANGULAR, TWO_PI * 5e6),
        'nr_sigma': (NONE, 0.026),
        'readout_frequency': (ANGULAR, TWO_PI * 4.3e9),
        'detected_imprecision': ({'Hz': 1.0, 'MHz': 1e6, 'THz': 1e12}, 0.61e12),
        'detected_imprecision_sigma': ({'Hz': 1.0, 'MHz': 1e6, 'THz': 1e12}, 0.02e12),
        'eta_warm': (NONE, 1.3e-2),
        'g0': ({'Hz': TWO_PI, 'mHz': TWO_PI * 1e-3}, TWO_PI * 0.425e-3),
        'mode_frequency': (ANGULAR, TWO_PI * 140.0),
        'target_eta': (NONE, 1 / 9),
        'upgrade_eta_cav': (NONE, 0.5),
        'upgrade_eta_cryo': (NONE, 0.81),
        'upgrade_eta_warm': (NONE, 0.99),
    },
}

AMPLIFIER_FIELDS = {
    'noise_temperature': (TEMPERATURE, None),
    'gain': ({'dB': 1.0}, None),
}
DEFAULT_AMPLIFIERS = [{'noise_temperature': 2.5, 'gain': 42.0}]


@dataclass
class RunConfig:
    """Validated configuration with SI values per section."""
    sections: dict[str, dict[str, Any]] = field()
    amplifiers: list[dict[str, float]] = field()
    ledger: dict[str, Any] = field()
    schema_version: int = field(default=SCHEMA_VERSION)

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.sections[section]

    def to_dict(self) -> dict:
        return {
            'schema_version': self.schema_version,
            'sections': {k: dict(v) for k, v in self.sections.items()},
            'amplifiers': [dict(a) for a in self.amplifiers],
            'ledger': {
                'base_cq': self.ledger['base_cq'],
                'factors': [dict(f) for f in self.ledger['factors']],
            },
        }

    def sphere_params(self) -> SphereParams:
        return SphereParams(radius=self['sphere']['radius'], density=self['sphere']['density'])

    def trap_config(self) -> TrapConfig:
        t = self['trap']
        return TrapConfig(
            gradient_per_ampere=(t['gradient_x'], t['gradient_y'], t['gradient_z']),
            current=t['current'], quality=t['quality'],
            bath_temperature=t['bath_temperature'], sign_convention=t['sign_convention'],
        )

    def loop(self) -> GradiometricLoop:
        p = self['loop']
        return GradiometricLoop(
            square_side=p['square_side'], center_separation=p['center_separation'],
            in_plane_rotation=p['in_plane_rotation'],
            plane_offset=(p['offset_x'], p['offset_y'], p['offset_z']),
            segments_per_side=p['segments_per_side'],
        )

    def transformer_params(self) -> TransformerParams:
        t = self['transformer']
        return TransformerParams(
            squid_inductance=t['squid_inductance'],
            input_coil_inductance=t['input_coil_inductance'],
            twisted_pair_inductance=t['twisted_pair_inductance'],
            pickup_inductance=t['pickup_inductance'],
            coupling=t['coupling'],
        )

    def squid_params(self) -> SquidParams:
        """The SQUID loop inductance is the transformer's squid_inductance."""
        s = self['squid']
        return SquidParams(
            critical_current=s['critical_current'],
            loop_inductance=self['transformer']['squid_inductance'],
            beta_L=s['beta_L'],
            resonator_inductance=s['resonator_inductance'],
            resonator_capacitance=s['resonator_capacitance'],
            effective_area=s['effective_area'],
        )

    def calibration_chain(self) -> CalibrationChain:
        return CalibrationChain(**self['calibration'])

    def amplifier_stages(self) -> list[AmplifierStage]:
        return [AmplifierStage(a['noise_temperature'], a['gain']) for a in self.amplifiers]

    def projection_ledger(self) -> ProjectionLedger:
        return ProjectionLedger(
            base_cq=self.ledger['base_cq'],
            factors=[LedgerFactor(f['name'], f['multiplier'], f.get('note', ''))
                     for f in self.ledger['factors']],
        )


def _resolve_key(key: str, fields: dict, path: str) -> tuple[str, float|type]:
    """Map a suffixed key to (field, scale). Raises UnitError for a known
        field with an unaccepted suffix and ConfigError for unknown keys.
    """
    for name in sorted(fields, key=len, reverse=True):
        units = fields[name][0]
        if isinstance(units, type):
            if key == name:
                return name, units
            continue
        if key == name:
            if '' in units:
                return name, units['']
            raise UnitError(f'{path}.{name} needs a unit suffix, one of '
                            f'{sorted(units)}', f'{path}.{name}')
        if key.startswith(name + '_'):
            suffix = key[len(name) + 1:]
            if suffix in units:
                return name, units[suffix]
            if not any(key.startswith(other + '_') or key == other
                       for other in fields if len(other) > len(name)):
                raise UnitError(f'{path}.{name} given in unsupported unit {suffix!r}; '
                                f'accepted: {sorted(u for u in units if u)}',
                                f'{path}.{name}')
    raise ConfigError(f'unknown key {path}.{key}')

def _convert(value: Any, scale: float|type, path: str) -> Any:
    if isinstance(scale, type):
        if scale is int and (type(value) is not int):
            raise ConfigError(f'{path} must be an integer')
        if scale is str and type(value) is not str:
            raise ConfigError(f'{path} must be a string')
        return value
    if type(value) not in (int, float):
        raise ConfigError(f'{path} must be a number')
    return float(value) * scale

def _parse_section(raw: Any, fields: dict, path: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f'{path} must be a table')
    values = {name: spec[1] for name, spec in fields.items()}
    seen = set()
    for key, value in raw.items():
        name, scale = _resolve_key(key, fields, path)
        if name in seen:
            raise ConfigError(f'{path}.{name} given more than once')
        seen.add(name)
        values[name] = _convert(value, scale, f'{path}.{key}')
    return values

def _parse_ledger(raw: Any) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError('ledger must be a table')
    unknown = set(raw) - {'base_cq', 'factors'}
    if unknown:
        raise ConfigError(f'unknown key ledger.{sorted(unknown)[0]}')
    default = default_ledger()
    ledger = {
        'base_cq': default.base_cq,
        'factors': [{'name': f.name, 'multiplier': f.multiplier, 'note': f.note}
                    for f in default.factors],
    }
    if 'base_cq' in raw:
        ledger['base_cq'] = _convert(raw['base_cq'], 1.0, 'ledger.base_cq')
    if 'factors' in raw:
        if not isinstance(raw['factors'], list):
            raise ConfigError('ledger.factors must be an array of tables')
        factors = []
        for i, entry in enumerate(raw['factors']):
            path = f'ledger.factors[{i}]'
            if not isinstance(entry, dict):
                raise ConfigError(f'{path} must be a table')
            for required in ('name', 'multiplier'):
                if required not in entry:
                    raise ConfigError(f'missing required key {path}.{required}')
            unknown = set(entry) - {'name', 'multiplier', 'note'}
            if unknown:
                raise ConfigError(f'unknown key {path}.{sorted(unknown)[0]}')
            factors.append({
                'name': _convert(entry['name'], str, f'{path}.name'),
                'multiplier': _convert(entry['multiplier'], 1.0, f'{path}.multiplier'),
                'note': _convert(entry.get('note', ''), str, f'{path}.note'),
            })
        ledger['factors'] = factors
    return ledger

def _parse_amplifiers(raw: Any) -> list[dict]:
    if not isinstance(raw, list) or len(raw) == 0:
        raise ConfigError('amplifiers must be a non-empty array of tables')
    stages = []
    for i, entry in enumerate(raw):
        path = f'amplifiers[{i}]'
        stage = _parse_section(entry, AMPLIFIER_FIELDS, path)
        for name, value in stage.items():
            if value is None:
                raise ConfigError(f'missing required key {path}.{name}')
        stages.append(stage)
    return stages

def config_from_dict(data: dict) -> RunConfig:
    """Validate parsed key-value data into a RunConfig."""
    tert(isinstance(data, dict), 'config data must be a dict')
    version = data.get('schema_version', SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f'unsupported schema_version {version}')
    for key in data:
        if key not in SCHEMA and key not in ('schema_version', 'ledger', 'amplifiers'):
            raise ConfigError(f'unknown key {key}')
    sections = {
        name: _parse_section(data.get(name, {}), fields, name)
        for name, fields in SCHEMA.items()
    }
    amplifiers = (_parse_amplifiers(data['amplifiers']) if 'amplifiers' in data
                  else [dict(a) for a in DEFAULT_AMPLIFIERS])
    return RunConfig(
        sections=sections,
        amplifiers=amplifiers,
        ledger=_parse_ledger(data.get('ledger', {})),
        schema_version=version,
    )

def default_config() -> RunConfig:
    """The built-in device profile."""
    return config_from_dict({})

def _position_from_message(message: str) -> tuple[int|None, int|None]:
    match = re.search(r'line (\d+), column (\d+)', message)
    if match:
        return int(match.group(1)), int(match.group(2))
    return None, None

def load_config(path: str|None) -> RunConfig:
    """Load and validate a config file; None gives the default profile.
        Parse errors carry line and column.
    """
    if path is None:
        return default_config()
    try:
        with open(path, 'rb') as f:
            text = f.read().decode('utf-8')
    except OSError as e:
        raise ConfigError(f'cannot read config {path}: {e.strerror}')
    if path.endswith('.json'):
        if not text.strip():
            return default_config()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f'{path}: {e.msg}', e.lineno, e.colno)
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            line, column = _position_from_message(str(e))
            raise ConfigError(f'{path}: {e}', getattr(e, 'lineno', line),
                              getattr(e, 'colno', column))
    return config_from_dict(data)
