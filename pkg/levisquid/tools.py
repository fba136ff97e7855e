from __future__ import annotations
from .archive import ReportArchive, content_id
from .cavity_squid import (
    TuningCurve, TuningModel, bias_for_slope, fit_s21, fit_tuning_curve,
    read_s21_csv, slope_at_bias, synth_s21,
)
from .config import RunConfig, config_from_dict, load_config
from .errors import ConfigError, FitError, SlopeRangeError, UnitError, UsageError, tressa
from .flux_geometry import (
    GradiometricLoop, assemble_g0, flux_sensitivity, g0_from_sensitivity, induced_dipole,
    locate_pickup, loop_flux, mean_flux_rms, placement_misfit_map, sensitivity_map,
    transformer_efficiency,
)
from .mech_trap import (
    AXES, gradient_from_current, mode_from_config, thermal_occupation,
    trap_frequency, zero_point_motion,
)
from .noise_budget import (
    BackActionInputs, Measured, added_photons, back_action_densities, back_action_force,
    budget_assemble, cavity_efficiency, cooperativity, design_cooperativity,
    detection_efficiency, friis, ground_state_density, imprecision_quantum,
    invert_loss, linear_to_db, default_ledger, project, propagate,
    required_cooperativity,
)
from .spectral_pipeline import (
    CalibrationChain, CouplingEstimate, SpectrumRecord, SynthConfig, TimeTrace, Tone,
    calibrate_displacement, calibrate_flux_axis,
    coupling_from_spectra, extract_coupling, find_spectral_peaks,
    flux_to_frequency, hamming_enbw, imprecision_floor, quasi_heterodyne_phase,
    read_trace, synth_coupling_config, synth_trace, welch_psd, write_trace,
)
from dataclasses import dataclass, field
from genericpath import isdir, isfile
from os import environ, makedirs, path as ospath
from sys import argv, stderr
from typing import Any, Callable
import csv
import json
import logging
from scipy import constants
import numpy as np


logger = logging.getLogger(__name__)

FORMATS = ('json', 'csv')
SYNTH_EXTRA_TONES = (
    Tone(133.0, 1e-3, label='phase_modulation'),
    Tone(50.0, 5e-4, label='mains'),
    Tone(100.0, 5e-4, label='mains'),
    Tone(150.0, 5e-4, label='mains'),
)


def _version() -> str:
    from . import __version__
    return __version__

def _plain(value: Any) -> Any:
    """Convert numpy scalars and arrays into JSON-ready Python values.
        Non-finite floats become None.
    """
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        value = float(value)
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value

def _flatten(value: Any, prefix: str = '') -> list[tuple[str, Any]]:
    if isinstance(value, dict):
        rows = []
        for k in sorted(value):
            rows.extend(_flatten(value[k], f'{prefix}.{k}' if prefix else str(k)))
        return rows
    if isinstance(value, list):
        rows = []
        for i, v in enumerate(value):
            rows.extend(_flatten(v, f'{prefix}[{i}]'))
        return rows
    return [(prefix, value)]


@dataclass
class Report:
    """Result of one command: echoed inputs, results and provenance."""
    command: str = field()
    inputs: dict = field()
    results: dict = field()
    provenance: dict = field()
    artifacts: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return _plain({
            'command': self.command,
            'inputs': self.inputs,
            'results': self.results,
            'provenance': self.provenance,
            'artifacts': self.artifacts,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False)

    def to_csv_rows(self) -> list[tuple[str, Any]]:
        return _flatten(self.to_dict()['results'])

    @property
    def failed(self) -> bool:
        return bool(self.results.get('failed', 0))


@dataclass
class _Context:
    config: RunConfig
    inputs: list[str]
    seed: int
    out_dir: str|None
    fmt: str
    artifacts: list[str] = field(default_factory=list)

    def artifact(self, name: str) -> str|None:
        """Path for an output file, or None without an output directory."""
        if self.out_dir is None:
            return None
        self.artifacts.append(name)
        return ospath.join(self.out_dir, name)

    def input(self, index: int, what: str) -> str:
        tressa(len(self.inputs) > index, f'missing input: {what}')
        tressa(isfile(self.inputs[index]), f"no file at path '{self.inputs[index]}'")
        return self.inputs[index]


def _write_rows(path: str|None, header: list[str], rows: list[list]) -> None:
    if path is None:
        return
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                             for v in row])


def _fit_s21(ctx: _Context) -> dict:
    cav = ctx.config['cavity']
    if ctx.inputs:
        omega, s21 = read_s21_csv(ctx.input(0, 'S21 trace CSV'))
        source = 'file'
    else:
        kappa = cav['kappa_int'] + cav['kappa_ext']
        omega = cav['resonance'] + np.linspace(-10, 10, 201) * kappa
        s21 = synth_s21(omega, cav['resonance'], cav['kappa_int'], cav['kappa_ext'],
                        sigma=0.01, seed=ctx.seed)
        source = 'synthetic'
    result = fit_s21(omega, s21)
    return {'source': source, 'n_points': len(omega), **result.to_dict()}

def _tuning(ctx: _Context) -> TuningCurve:
    sq = ctx.config['squid']
    squid = ctx.config.squid_params()
    ls, ic = squid.loop_inductance, squid.critical_current
    if ctx.inputs:
        data = np.atleast_2d(np.loadtxt(ctx.input(0, 'tuning CSV'), delimiter=',', skiprows=1))
        return fit_tuning_curve(data[:, 0], data[:, 1], ls, ic)
    model = TuningModel.from_span(
        ctx.config['cavity']['resonance'] / (2 * np.pi), sq['edge_frequency'] / (2 * np.pi),
        sq['edge_flux'], ls, ic)
    return TuningCurve(model=model, phi_max=sq['edge_flux'])

def _tuning_curve(ctx: _Context) -> dict:
    curve = _tuning(ctx)
    grid = np.linspace(-curve.phi_max, curve.phi_max, 201)
    freqs = curve.model.frequency(grid) / (2 * np.pi)
    slopes = curve.model.slope(grid)
    _write_rows(ctx.artifact('tuning_curve.csv'),
                ['phi_Phi0', 'frequency_Hz', 's_w_Hz_per_Phi0'],
                [[p, f, s] for p, f, s in zip(grid, freqs, slopes)])
    squid = ctx.config.squid_params()
    s_w = ctx.config['cavity']['s_w']
    bias = bias_for_slope(curve, s_w)
    return {
        'omega0_Hz': curve.model.omega0 / (2 * np.pi),
        'resonator_inductance_H': curve.model.resonator_inductance,
        'phi_max_Phi0': curve.phi_max,
        'sweet_spot_Hz': float(curve.model.frequency(0.0)) / (2 * np.pi),
        'max_abs_s_w_Hz_per_Phi0': float(np.max(np.abs(slopes))),
        'target_s_w_Hz_per_Phi0': s_w,
        'bias_for_target_Phi0': bias,
        'frequency_at_bias_Hz': float(curve.model.frequency(bias)) / (2 * np.pi),
        's_w_at_bias_Hz_per_Phi0': slope_at_bias(curve, bias),
        'squid': {
            'beta_L': squid.beta_L,
            'sweet_spot_inductance_H': squid.sweet_spot_inductance,
            'lumped_resonance_Hz': squid.lumped_resonance() / (2 * np.pi),
            'flux_per_field_Phi0_per_T': squid.flux_per_field,
        },
    }

def _phase_record(config: RunConfig, trace: TimeTrace) -> SpectrumRecord:
    spectral = config['spectral']
    phase = quasi_heterodyne_phase(trace, spectral['mix_freq'])
    nperseg = max(int(round(spectral['segment_fraction'] * len(phase))), 2)
    return welch_psd(phase, trace.sample_rate, nperseg, units='rad²/Hz')

def _phase_spectrum(ctx: _Context) -> SpectrumRecord:
    return _phase_record(ctx.config, read_trace(ctx.input(0, 'time trace')))

def _psd(ctx: _Context) -> dict:
    record = _phase_spectrum(ctx)
    path = ctx.artifact('psd.csv')
    if path:
        record.to_csv(path)
    return {
        'enbw_Hz': record.enbw,
        'resolution_Hz': record.resolution,
        'averages': record.averages,
        'peaks_Hz': find_spectral_peaks(record).tolist(),
    }

def _calibrate_spectra(config: RunConfig, raw: SpectrumRecord
                       ) -> tuple[SpectrumRecord, SpectrumRecord, SpectrumRecord]:
    """Flux, frequency and displacement spectra from a phase spectrum."""
    spectral = config['spectral']
    flux = calibrate_flux_axis(raw, config.calibration_chain())
    freq = flux_to_frequency(flux, config['cavity']['s_w'])
    disp = calibrate_displacement(raw, spectral['mode_amplitude'], spectral['mode_frequency'])
    return flux, freq, disp

def _calibrated(ctx: _Context) -> tuple[SpectrumRecord, SpectrumRecord, SpectrumRecord]:
    flux, freq, disp = _calibrate_spectra(ctx.config, _phase_spectrum(ctx))
    for name, record in (('flux_psd.csv', flux), ('frequency_psd.csv', freq),
                         ('displacement_psd.csv', disp)):
        path = ctx.artifact(name)
        if path:
            record.to_csv(path)
    return flux, freq, disp

def _floor(config: RunConfig, disp: SpectrumRecord) -> float:
    spectral = config['spectral']
    return imprecision_floor(
        disp, (spectral['floor_band_low'], spectral['floor_band_high']),
        mode_frequencies=(spectral['mode_frequency'],),
        tone_frequencies=(config['calibration']['cal_tone_freq'],
                          *(t.frequency for t in SYNTH_EXTRA_TONES)),
    )

def _calibrate(ctx: _Context) -> dict:
    chain = ctx.config.calibration_chain()
    flux, freq, disp = _calibrated(ctx)
    floor = _floor(ctx.config, disp)
    return {
        'cal_coil_flux_Phi0_per_V': chain.cal_coil_flux,
        'tone_flux_ms_Phi0_sq': flux.peak(chain.cal_tone_freq)[1],
        'mode_displacement_ms_m_sq': disp.peak(ctx.config['spectral']['mode_frequency'])[1],
        'imprecision_floor_m2_per_Hz': floor,
        'imprecision_floor_rt_m_per_rtHz': float(np.sqrt(floor)),
        'enbw_Hz': flux.enbw,
    }

def _mode_xzpf(config: RunConfig) -> float:
    omega = 2 * np.pi * config['spectral']['mode_frequency']
    return float(zero_point_motion(config.sphere_params().mass, omega))

def _coupling_estimate(config: RunConfig, freq: SpectrumRecord,
                       disp: SpectrumRecord) -> CouplingEstimate:
    return coupling_from_spectra(freq, disp, config['spectral']['mode_frequency'],
                                 _mode_xzpf(config))

def _coupling(ctx: _Context) -> dict:
    _, freq, disp = _calibrated(ctx)
    estimate = _coupling_estimate(ctx.config, freq, disp)
    floor = _floor(ctx.config, disp)
    return {
        'G_Hz_per_m': estimate.G_Hz_per_m,
        'g0_Hz': estimate.g0_Hz,
        'xzpf_m': _mode_xzpf(ctx.config),
        'imprecision_floor_rt_m_per_rtHz': float(np.sqrt(floor)),
    }

def _axis_results(config: RunConfig) -> dict:
    trap, sphere = config.trap_config(), config.sphere_params()
    alpha = transformer_efficiency(config.transformer_params())
    b = gradient_from_current(trap)
    sens = flux_sensitivity(None, b, sphere.radius, config.loop(), alpha)
    s_w = config['cavity']['s_w']
    results = {'alpha': alpha}
    for i, axis in enumerate(AXES):
        entry = {
            'b_T_per_m': b[i],
            'F': sens.coupling_factor[i],
            'sensitivity_pickup_Wb_per_m': sens.pickup[i],
            'sensitivity_squid_Phi0_per_m': sens.squid_phi0_per_m[i],
        }
        if b[i] != 0:
            mode = mode_from_config(trap, sphere, axis)
            entry['xzpf_m'] = mode.xzpf
            entry['g0_Hz'] = assemble_g0(s_w, alpha, sens.coupling_factor[i], b[i],
                                         sphere.radius, mode.xzpf)
            entry['ground_state_flux_rms_Wb'] = mean_flux_rms(
                alpha, sens.coupling_factor[i], b[i], sphere.radius, mode.xzpf, 0)
        results[axis] = entry
    return results

def _fluxmap(ctx: _Context) -> dict:
    config = ctx.config
    place = config['placement']
    loop = config.loop()
    smap = sensitivity_map(
        loop, gradient_from_current(config.trap_config()), config['sphere']['radius'],
        loop.plane_offset[2], extent=place['extent'], pitch=place['pitch'],
        workers=place['workers'])
    path = ctx.artifact('sensitivity_map.csv')
    if path:
        smap.to_csv(path)
    return {'grid_points': int(smap.pickup.shape[0] * smap.pickup.shape[1]),
            'dz_m': smap.dz, **_axis_results(config)}

def _locate_pul(ctx: _Context) -> dict:
    config = ctx.config
    place = config['placement']
    measured = np.array([place['sensitivity_x'], place['sensitivity_y'], place['sensitivity_z']])
    b = gradient_from_current(config.trap_config())
    rp = config['sphere']['radius']
    solutions = locate_pickup(
        measured, b, rp, config.loop(), place['dz_prior'],
        ratio_tolerance=place['ratio_tolerance'], extent=place['extent'],
        pitch=place['pitch'], dz_sigma=place['dz_sigma'], workers=place['workers'])
    if not solutions:
        xs, ys, misfit = placement_misfit_map(
            measured, b, rp, config.loop(), place['dz_prior'], extent=place['extent'],
            pitch=place['pitch'], workers=place['workers'])
        gx, gy = np.meshgrid(xs, ys)
        _write_rows(ctx.artifact('placement_misfit.csv'), ['dx_m', 'dy_m', 'misfit'],
                    [[x, y, m] for x, y, m in zip(gx.ravel(), gy.ravel(), misfit.ravel())])
    return {
        'solutions': [{
            'delta_r_m': s.delta_r,
            'alpha': s.alpha,
            'residual': s.residual,
            'symmetry_partner_index': s.symmetry_partner_index,
            'rank_deficient': s.rank_deficient,
        } for s in solutions],
    }

def _budget(ctx: _Context) -> dict:
    config = ctx.config
    bud, cav = config['budget'], config['cavity']
    trap, sphere = config.trap_config(), config.sphere_params()
    omega_m = bud['mode_frequency']
    nr = cav['nr']
    kappa = bud['kappa_int'] + bud['kappa_ext']

    s_q = imprecision_quantum(kappa, nr, 2 * np.pi, omega_m)
    eta_d = propagate(
        lambda ki, ke, n, det: detection_efficiency(
            imprecision_quantum(ki + ke, n, 2 * np.pi, omega_m), det),
        Measured(bud['kappa_int'], bud['kappa_int_sigma']),
        Measured(bud['kappa_ext'], bud['kappa_ext_sigma']),
        Measured(nr, bud['nr_sigma']),
        Measured(bud['detected_imprecision'], bud['detected_imprecision_sigma']),
    )
    eta_cav = propagate(cavity_efficiency,
                        Measured(bud['kappa_int'], bud['kappa_int_sigma']),
                        Measured(bud['kappa_ext'], bud['kappa_ext_sigma']))
    eta_cryo = propagate(lambda d, c: d / (c * bud['eta_warm']), eta_d, eta_cav)

    t_tot = friis(config.amplifier_stages())
    n_hemt = added_photons(t_tot, bud['readout_frequency'])
    budget = budget_assemble(eta_cav=eta_cav.value, eta_warm=bud['eta_warm'],
                             eta_d=eta_d.value).with_amplifier(n_hemt)

    linewidth = omega_m / trap.quality
    nth = float(thermal_occupation(trap.bath_temperature, omega_m))
    cq = cooperativity(nr, bud['g0'], kappa, linewidth, nth)
    budget = budget.with_measurement(cq)
    xzpf = float(zero_point_motion(sphere.mass, omega_m))
    s_ba_th, s_ba_gs = back_action_densities(BackActionInputs(
        G_Hz_per_m=bud['g0'] / (2 * np.pi) / xzpf, nr=nr, kappa=kappa, mass=sphere.mass,
        frequency=omega_m, linewidth=linewidth, effective_linewidth=linewidth * nth))

    upgrade = budget_assemble(eta_cav=bud['upgrade_eta_cav'], eta_cryo=bud['upgrade_eta_cryo'],
                              eta_warm=bud['upgrade_eta_warm'])
    axes = _axis_results(config)
    design = design_cooperativity(trap, sphere, nr, kappa, cav['s_w'], axes['alpha'],
                                  axes['z']['F'], axis='z')
    return {
        's_imp_quantum_scaled_Hz': s_q,
        'detected_imprecision_scaled_Hz': bud['detected_imprecision'],
        'eta_d_sigma': eta_d.sigma,
        'eta_cav_sigma': eta_cav.sigma,
        'eta_cryo_sigma': eta_cryo.sigma,
        **budget.to_dict(),
        'T_tot_K': t_tot,
        'cooperativity': cq,
        'ground_state_density_m2_per_Hz': ground_state_density(xzpf, linewidth, nth),
        'back_action_thermal_m2_per_Hz': s_ba_th,
        'back_action_ground_state_m2_per_Hz': s_ba_gs,
        'upgrade': {
            'eta_d': upgrade.eta_d,
            'required_cooperativity': required_cooperativity(bud['target_eta'], upgrade.eta_d),
        },
        'design_cooperativity': {
            'printed': design.printed,
            'assembled': design.assembled,
            'ratio': design.ratio,
        },
    }

def _project(ctx: _Context) -> dict:
    ledger = ctx.config.projection_ledger()
    cq, table = project(ledger)
    _write_rows(ctx.artifact('ledger.csv'), ['name', 'multiplier', 'cumulative_cq', 'note'],
                [[r['name'], r['multiplier'], r['cumulative_cq'], r['note']] for r in table])
    return {'base_cq': ledger.base_cq, 'projected_cq': cq, 'table': table}

def _synth_config(config: RunConfig) -> SynthConfig:
    synth, spectral = config['synth'], config['spectral']
    return synth_coupling_config(
        synth['G'], spectral['mode_amplitude'], spectral['mode_frequency'],
        config['cavity']['s_w'], spectral['phase_gain'], config.calibration_chain(),
        displacement_floor=synth['displacement_floor'], sample_rate=synth['sample_rate'],
        duration=synth['duration'], carrier_freq=synth['carrier_freq'],
        extra_tones=list(SYNTH_EXTRA_TONES))

def _synth(ctx: _Context) -> dict:
    config = ctx.config
    tressa(ctx.out_dir is not None, 'synth needs --out DIR')
    cfg = _synth_config(config)
    trace = synth_trace(cfg, seed=ctx.seed)
    name = 'trace.csv' if ctx.fmt == 'csv' else 'trace.levi'
    write_trace(ctx.artifact(name), trace)
    return {
        'planted_G_Hz_per_m': config['synth']['G'],
        'planted_floor_m2_per_Hz': config['synth']['displacement_floor'],
        'n_samples': len(trace.i),
        'sample_rate_Hz': trace.sample_rate,
        'tones_Hz': [t.frequency for t in cfg.tones],
    }


def selfcheck_values() -> list[tuple[str, float, float, float]]:
    """Reference values as (name, computed, expected, relative tolerance)."""
    per_ampere = trap_frequency(np.array([23.5, 24.2, 48.1])) / (2 * np.pi)
    coupling = extract_coupling((0.35e6)**2, (2.2e-6)**2, 4.6e-15)
    per_slope = [g0_from_sensitivity(1e9, s, x) for s, x in
                 zip((70, 800, 80), (4.6e-15, 4.6e-15, 3.2e-15))]
    s_q = imprecision_quantum(2 * np.pi * 135e6, 0.05, 2 * np.pi)
    eta_cryo = budget_assemble(eta_cav=0.19, eta_warm=1.3e-2, eta_d=4.3e-5).eta_cryo
    upgrade = budget_assemble(eta_cav=0.5, eta_cryo=0.81, eta_warm=0.99).eta_d
    omega_z = 2 * np.pi * 150
    nth_z = float(thermal_occupation(15e-3, omega_z))
    s_gs = ground_state_density(float(zero_point_motion(5.7e-9, omega_z)),
                                omega_z / 2.6e7, nth_z)
    omega_m = 2 * np.pi * 140
    cq = cooperativity(0.05, 2 * np.pi * 0.425e-3, 2 * np.pi * 135e6, omega_m / 2.6e7,
                       float(thermal_occupation(15e-3, omega_m)))
    projected, _ = project(default_ledger())
    return [
        ('trap_x_Hz_per_A', per_ampere[0], 39.0, 0.02),
        ('trap_y_Hz_per_A', per_ampere[1], 40.0, 0.02),
        ('trap_z_Hz_per_A', per_ampere[2], 80.0, 0.02),
        ('G_Hz_per_m', coupling.G_Hz_per_m, 0.16e12, 0.01),
        ('g0_Hz', coupling.g0_Hz, 0.7e-3, 0.05),
        ('g0_per_slope_x_Hz', per_slope[0], 0.32e-3, 0.05),
        ('g0_per_slope_y_Hz', per_slope[1], 3.7e-3, 0.05),
        ('g0_per_slope_z_Hz', per_slope[2], 0.26e-3, 0.05),
        ('s_imp_quantum_scaled_Hz', s_q, 26.9e6, 0.01),
        ('eta_d', detection_efficiency(s_q, 0.61e12), 4.4e-5, 0.02),
        ('eta_cav', cavity_efficiency(110e6, 25e6), 0.185, 0.05),
        ('eta_cryo', eta_cryo, 1.74e-2, 0.05),
        ('transmissivity_dB', linear_to_db(invert_loss(12, 28)), -3.58, 0.05),
        ('upgrade_eta_d', upgrade, 0.40, 0.05),
        ('required_cooperativity', required_cooperativity(1 / 9, upgrade), 0.38, 0.05),
        ('ground_state_rt_m_per_rtHz', float(np.sqrt(s_gs)), 0.8e-15, 0.2),
        ('cooperativity_log10', float(np.log10(cq)), float(np.log10(5e-17)), 1 / 16.3),
        ('projected_cq_over_1e4', projected / 1e4, 5.7, 0.01),
        ('enbw_Hz', hamming_enbw(12000, 1000.0), 0.114, 0.01),
        ('cal_coil_flux_Phi0_per_V', CalibrationChain(0.467, 0.0217).cal_coil_flux,
         0.0465, 0.01),
    ]

def selfcheck_properties() -> list[tuple[str, float, float]]:
    """Property checks on small grids as (name, value, upper bound)."""
    loop = GradiometricLoop(segments_per_side=16)
    b, rp = np.array([23.5, 24.2, -48.1]), 50e-6
    field = np.array([0.1, 0.2, 0.3])
    uniform = loop_flux(loop, np.zeros(3), np.zeros(3), uniform_field=field)

    rng = np.random.default_rng(7)
    h, oracle_err = 1e-9, 0.0
    for _ in range(10):
        placed = loop.with_offset(np.array([*rng.uniform(-400e-6, 400e-6, 2),
                                            rng.uniform(150e-6, 400e-6)]))
        pickup = flux_sensitivity(None, b, rp, placed, 1.0).pickup
        for i in range(3):
            step = np.zeros(3)
            step[i] = h
            oracle = (loop_flux(placed, induced_dipole(step, b, rp), step)
                      - loop_flux(placed, induced_dipole(-step, b, rp), -step)) / (2 * h)
            oracle_err = max(oracle_err, abs(pickup[i] - oracle) / abs(pickup[i]))

    truth, alpha = np.array([60e-6, 40e-6, 250e-6]), 5e-3
    measured = np.abs(flux_sensitivity(truth, b, rp, loop, alpha).squid_phi0_per_m)
    solutions = locate_pickup(measured, b, rp, loop, dz_prior=250e-6, extent=120e-6,
                              pitch=10e-6)
    located_um = alpha_err = pair_um = np.inf
    if solutions:
        best = min(solutions, key=lambda s: float(np.linalg.norm(s.delta_r - truth)))
        partner = solutions[best.symmetry_partner_index]
        located_um = float(np.linalg.norm(best.delta_r - truth)) * 1e6
        alpha_err = abs(best.alpha / alpha - 1)
        pair_um = float(np.linalg.norm(partner.delta_r[:2] + best.delta_r[:2])) * 1e6

    resonance, kappa_int, kappa_ext = 2 * np.pi * 4.44e9, 2 * np.pi * 5e6, 2 * np.pi * 18e6
    omega = resonance + np.linspace(-10, 10, 201) * (kappa_int + kappa_ext)
    misses = 0
    for seed in range(20):
        fit = fit_s21(omega, synth_s21(omega, resonance, kappa_int, kappa_ext, 0.01, seed))
        p = fit.params
        deviation = np.abs([p.resonance - resonance, p.kappa_int - kappa_int,
                            p.kappa_ext - kappa_ext])
        misses += int(np.sum(deviation > 3 * fit.std_errors))

    config = config_from_dict({
        'calibration': {'cal_tone_amplitude_V': 5.0},
        'synth': {'duration_s': 600.0},
    })
    raw = _phase_record(config, synth_trace(_synth_config(config), seed=0))
    _, freq, disp = _calibrate_spectra(config, raw)
    planted_G = config['synth']['G']
    planted_floor = config['synth']['displacement_floor']

    kappa, nr, g0 = 2 * np.pi * 23e6, 0.05, 2 * np.pi * 3e-3
    xzpf, linewidth, nth = 3.2e-15, 3.6e-5, 2.08e6
    s_gs = ground_state_density(xzpf, linewidth, nth)
    cq = cooperativity(nr, g0, kappa, linewidth, nth)
    s_imp = imprecision_quantum(kappa, nr, g0 / xzpf)
    G_Hz = 0.16e12
    s_ff = back_action_force(BackActionInputs(
        G_Hz_per_m=G_Hz, nr=nr, kappa=2 * np.pi * 135e6, mass=5.7e-9,
        frequency=2 * np.pi * 140, linewidth=3.4e-5, effective_linewidth=75.0))
    product = imprecision_quantum(2 * np.pi * 135e6, nr, 2 * np.pi * G_Hz) * s_ff

    return [
        ('uniform_field_flux_rel', abs(uniform) / (np.linalg.norm(field) * loop.area), 1e-12),
        ('sensitivity_oracle_rel_err', oracle_err, 1e-6),
        ('locate_offset_um', located_um, 5.0),
        ('locate_alpha_rel_err', alpha_err, 0.02),
        ('locate_pair_asymmetry_um', pair_um, 1e-6),
        ('s21_fit_3sigma_miss_fraction', misses / 60, 0.05),
        ('synth_G_rel_err', abs(_coupling_estimate(config, freq, disp).G_Hz_per_m
                                / planted_G - 1), 0.02),
        ('synth_floor_rel_err', abs(np.sqrt(_floor(config, disp) / planted_floor) - 1), 0.05),
        ('imprecision_ground_state_identity_rel_err', abs(s_imp / (s_gs / (16 * cq)) - 1),
         1e-9),
        ('imprecision_back_action_product_rel_err',
         abs(product / (constants.hbar**2 / 4) - 1), 1e-9),
    ]

def _selfcheck(ctx: _Context) -> dict:
    checks = []
    for name, value, expected, tolerance in selfcheck_values():
        passed = bool(abs(value - expected) <= tolerance * abs(expected))
        checks.append({'name': name, 'value': value, 'expected': expected,
                       'rel_tolerance': tolerance, 'passed': passed})
        if not passed:
            logger.warning('selfcheck_failed name=%s value=%.6g expected=%.6g',
                           name, value, expected)
    for name, value, bound in selfcheck_properties():
        passed = bool(value <= bound)
        checks.append({'name': name, 'value': value, 'bound': bound, 'passed': passed})
        if not passed:
            logger.warning('selfcheck_failed name=%s value=%.6g bound=%.6g', name, value, bound)
    return {'checks': checks, 'failed': sum(not c['passed'] for c in checks)}


COMMANDS: dict[str, Callable[[_Context], dict]] = {
    'fit-s21': _fit_s21,
    'tuning-curve': _tuning_curve,
    'psd': _psd,
    'calibrate': _calibrate,
    'coupling': _coupling,
    'fluxmap': _fluxmap,
    'locate-pul': _locate_pul,
    'budget': _budget,
    'project': _project,
    'synth': _synth,
    'selfcheck': _selfcheck,
}


def run_command(name: str, config: RunConfig, inputs: list[str]|None = None,
                seed: int = 0, out_dir: str|None = None, fmt: str = 'json') -> Report:
    """Run one command and return its Report. Raises UsageError for an
        unknown command or missing inputs; analysis failures propagate as
        the module exceptions.
    """
    tressa(name in COMMANDS, f'unknown command: {name}')
    tressa(fmt in FORMATS, f'--format must be one of {FORMATS}')
    if out_dir is not None and not isdir(out_dir):
        makedirs(out_dir)
    ctx = _Context(config=config, inputs=list(inputs or []), seed=seed,
                   out_dir=out_dir, fmt=fmt)
    logger.info('command_start name=%s seed=%d inputs=%d', name, seed, len(ctx.inputs))
    results = COMMANDS[name](ctx)
    config_data = config.to_dict()
    report = Report(
        command=name,
        inputs={'paths': [ospath.basename(p) for p in ctx.inputs], 'config': config_data},
        results=results,
        provenance={'config_hash': content_id(config_data), 'version': _version(),
                    'seed': seed},
        artifacts=ctx.artifacts,
    )
    if out_dir is not None:
        with open(ospath.join(out_dir, 'report.json'), 'w', encoding='utf-8') as f:
            f.write(report.to_json() + '\n')
        if fmt == 'csv':
            _write_rows(ospath.join(out_dir, 'report.csv'), ['key', 'value'],
                        [list(r) for r in report.to_csv_rows()])
    return report


def _error_object(e: BaseException) -> dict:
    error = {'type': type(e).__name__, 'message': str(e)}
    if isinstance(e, FitError):
        error['best'] = e.best
    if isinstance(e, SlopeRangeError):
        error['max_slope_Hz_per_Phi0'] = e.max_slope
    if isinstance(e, UnitError):
        error['path'] = e.path
    if isinstance(e, ConfigError) and e.line is not None:
        error['line'] = e.line
        error['column'] = e.column
    return {'error': _plain(error)}

def _read_env(name: str) -> str|None:
    """Environment variable, falling back to a .env file."""
    value = environ.get(name)
    if value is None and isfile('.env'):
        with open('.env', 'r') as f:
            for l in f.readlines():
                if l.startswith(f'{name}='):
                    value = l[len(name) + 1:].strip()
    return value

def _flag(args: list[str], flag: str) -> str|None:
    if flag not in args:
        return None
    argi = args.index(flag)
    tressa(len(args) >= argi + 2, f'{flag} needs a value')
    return args[argi + 1]


def help_cli(name: str) -> str:
    """Return the help string for the CLI tool."""
    name = name.split("/")[-1]
    return f"""usage: {name} command [input ...] [--config PATH] [--out DIR] [--seed N] [--format json|csv] [--archive PATH]

commands:
    {name} fit-s21 [trace.csv]          fit the complex reflection of a resonator
    {name} tuning-curve [tuning.csv]    fit or build the flux tuning model
    {name} psd trace.levi               Welch PSD of the demodulated phase
    {name} calibrate trace.levi         flux, frequency and displacement spectra
    {name} coupling trace.levi          electromechanical coupling G and g0
    {name} fluxmap                      flux sensitivities and map at the configured placement
    {name} locate-pul                   pickup placements matching measured sensitivities
    {name} budget                       efficiency and noise budget
    {name} project                      cooperativity projection ledger
    {name} synth --out DIR              synthetic I/Q trace with a planted coupling
    {name} selfcheck                    reference value suite\n\n""" + \
    "Reports are printed as JSON and written to DIR/report.json with --out.\n" + \
    "Without --config the built-in device profile is used. Set LEVISQUID_LOG\n" + \
    "in a .env file or as an environment variable to choose the log level.\n" + \
    "Exit codes: 0 success, 1 analysis failure, 2 usage error."


def run_cli(args: list[str]|None = None) -> int:
    """Run the CLI tool and return the exit code."""
    args = list(argv if args is None else args)
    name, args = args[0], args[1:]
    if len(args) < 1 or args[0] in ('-h', '--help', 'help'):
        print(help_cli(name))
        return 0 if args else 2

    try:
        level = (_read_env('LEVISQUID_LOG') or 'WARNING').upper()
        tressa(isinstance(logging.getLevelName(level), int),
               f'LEVISQUID_LOG must name a log level, got {level!r}')
        command = args[0]
        flags = ('--config', '--out', '--seed', '--format', '--archive')
        inputs, skip = [], False
        for a in args[1:]:
            if skip:
                skip = False
            elif a in flags:
                skip = True
            else:
                tressa(not a.startswith('--'), f'unrecognized flag: {a}')
                inputs.append(a)
        seed = _flag(args, '--seed')
        tressa(seed is None or seed.lstrip('-').isdigit(), '--seed must be an integer')
        fmt = _flag(args, '--format') or 'json'
        out_dir = _flag(args, '--out')
        archive = _flag(args, '--archive')
        config_path = _flag(args, '--config')
        tressa(command in COMMANDS, f'unknown command: {command}')
    except UsageError as e:
        print(f'error: {e}')
        print(help_cli(name))
        return 2

    logging.basicConfig(stream=stderr, format='%(levelname)s %(name)s %(message)s',
                        level=level)
    try:
        config = load_config(config_path)
        report = run_command(command, config, inputs, int(seed or 0), out_dir, fmt)
    except UsageError as e:
        print(f'error: {e}')
        print(help_cli(name))
        return 2
    except Exception as e:
        logger.error('command_failed name=%s type=%s message=%s', command, type(e).__name__, e)
        print(json.dumps(_error_object(e), sort_keys=True, indent=2))
        return 1

    if archive:
        report_id = ReportArchive(archive).store(report.to_dict())
        logger.info('report_archived id=%s path=%s', report_id, archive)
    print(report.to_json())
    return 1 if report.failed else 0
