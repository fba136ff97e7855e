"""
    Levisquid is a package for designing and analysing flux-coupled
    readout of a magnetically levitated superconducting sphere: trap
    mechanics, gradiometric pickup geometry, SQUID-tuned cavity fits,
    calibrated spectral densities and the efficiency and cooperativity
    budget. Most features are exposed from the root level of the
    package; the commands live in levisquid.tools and on the CLI.
"""

__version__ = '0.1.0'

from levisquid.mech_trap import (
    SphereParams,
    TrapConfig,
    MechMode,
    sphere_from_radius,
    trap_frequency,
    gradient_from_current,
    zero_point_motion,
    thermal_occupation,
    bose_occupation,
    mode_from_config,
    trap_current_for_frequency,
)
from levisquid.flux_geometry import (
    GradiometricLoop,
    TransformerParams,
    SensitivityResult,
    SensitivityMap,
    PlacementSolution,
    ImageDipoleResponse,
    quadrupole_field,
    induced_dipole,
    loop_flux,
    flux_sensitivity,
    transformer_efficiency,
    assemble_g0,
    g0_from_sensitivity,
    mean_flux_rms,
    sensitivity_map,
    placement_misfit_map,
    locate_pickup,
)
from levisquid.cavity_squid import (
    CavityParams,
    SquidParams,
    FitResult,
    TuningModel,
    TuningCurve,
    s21_model,
    synth_s21,
    fit_s21,
    squid_inductance,
    tuning_curve,
    fit_tuning_curve,
    slope_at_bias,
    bias_for_slope,
)
from levisquid.spectral_pipeline import (
    TimeTrace,
    SpectrumRecord,
    CalibrationChain,
    Tone,
    SynthConfig,
    CouplingEstimate,
    welch_psd,
    quasi_heterodyne_phase,
    calibrate_flux_axis,
    flux_to_frequency,
    calibrate_displacement,
    extract_coupling,
    coupling_from_spectra,
    imprecision_floor,
    synth_trace,
    synth_coupling_config,
    read_trace,
    write_trace,
)
from levisquid.noise_budget import (
    AmplifierStage,
    EfficiencyBudget,
    BackActionInputs,
    LedgerFactor,
    ProjectionLedger,
    Measured,
    imprecision_quantum,
    detection_efficiency,
    cooperativity,
    measurement_efficiency,
    total_efficiency,
    min_phonons,
    required_cooperativity,
    ground_state_density,
    back_action_densities,
    friis,
    added_photons,
    cryo_chain,
    invert_loss,
    budget_assemble,
    propagate,
    design_cooperativity,
    default_ledger,
    project,
)
from levisquid.config import RunConfig, load_config, default_config
from levisquid.archive import ReportArchive
from levisquid.interfaces import DipoleResponseProtocol, TuningModelProtocol
from levisquid.tools import Report, run_command
