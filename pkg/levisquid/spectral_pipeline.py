"""
    From recorded I/Q traces to calibrated spectral densities. Welch
    estimation with a Hamming window, quasi-heterodyne phase extraction,
    the calibration-tone chain from detector units to flux and frequency
    noise, optical displacement calibration, coupling extraction and the
    imprecision floor. A synthetic generator builds traces with known
    content for round trips.

    Densities are one-sided. A record's power spectrum is PS = PSD * ENBW,
    so a sine of amplitude A at a bin centre shows PS = A^2/2.
"""

from __future__ import annotations
from .errors import CalibrationError, dert, tert, vert
from dataclasses import dataclass, field, replace
from scipy import signal, stats
import logging
import numpy as np


logger = logging.getLogger(__name__)

# density unit -> CSV value column
UNIT_COLUMNS = {
    'V²/Hz': 'psd_V2_per_Hz',
    'rad²/Hz': 'psd_rad2_per_Hz',
    'Φ0²/Hz': 'psd_Phi0_2_per_Hz',
    'Hz²/Hz': 'psd_Hz2_per_Hz',
    'm²/Hz': 'psd_m2_per_Hz',
}
UNITS = tuple(UNIT_COLUMNS)
TRACE_MAGIC = b'LEVI'
TRACE_VERSION = 1
TRACE_HEADER = np.dtype([
    ('magic', 'S4'), ('version', '<u4'), ('fs', '<f8'),
    ('n_samples', '<u8'), ('n_channels', '<u4'),
])
PEAK_SEARCH_BINS = 2
MIN_SNR = 3.0
MAINS_FREQUENCY = 50.0
MAINS_HALFWIDTH = 2.0
VIBRATION_CUTOFF = 30.0


@dataclass
class TimeTrace:
    """Demodulated detector output sampled at sample_rate (Hz)."""
    sample_rate: float = field()
    i: np.ndarray = field()
    q: np.ndarray = field()

    def __post_init__(self) -> None:
        dert(self.sample_rate > 0, 'sample_rate must be > 0')
        self.i = np.asarray(self.i, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        vert(self.i.shape == self.q.shape and self.i.ndim == 1,
             'I and Q must be 1-d and of equal length')

    @property
    def duration(self) -> float:
        return len(self.i) / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.i)) / self.sample_rate


@dataclass
class SpectrumRecord:
    """One-sided spectral density on a frequency grid."""
    freq: np.ndarray = field()
    values: np.ndarray = field()
    enbw: float = field()
    units: str = field(default='V²/Hz')
    power_peaks: dict[float, float] = field(default_factory=dict)
    averages: int = field(default=1)
    dof: float = field(default=2.0)

    def __post_init__(self) -> None:
        vert(self.units in UNITS, f'units must be one of {UNITS}')
        vert(len(self.freq) == len(self.values), 'freq and values must be of equal length')
        dert(self.enbw > 0, 'enbw must be > 0')

    @property
    def resolution(self) -> float:
        return float(self.freq[1] - self.freq[0])

    @property
    def power_spectrum(self) -> np.ndarray:
        return self.values * self.enbw

    def bin_of(self, frequency: float) -> int:
        return int(np.argmin(np.abs(self.freq - frequency)))

    def peak(self, frequency: float, search_bins: int = PEAK_SEARCH_BINS) -> tuple[float, float]:
        """Largest power-spectrum bin within search_bins of frequency:
            returns (bin frequency, PS).
        """
        centre = self.bin_of(frequency)
        lo, hi = max(centre - search_bins, 0), min(centre + search_bins + 1, len(self.freq))
        index = lo + int(np.argmax(self.values[lo:hi]))
        return float(self.freq[index]), float(self.values[index] * self.enbw)

    def local_snr(self, frequency: float, search_bins: int = PEAK_SEARCH_BINS,
                  neighbourhood: int = 25) -> float:
        """Peak density over the median density of the surrounding bins."""
        f, ps = self.peak(frequency, search_bins)
        centre = self.bin_of(f)
        lo, hi = max(centre - neighbourhood, 0), min(centre + neighbourhood + 1, len(self.freq))
        mask = np.ones(hi - lo, dtype=bool)
        mask[max(centre - lo - 2 * search_bins, 0):centre - lo + 2 * search_bins + 1] = False
        floor = float(np.median(self.values[lo:hi][mask])) if mask.any() else 0.0
        if floor <= 0:
            return np.inf if ps > 0 else 0.0
        return ps / self.enbw / floor

    def with_peaks(self, frequencies: list[float]) -> SpectrumRecord:
        """Copy with power_peaks filled for the given nominal frequencies."""
        peaks = dict(self.power_peaks)
        for frequency in frequencies:
            f, ps = self.peak(frequency)
            peaks[f] = ps
        return replace(self, power_peaks=peaks)

    def scaled(self, factor: float, units: str) -> SpectrumRecord:
        return replace(
            self, values=self.values * factor, units=units,
            power_peaks={f: ps * factor for f, ps in self.power_peaks.items()},
        )

    def to_csv(self, path: str) -> None:
        header = f'# units: {self.units}\nfreq_Hz,{UNIT_COLUMNS[self.units]}'
        np.savetxt(path, np.column_stack([self.freq, self.values]), delimiter=',',
                   header=header, comments='', fmt='%.17g', encoding='utf-8')


@dataclass
class CalibrationChain:
    """Constants tying detector output to flux in the SQUID."""
    ext_coil_periodicity: float = field(default=0.467)
    cal_coil_ratio: float = field(default=0.0217)
    cal_tone_freq: float = field(default=223.0)
    cal_tone_amplitude: float = field(default=1.0)

    def __post_init__(self) -> None:
        dert(self.ext_coil_periodicity > 0, 'ext_coil_periodicity must be > 0')
        dert(self.cal_coil_ratio > 0, 'cal_coil_ratio must be > 0')
        dert(self.cal_tone_freq > 0, 'cal_tone_freq must be > 0')
        dert(self.cal_tone_amplitude >= 0, 'cal_tone_amplitude must be >= 0')

    @property
    def cal_coil_flux(self) -> float:
        """Flux quanta per volt on the calibration coil."""
        return self.cal_coil_ratio / self.ext_coil_periodicity

    @property
    def tone_flux_amplitude(self) -> float:
        return self.cal_coil_flux * self.cal_tone_amplitude


@dataclass
class Tone:
    """Phase modulation beta*sin(2 pi f t + phase), beta in radians."""
    frequency: float = field()
    beta: float = field()
    phase: float = field(default=0.0)
    label: str = field(default='')


@dataclass
class SynthConfig:
    """Content of a synthetic I/Q trace. phase_floor is the one-sided
        density (rad^2/Hz) of white phase noise.
    """
    sample_rate: float = field(default=1000.0)
    duration: float = field(default=120.0)
    carrier_freq: float = field(default=0.0)
    amplitude: float = field(default=1.0)
    tones: list[Tone] = field(default_factory=list)
    phase_floor: float = field(default=0.0)

    def __post_init__(self) -> None:
        dert(self.sample_rate > 0 and self.duration > 0,
             'sample_rate and duration must be > 0')
        dert(self.phase_floor >= 0, 'phase_floor must be >= 0')

    @property
    def max_frequency(self) -> float:
        return self.carrier_freq + max((t.frequency for t in self.tones), default=0.0)


@dataclass
class CouplingEstimate:
    """Electromechanical coupling G/2pi (Hz/m) and, when xzpf is
        known, g0/2pi (Hz).
    """
    G_Hz_per_m: float = field()
    g0_Hz: float|None = field(default=None)


def hamming_enbw(segment_length: int, fs: float) -> float:
    w = signal.get_window('hamming', segment_length)
    return float(fs * np.sum(w**2) / np.sum(w)**2)

def _welch_dof(window: np.ndarray, step: int, averages: int) -> float:
    """Equivalent chi-square degrees of freedom of a Welch average."""
    if averages <= 1:
        return 2.0
    variance_ratio = 1.0
    for j in range(1, averages):
        shift = j * step
        if shift >= len(window):
            break
        rho = np.sum(window[:-shift] * window[shift:]) / np.sum(window**2)
        variance_ratio += 2 * (1 - j / averages) * rho**2
    return 2 * averages / variance_ratio

def welch_psd(x: np.ndarray, fs: float, segment_length: int|None = None,
              window: str = 'hamming', units: str = 'V²/Hz') -> SpectrumRecord:
    """One-sided Welch PSD with 50% overlap; segment_length defaults to a
        tenth of the record.
    """
    x = np.asarray(x, dtype=float)
    dert(fs > 0, 'fs must be > 0')
    nperseg = int(segment_length or len(x) // 10)
    vert(nperseg >= 2, 'segment_length must be >= 2')
    vert(nperseg <= len(x), f'segment_length {nperseg} longer than data ({len(x)})')
    noverlap = nperseg // 2
    freq, values = signal.welch(x, fs=fs, window=window, nperseg=nperseg,
                                noverlap=noverlap, scaling='density')
    w = signal.get_window(window, nperseg)
    step = nperseg - noverlap
    averages = (len(x) - nperseg) // step + 1
    if averages < 2:
        logger.warning('welch_single_segment n=%d segment_length=%d', len(x), nperseg)
    return SpectrumRecord(
        freq=freq,
        values=values,
        enbw=float(fs * np.sum(w**2) / np.sum(w)**2),
        units=units,
        averages=averages,
        dof=_welch_dof(w, step, averages),
    )

def quasi_heterodyne_phase(trace: TimeTrace, mix_freq: float) -> np.ndarray:
    """Mix I + iQ down by mix_freq and return the unwrapped phase (rad)."""
    vert(0 <= mix_freq < trace.sample_rate / 2, 'mix_freq must lie in [0, fs/2)')
    mixed = (trace.i + 1j * trace.q) * np.exp(-2j * np.pi * mix_freq * trace.times)
    return np.unwrap(np.angle(mixed))

def _calibration_scale(spectrum: SpectrumRecord, frequency: float, target_ps: float,
                       what: str, min_snr: float) -> float:
    f, ps = spectrum.peak(frequency)
    snr = spectrum.local_snr(frequency)
    if ps <= 0 or snr < min_snr:
        raise CalibrationError(f'{what} peak at {frequency} Hz missing (SNR {snr:.3g} < {min_snr})')
    logger.debug('calibration_peak what=%s freq_Hz=%s ps=%.6g snr=%.3g', what, f, ps, snr)
    return target_ps / ps

def calibrate_flux_axis(spectrum: SpectrumRecord, chain: CalibrationChain,
                        min_snr: float = MIN_SNR) -> SpectrumRecord:
    """Rescale a detector spectrum to flux so that the calibration tone
        carries its known mean-square flux.
    """
    dert(chain.tone_flux_amplitude > 0, 'calibration tone amplitude must be > 0')
    scale = _calibration_scale(spectrum, chain.cal_tone_freq,
                               chain.tone_flux_amplitude**2 / 2, 'calibration tone', min_snr)
    return spectrum.with_peaks([chain.cal_tone_freq]).scaled(scale, 'Φ0²/Hz')

def flux_to_frequency(spectrum: SpectrumRecord, s_w: float) -> SpectrumRecord:
    """Frequency noise density (Hz^2/Hz) for s_w in Hz per flux quantum."""
    vert(spectrum.units == 'Φ0²/Hz', 'spectrum must be in Φ0²/Hz')
    dert(s_w > 0, 's_w must be > 0')
    return spectrum.scaled(s_w**2, 'Hz²/Hz')

def calibrate_displacement(spectrum: SpectrumRecord, amplitude: float, mode_frequency: float,
                           min_snr: float = MIN_SNR) -> SpectrumRecord:
    """Rescale so the mode peak carries <x^2> = A^2/2 for an optically
        measured amplitude A (m).
    """
    if not amplitude > 0:
        raise CalibrationError('displacement amplitude must be > 0')
    scale = _calibration_scale(spectrum, mode_frequency, amplitude**2 / 2,
                               'mechanical mode', min_snr)
    return spectrum.with_peaks([mode_frequency]).scaled(scale, 'm²/Hz')

def extract_coupling(s_ww: float, s_xx: float, xzpf: float|None = None) -> CouplingEstimate:
    """G/2pi = sqrt(Sww/Sxx) from densities at the same mode bin."""
    dert(s_ww >= 0 and s_xx >= 0, 'densities must be >= 0')
    if s_xx == 0:
        raise ZeroDivisionError('displacement density at the mode is zero')
    G = float(np.sqrt(s_ww / s_xx))
    return CouplingEstimate(G_Hz_per_m=G, g0_Hz=None if xzpf is None else G * xzpf)

def coupling_from_spectra(s_ww: SpectrumRecord, s_xx: SpectrumRecord, mode_frequency: float,
                          xzpf: float|None = None) -> CouplingEstimate:
    vert(s_ww.units == 'Hz²/Hz' and s_xx.units == 'm²/Hz',
         'expected Hz²/Hz and m²/Hz spectra')
    f_w, ps_w = s_ww.peak(mode_frequency)
    f_x, ps_x = s_xx.peak(mode_frequency)
    vert(f_w == f_x, f'peaks fall in different bins ({f_w} Hz, {f_x} Hz)')
    return extract_coupling(ps_w / s_ww.enbw, ps_x / s_xx.enbw, xzpf)

def imprecision_floor(spectrum: SpectrumRecord, band: tuple[float, float],
                      mode_frequencies: tuple[float, ...] = (),
                      tone_frequencies: tuple[float, ...] = (),
                      exclusion_halfwidth: float = MAINS_HALFWIDTH,
                      mains_frequency: float = MAINS_FREQUENCY,
                      vibration_cutoff: float = VIBRATION_CUTOFF,
                      bias_correct: bool = True) -> float:
    """Median density over the band after removing mode peaks, tones,
        mains harmonics and the low-frequency vibration region. The
        median of a Welch estimate sits below the mean; bias_correct
        divides out the chi-square median ratio for the record's degrees
        of freedom.
    """
    lo, hi = band
    vert(lo < hi, 'band must be an increasing interval')
    freq = spectrum.freq
    mask = (freq >= lo) & (freq <= hi) & (freq >= vibration_cutoff)
    if mains_frequency > 0:
        harmonic = np.round(freq / mains_frequency) * mains_frequency
        mask &= ~((harmonic > 0) & (np.abs(freq - harmonic) <= exclusion_halfwidth))
    for f in (*mode_frequencies, *tone_frequencies):
        mask &= np.abs(freq - f) > exclusion_halfwidth
    vert(mask.any(), f'no bins left in band {band} after exclusions')
    floor = float(np.median(spectrum.values[mask]))
    if bias_correct:
        floor *= spectrum.dof / stats.chi2.median(spectrum.dof)
    return floor

def find_spectral_peaks(spectrum: SpectrumRecord, min_snr: float = 10.0,
                        min_separation_bins: int = 5) -> np.ndarray:
    """Frequencies of local maxima at least min_snr above the median density."""
    floor = float(np.median(spectrum.values))
    indices, _ = signal.find_peaks(spectrum.values, height=min_snr * floor,
                                   distance=min_separation_bins)
    return spectrum.freq[indices]

def synth_trace(config: SynthConfig, seed: int|None = None) -> TimeTrace:
    """I/Q pair with phase sum(beta_k sin(2 pi f_k t + phase_k)) plus
        white phase noise, on a carrier at carrier_freq. Identical seeds
        give identical traces.
    """
    vert(config.sample_rate > 2 * config.max_frequency,
         f'sample_rate {config.sample_rate} Hz aliases content up to '
         f'{config.max_frequency} Hz')
    n = int(round(config.sample_rate * config.duration))
    t = np.arange(n) / config.sample_rate
    phase = np.zeros(n)
    for tone in config.tones:
        phase += tone.beta * np.sin(2 * np.pi * tone.frequency * t + tone.phase)
    if config.phase_floor > 0:
        rng = np.random.default_rng(seed)
        phase += np.sqrt(config.phase_floor * config.sample_rate / 2) * rng.standard_normal(n)
    total = 2 * np.pi * config.carrier_freq * t + phase
    return TimeTrace(sample_rate=config.sample_rate,
                     i=config.amplitude * np.cos(total),
                     q=config.amplitude * np.sin(total))

def synth_coupling_config(G_Hz_per_m: float, amplitude: float, mode_frequency: float,
                          s_w: float, phase_gain: float, chain: CalibrationChain,
                          displacement_floor: float = 0.0, sample_rate: float = 1000.0,
                          duration: float = 120.0, carrier_freq: float = 0.0,
                          extra_tones: list[Tone]|None = None) -> SynthConfig:
    """Synthetic configuration with a planted coupling. The mode moves
        with amplitude (m) and modulates the resonance by G*amplitude;
        phase_gain (rad per flux quantum) maps SQUID flux to detector
        phase. displacement_floor (m^2/Hz) sets the white imprecision
        seen after displacement calibration.
    """
    dert(amplitude > 0 and s_w > 0 and phase_gain > 0,
         'amplitude, s_w and phase_gain must be > 0')
    beta_mode = phase_gain * G_Hz_per_m * amplitude / s_w
    beta_cal = phase_gain * chain.tone_flux_amplitude
    tones = [
        Tone(mode_frequency, beta_mode, label='mode'),
        Tone(chain.cal_tone_freq, beta_cal, label='cal'),
        *(extra_tones or []),
    ]
    return SynthConfig(
        sample_rate=sample_rate, duration=duration, carrier_freq=carrier_freq,
        tones=tones, phase_floor=displacement_floor * (beta_mode / amplitude)**2,
    )

def write_trace(path: str, trace: TimeTrace) -> None:
    """Binary columnar file: header then little-endian float64 channels.
        Paths ending in .csv are written as (time_s, I_V, Q_V) rows.
    """
    if path.endswith('.csv'):
        np.savetxt(path, np.column_stack([trace.times, trace.i, trace.q]), delimiter=',',
                   header='time_s,I_V,Q_V', comments='', fmt='%.17g')
        return
    header = np.array([(TRACE_MAGIC, TRACE_VERSION, trace.sample_rate, len(trace.i), 2)],
                      dtype=TRACE_HEADER)
    with open(path, 'wb') as f:
        f.write(header.tobytes())
        f.write(np.concatenate([trace.i, trace.q]).astype('<f8').tobytes())

def read_trace(path: str) -> TimeTrace:
    if path.endswith('.csv'):
        data = np.loadtxt(path, delimiter=',', skiprows=1)
        tert(data.ndim == 2 and data.shape[1] == 3, 'trace CSV must have three columns')
        return TimeTrace(sample_rate=1 / float(np.median(np.diff(data[:, 0]))),
                         i=data[:, 1], q=data[:, 2])
    with open(path, 'rb') as f:
        raw = f.read()
    vert(len(raw) >= TRACE_HEADER.itemsize, 'trace file truncated')
    header = np.frombuffer(raw[:TRACE_HEADER.itemsize], dtype=TRACE_HEADER)[0]
    vert(header['magic'] == TRACE_MAGIC, 'not a trace file (bad magic)')
    vert(header['version'] == TRACE_VERSION, f'unsupported trace version {header["version"]}')
    n, channels = int(header['n_samples']), int(header['n_channels'])
    vert(channels == 2, 'trace must have I and Q channels')
    data = np.frombuffer(raw[TRACE_HEADER.itemsize:], dtype='<f8')
    vert(len(data) == n * channels, 'trace file truncated')
    return TimeTrace(sample_rate=float(header['fs']), i=data[:n].copy(), q=data[n:].copy())
