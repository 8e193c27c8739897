"""Heterodyne time-series synthesis and the digital measurement pipeline.

Trace amplitudes are in units whose squares are W^2, so one-sided PSDs come
out in W^2/Hz.  The demodulated LO-vacuum PSD of either quadrature equals the
chain's shot-noise level.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from .core_model import TWO_PI, PoleError, SystemParams
from .detection import DetectionChain, DetuningJitter, detuning_average_cross, technical_cross_spectrum
from .network_drive import drive_response, stability_scan

RECORD_SAMPLE_RATE = 80e6
RECORD_IF = 10e6
DEFAULT_IQ_RATE = 2e6


class DegenerateTraceError(ValueError):
    """The trace carries no usable mean field to reference the phase against."""


@dataclass
class RawTrace:
    """Real photocurrent samples at ``sample_rate`` (Hz)."""

    samples: np.ndarray
    sample_rate: float
    metadata: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class IQTrace:
    """Baseband quadratures.  After phase correction ``i`` is AM and ``q`` is PM."""

    i: np.ndarray
    q: np.ndarray
    sample_rate: float
    rotation: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.i = np.asarray(self.i, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        if self.i.shape != self.q.shape:
            raise ValueError("I and Q must have equal lengths")
        if not (np.all(np.isfinite(self.i)) and np.all(np.isfinite(self.q))):
            raise ValueError("IQ trace contains non-finite samples")

    @property
    def am(self) -> np.ndarray:
        return self.i

    @property
    def pm(self) -> np.ndarray:
        return self.q

    @property
    def complex(self) -> np.ndarray:
        return self.i + 1j * self.q

    @property
    def duration(self) -> float:
        return self.i.size / self.sample_rate


@dataclass(frozen=True)
class Tone:
    """Coherent AM drive: input-referred amplitude (W) at angular frequency ``omega``."""

    omega: float
    amplitude: float


def tone_amplitude_for_snr(chain: DetectionChain, snr_db: float, bin_width_hz: float) -> float:
    """Tone amplitude whose power exceeds the shot noise in one PSD bin by ``snr_db``."""
    return math.sqrt(2 * chain.shot_noise_level * bin_width_hz * 10 ** (snr_db / 10))


def _factor(cross):
    """Lower-triangular ``L`` with ``L L^dag = cross`` for positive-definite 2x2 blocks."""
    c00 = np.real(cross[..., 0, 0])
    c10 = cross[..., 1, 0]
    l00 = np.sqrt(c00)
    l10 = c10 / l00
    l11 = np.sqrt(np.clip(np.real(cross[..., 1, 1]) - np.abs(l10) ** 2, 0, None))
    out = np.zeros_like(cross)
    out[..., 0, 0] = l00
    out[..., 1, 0] = l10
    out[..., 1, 1] = l11
    return out


def _colored_pair(factor_fn, n, fs, rng, density, model_band, band=None):
    """Two real Gaussian series whose cross-spectral matrix is ``density * L L^dag``.

    ``factor_fn(freqs_hz)`` returns ``L`` (see :func:`_factor`) and is used only
    below ``model_band`` (Hz); bins above it are vacuum (identity) and bins above
    ``band`` are zero.  Two-sided density convention: ``E|X_k|^2 = density * fs * n``.
    """
    f = np.fft.rfftfreq(n, 1 / fs)
    xi = (rng.standard_normal((f.size, 2)) + 1j * rng.standard_normal((f.size, 2))) / math.sqrt(2)
    spec = xi * math.sqrt(density * fs * n)
    # the DC bin is dropped below, so the model is never evaluated there
    inside = (f > 0) & (f <= model_band)
    if np.any(inside):
        factor = factor_fn(f[inside])
        xi = spec[inside]
        spec[inside, 1] = factor[:, 1, 0] * xi[:, 0] + factor[:, 1, 1] * xi[:, 1]
        spec[inside, 0] = factor[:, 0, 0] * xi[:, 0]
    spec[0] = 0
    if n % 2 == 0:
        spec[-1] = 0
    if band is not None:
        spec[f > band] = 0
    x = np.fft.irfft(spec, n, axis=0)
    return x[:, 0], x[:, 1]


@functools.lru_cache(maxsize=8)
def _cached_factor(p, chain, jitter, mode, n, fs, model_band):
    f = np.fft.rfftfreq(n, 1 / fs)
    f = f[(f > 0) & (f <= model_band)]
    return _factor(output_noise_model(p, chain, jitter, mode)(TWO_PI * f))


def _white_pair(n, fs, rng, density, band=None):
    return _colored_pair(None, n, fs, rng, density, -1.0, band)


def _require_stable(p, mode):
    # a stationary noise spectrum only exists for a stable system
    report = stability_scan(p, freqs=p.omega_m * np.linspace(0.2, 3.0, 2801), mode=mode)
    if not report.stable:
        kind = "static" if report.static_unstable else "dynamic"
        raise PoleError(f"{kind} instability: the parameter set has no stationary noise spectrum")


def output_noise_model(p: SystemParams, chain: DetectionChain, jitter: DetuningJitter | None = None,
                       mode: str = "full", technical=None):
    """Detected (AM, PM) cross-spectrum of the signal band, relative to shot noise.

    Returns a callable of angular frequency.  ``technical`` optionally maps
    ``"AM"``/``"PM"`` to callables giving classical noise in shot-noise units.
    """
    _require_stable(p, mode)
    jitter = jitter or DetuningJitter()
    eps = chain.eps

    def cross_fn(omega):
        c = detuning_average_cross(p, jitter, omega, mode)
        if technical:
            am = technical.get("AM", lambda w: 0.0)(omega)
            pm = technical.get("PM", lambda w: 0.0)(omega)
            c = c + technical_cross_spectrum(p, omega, am, pm, mode)
        return eps * c + (1 - eps) * np.eye(2)

    return cross_fn


def _envelope(p, chain, n, fs, rng, jitter, mode, drive, technical, carrier, phase, drift_rate,
              model_band, band):
    q0 = chain.shot_noise_level / 4
    if technical:
        model = output_noise_model(p, chain, jitter, mode, technical)

        def factor_fn(f):
            return _factor(model(TWO_PI * f))
    else:
        # the model does not depend on the seed, so batches of records share it
        def factor_fn(f):
            return _cached_factor(p, chain, jitter or DetuningJitter(), mode, n, fs, model_band)
    x_am, x_pm = _colored_pair(factor_fn, n, fs, rng, q0, model_band, band)
    u_i, u_q = _white_pair(n, fs, rng, q0, band)
    t = np.arange(n) / fs
    if drive is not None:
        r = drive_response(p, chain, drive.omega, mode)
        carrier_t = math.sqrt(chain.eps) * drive.amplitude * np.exp(-1j * drive.omega * t)
        x_am = x_am + np.real(r.am_gain * carrier_t)
        x_pm = x_pm + np.real(r.pm_gain * carrier_t)
    phi = phase + drift_rate * t
    return np.exp(1j * phi) * (carrier + x_am + 1j * x_pm) + (u_i + 1j * u_q), phi


def _default_carrier(chain, fs):
    return 1e3 * math.sqrt(chain.shot_noise_level * fs / 2)


def synthesize_iq(p: SystemParams, chain: DetectionChain, duration: float, seed: int,
                  sample_rate: float = DEFAULT_IQ_RATE, jitter: DetuningJitter | None = None,
                  drive: Tone | None = None, mode: str = "full", technical=None,
                  carrier: float | None = None, phase: float | None = None,
                  drift_rate: float = 0.0) -> IQTrace:
    """Baseband I/Q record as it leaves an ideal IF demodulator (before phase correction).

    The static receiver phase is drawn from the seed unless ``phase`` is given;
    ``drift_rate`` (rad/s) adds a linear path-length drift.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    phase = rng.uniform(-np.pi, np.pi) if phase is None else phase
    carrier = _default_carrier(chain, sample_rate) if carrier is None else carrier
    z, phi = _envelope(p, chain, n, sample_rate, rng, jitter, mode, drive, technical, carrier, phase,
                       drift_rate, model_band=sample_rate / 2, band=None)
    meta = {"seed": seed, "duration": duration, "kind": "iq", "phase": phase}
    return IQTrace(z.real, z.imag, sample_rate, None, meta)


def synthesize(p: SystemParams, chain: DetectionChain, duration: float, seed: int,
               drive: Tone | None = None, sample_rate: float = RECORD_SAMPLE_RATE,
               f_if: float = RECORD_IF, jitter: DetuningJitter | None = None, mode: str = "full",
               technical=None, carrier: float | None = None, phase: float | None = None,
               drift_rate: float = 0.0, model_bandwidth: float = 1e6,
               include_floor: bool = True) -> RawTrace:
    """Real heterodyne photocurrent: the IF beat carrying the theory's quadrature noise.

    The envelope is band-limited to ``f_if`` on either side of the carrier,
    standing in for the analog anti-alias filter.  Above ``model_bandwidth`` (Hz)
    the signal band is plain vacuum.  The detector floor is white.
    """
    if not 0 < f_if < sample_rate / 2:
        raise ValueError("f_if must lie between 0 and the Nyquist frequency")
    band = _if_band(f_if, sample_rate)
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    phase = rng.uniform(-np.pi, np.pi) if phase is None else phase
    carrier = _default_carrier(chain, DEFAULT_IQ_RATE) if carrier is None else carrier
    z, _ = _envelope(p, chain, n, sample_rate, rng, jitter, mode, drive, technical, carrier, phase,
                     drift_rate, model_band=min(model_bandwidth, band), band=band)
    t = np.arange(n) / sample_rate
    samples = np.real(z * np.exp(2j * np.pi * f_if * t))
    if include_floor and chain.detector_floor > 0:
        samples += rng.standard_normal(n) * math.sqrt(chain.detector_floor / 4 * sample_rate)
    meta = {
        "seed": seed,
        "duration": duration,
        "f_if": f_if,
        "phase": phase,
        "eps": chain.eps,
        "shot_noise_psd": chain.shot_noise_level,
        "detector_floor": chain.detector_floor,
        "system": p.to_hz(),
    }
    if drive is not None:
        meta["drive_hz"] = drive.omega / TWO_PI
    return RawTrace(samples, sample_rate, meta)


def _if_band(f_if, sample_rate):
    # half-width of the band that fits between DC and Nyquist around the IF
    band = min(f_if, sample_rate / 2 - f_if)
    if band <= 0:
        raise ValueError(f"IF {f_if:g} Hz does not fit below the Nyquist frequency {sample_rate / 2:g} Hz")
    return band


def synthesize_lo(chain: DetectionChain, duration: float, seed: int, sample_rate: float = RECORD_SAMPLE_RATE,
                  f_if: float = RECORD_IF, include_floor: bool = True) -> RawTrace:
    """LO-vacuum record: shot noise only, with no signal carrier."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    band = _if_band(f_if, sample_rate)
    q0 = chain.shot_noise_level / 4
    a_i, a_q = _white_pair(n, sample_rate, rng, q0, band)
    b_i, b_q = _white_pair(n, sample_rate, rng, q0, band)
    t = np.arange(n) / sample_rate
    samples = np.real((a_i + b_i + 1j * (a_q + b_q)) * np.exp(2j * np.pi * f_if * t))
    if include_floor and chain.detector_floor > 0:
        samples += rng.standard_normal(n) * math.sqrt(chain.detector_floor / 4 * sample_rate)
    meta = {"seed": seed, "duration": duration, "f_if": f_if, "kind": "lo", "p_lo": chain.p_lo,
            "shot_noise_psd": chain.shot_noise_level, "detector_floor": chain.detector_floor}
    return RawTrace(samples, sample_rate, meta)


def decimation_filter(decimation: int, numtaps: int | None = None, passband: float = 0.6):
    """Linear-phase anti-alias FIR with cutoff at ``passband`` times the output Nyquist frequency."""
    if numtaps is None:
        numtaps = 50 * decimation + 1
    return scipy.signal.firwin(numtaps, passband / decimation, window=("kaiser", 8.0))


def demodulate_if(raw: RawTrace, f_if: float = RECORD_IF, decimation: int | None = None,
                  out_rate: float = DEFAULT_IQ_RATE) -> IQTrace:
    """Mix the photocurrent down from ``f_if`` and decimate to baseband I/Q.

    The anti-alias filter passes 60 % of the output Nyquist band flat.  Its
    group delay is compensated, and output samples the filter cannot fully
    see are discarded; ``metadata["t0"]`` records the resulting start time.
    """
    fs = raw.sample_rate
    if decimation is None:
        decimation = fs / out_rate
        if abs(decimation - round(decimation)) > 1e-9:
            raise ValueError("sample_rate / out_rate must be an integer")
        decimation = int(round(decimation))
    if not 0 < f_if < fs / 2:
        raise ValueError("f_if must lie below the Nyquist frequency")
    if f_if + fs / decimation / 2 > fs / 2:
        raise ValueError("demodulated band would alias: f_if + out_rate/2 exceeds Nyquist")
    t = np.arange(raw.samples.size) / fs
    mixed = 2 * raw.samples * np.exp(-2j * np.pi * f_if * t)
    taps = decimation_filter(decimation)
    iq = scipy.signal.resample_poly(mixed, 1, decimation, window=taps)
    # drop output samples whose filter support runs past either end of the record
    settle = -(-(taps.size // 2) // decimation)
    if iq.size <= 2 * settle:
        raise ValueError("trace too short for the decimation filter")
    iq = iq[settle:-settle]
    meta = dict(raw.metadata)
    meta["t0"] = meta.get("t0", 0.0) + settle * decimation / fs
    return IQTrace(iq.real, iq.imag, fs / decimation, None, meta)


def boxcar_length(sample_rate: float, cutoff: float) -> int:
    """Moving-average length (samples) whose one-sided noise-equivalent bandwidth is ``cutoff``.

    A boxcar of duration T has ENBW 1/(2T); 10 Hz corresponds to 50 ms.
    """
    return max(1, int(round(sample_rate / (2 * cutoff))))


def phase_drift_correct(iq: IQTrace, cutoff: float = 10.0, min_snr: float = 10.0) -> IQTrace:
    """Rotate I/Q so the slowly varying mean field lies along I (AM).

    The drift is the phase of a boxcar-smoothed copy of the trace (odd length,
    see :func:`boxcar_length`); a boxcar longer than the record reduces to a
    single static rotation by the phase of the mean.
    """
    z = iq.complex
    n = z.size
    if n == 0:
        raise ValueError("empty trace")
    length = boxcar_length(iq.sample_rate, cutoff) | 1
    if length >= n:
        smooth = np.full(n, z.mean())
        eff = n
    else:
        # first-order Savitzky-Golay is the plain boxcar in the interior and a
        # local line fit over the first/last window, so ramps do not bend at the edges
        smooth = (scipy.signal.savgol_filter(z.real, length, 1, mode="interp")
                  + 1j * scipy.signal.savgol_filter(z.imag, length, 1, mode="interp"))
        eff = length
    noise = np.std(z - smooth)
    if np.min(np.abs(smooth)) <= min_snr * noise / math.sqrt(eff):
        raise DegenerateTraceError("mean field is indistinguishable from noise; cannot reference the phase")
    phi = np.unwrap(np.angle(smooth))
    rotated = z * np.exp(-1j * phi)
    return IQTrace(rotated.real, rotated.imag, iq.sample_rate, phi, dict(iq.metadata))


def boxcar_response(freq_hz, sample_rate: float, cutoff: float = 10.0):
    """Magnitude response of the phase-tracking boxcar at ``freq_hz``."""
    length = boxcar_length(sample_rate, cutoff) | 1
    w = TWO_PI * np.asarray(freq_hz, dtype=float) / sample_rate
    num = np.sin(length * w / 2)
    den = length * np.sin(w / 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        h = np.where(np.abs(den) < 1e-300, 1.0, num / den)
    return np.abs(h)


@dataclass(frozen=True)
class PSDEstimate:
    """One-sided (or two-sided) Welch PSD; ``freqs_hz`` in Hz, ``psd`` per Hz."""

    freqs_hz: np.ndarray
    psd: np.ndarray
    n_segments: int
    nperseg: int
    noverlap: int
    window: str
    sample_rate: float
    onesided: bool = True

    @property
    def omega(self) -> np.ndarray:
        return TWO_PI * self.freqs_hz

    @property
    def bin_width(self) -> float:
        return self.sample_rate / self.nperseg

    def relative_error(self, n_records: int = 1) -> float:
        """Standard deviation of each bin relative to its mean, for Gaussian data."""
        return math.sqrt(welch_variance_factor(self.n_segments, self.window, self.nperseg, self.noverlap) / n_records)


def welch_variance_factor(n_segments: int, window: str, nperseg: int, noverlap: int) -> float:
    """Var(P)/E(P)^2 of a Welch average, including correlation between overlapping segments."""
    w = scipy.signal.get_window(window, nperseg)
    step = nperseg - noverlap
    total = 1.0
    for j in range(1, n_segments):
        shift = j * step
        if shift >= nperseg:
            break
        rho = np.sum(w[: nperseg - shift] * w[shift:]) / np.sum(w**2)
        total += 2 * (1 - j / n_segments) * rho**2
    return total / n_segments


def welch_psd(trace, sample_rate: float | None = None, segment_length: int | None = None,
              overlap: float = 0.5, window: str = "hann", onesided: bool = True) -> PSDEstimate:
    """Welch PSD with density scaling: white noise of variance s^2 gives s^2/fs two-sided.

    ``trace`` is a real array (``sample_rate`` required) or a :class:`RawTrace`.
    The default segment gives 1 kHz resolution.
    """
    if isinstance(trace, RawTrace):
        x, fs = trace.samples, trace.sample_rate
    else:
        x, fs = np.asarray(trace, dtype=float), sample_rate
    if fs is None:
        raise ValueError("sample_rate is required for bare arrays")
    if x.size == 0:
        raise ValueError("empty trace")
    nperseg = int(round(fs / 1e3)) if segment_length is None else int(segment_length)
    if nperseg > x.size:
        raise ValueError("segment_length exceeds the trace length")
    noverlap = int(round(overlap * nperseg))
    f, pxx = scipy.signal.welch(x, fs, window=window, nperseg=nperseg, noverlap=noverlap,
                                detrend="constant", return_onesided=onesided, scaling="density")
    n_segments = 1 + (x.size - nperseg) // (nperseg - noverlap)
    if not onesided:
        f, pxx = np.fft.fftshift(f), np.fft.fftshift(pxx)
    return PSDEstimate(f, pxx, n_segments, nperseg, noverlap, window, fs, onesided)


def expected_welch(psd_fn, freqs_hz, sample_rate: float, nperseg: int, window: str = "hann",
                   oversample: int = 16, half_width: int = 8) -> np.ndarray:
    """Mean of a Welch estimate for a process with one-sided PSD ``psd_fn(freq_hz)``.

    Convolves the model with the window's spectral kernel over ``half_width``
    bins on either side, sampled ``oversample`` times per bin.
    """
    w = scipy.signal.get_window(window, nperseg)
    df = sample_rate / nperseg
    k = half_width * oversample
    offsets = np.arange(-k, k + 1) / oversample * df
    kernel = np.abs(np.fft.fft(w, nperseg * oversample)) ** 2
    kernel = np.concatenate([kernel[-k:], kernel[: k + 1]])
    kernel /= kernel.sum()
    freqs_hz = np.asarray(freqs_hz, dtype=float)
    grid = np.abs(freqs_hz[:, None] + offsets[None, :])
    return np.sum(psd_fn(grid) * kernel[None, :], axis=1)


@dataclass(frozen=True)
class SuperhetComponents:
    """Complex amplitude of the drive tone in each quadrature: in-phase (real) and quadrature (imag)."""

    drive_freq: float
    am: complex
    pm: complex

    @property
    def am_i(self) -> float:
        return self.am.real

    @property
    def am_q(self) -> float:
        return self.am.imag

    @property
    def pm_i(self) -> float:
        return self.pm.real

    @property
    def pm_q(self) -> float:
        return self.pm.imag

    def normalized(self, reference: "SuperhetComponents") -> tuple:
        """AM and PM components divided by the reference's in-phase AM amplitude."""
        return self.am / reference.am, self.pm / reference.am


def superheterodyne(trace: IQTrace, omega_d: float) -> SuperhetComponents:
    """Second demodulation of the AM and PM records at the drive frequency (rad/s).

    A tone ``Re[c exp(-i omega_d t)]`` returns ``c``, with ``t`` measured from
    the start of the raw record (``metadata["t0"]`` holds the offset of the first sample).
    """
    f_d = omega_d / TWO_PI
    if not 0 < f_d < trace.sample_rate / 2:
        raise ValueError("drive frequency lies outside the demodulated band")
    t = trace.metadata.get("t0", 0.0) + np.arange(trace.i.size) / trace.sample_rate
    ref = np.exp(1j * omega_d * t)
    n = trace.i.size
    am = 2 * np.sum((trace.am - trace.am.mean()) * ref) / n
    pm = 2 * np.sum((trace.pm - trace.pm.mean()) * ref) / n
    return SuperhetComponents(float(omega_d), complex(am), complex(pm))


def rectified_power(component: complex, noise_psd: float, duration: float) -> float:
    """Squared tone magnitude with the rectified shot-noise contribution ``2 S / T`` removed."""
    return abs(component) ** 2 - 2 * noise_psd / duration


@dataclass(frozen=True)
class LinearityReport:
    powers: np.ndarray
    variances: np.ndarray
    slope: float
    intercept: float
    intercept_err: float
    residuals: np.ndarray
    tolerance: float

    @property
    def max_relative_residual(self) -> float:
        return float(np.max(np.abs(self.residuals)))

    @property
    def passed(self) -> bool:
        return self.max_relative_residual <= self.tolerance


def band_variance(raw: RawTrace, center: float, bandwidth: float, segment_length: int | None = None) -> float:
    """Power of the photocurrent within ``center +- bandwidth/2`` (Hz), from its Welch PSD."""
    est = welch_psd(raw, segment_length=segment_length or int(raw.sample_rate / 1e4))
    sel = np.abs(est.freqs_hz - center) <= bandwidth / 2
    return float(np.sum(est.psd[sel]) * est.bin_width)


def shot_noise_calibration(traces, center: float = RECORD_IF, bandwidth: float | None = None,
                           tolerance: float = 0.017) -> LinearityReport:
    """Linear fit of band variance against LO power.

    ``traces`` is a sequence of ``(p_lo_watts, RawTrace)`` pairs.  The default
    band spans 90 % of the detector band around ``center``, i.e. the
    photocurrent variance apart from DC and the Nyquist edge.  A band
    power has a fixed relative scatter, so each point is weighted by the
    inverse of its measured variance.  Residuals are relative to the fitted line.
    """
    traces = list(traces)
    if len(traces) < 3:
        raise ValueError("linearity check needs at least 3 LO power levels")
    powers = np.array([float(pw) for pw, _ in traces])
    if bandwidth is None:
        nyquist = traces[0][1].sample_rate / 2
        bandwidth = 0.9 * 2 * min(center, nyquist - center)
    variances = np.array([band_variance(tr, center, bandwidth) for _, tr in traces])
    w = 1.0 / variances
    design = np.stack([powers, np.ones_like(powers)], 1)
    coef, *_ = np.linalg.lstsq(design * w[:, None], variances * w, rcond=None)
    fitted = design @ coef
    resid = variances - fitted
    dof = max(len(powers) - 2, 1)
    wd = design * w[:, None]
    cov = np.linalg.inv(wd.T @ wd) * np.sum((resid * w) ** 2) / dof
    return LinearityReport(powers, variances, float(coef[0]), float(coef[1]), float(np.sqrt(cov[1, 1])),
                           resid / fitted, tolerance)
