"""Classical response of the amplifier to a coherent AM drive tone.

Responses are referenced to the cavity-filtered drive, i.e. to what the same
tone produces in the AM quadrature of the empty cavity.  Phases follow the
measurement convention: negative means the response lags the drive.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_model import ParameterError, SystemParams, gain, optical_spring


@dataclass(frozen=True)
class DriveResponse:
    """AM and PM transmission of an AM tone, normalized to the empty cavity."""

    drive_freq: float
    am_gain: complex
    pm_gain: complex

    @property
    def am_gain_db(self) -> float:
        return float(20 * np.log10(abs(self.am_gain)))

    @property
    def pm_gain_db(self) -> float:
        return float(20 * np.log10(abs(self.pm_gain))) if self.pm_gain != 0 else -np.inf


def _am_pm(p, omega, mode):
    g = gain(p, omega, mode)
    g_mirror = np.conj(gain(p, -omega, mode))
    return 1 + (g + g_mirror) / 2, (g - g_mirror) / 2j


def drive_responses(p: SystemParams, freqs, mode: str = "full"):
    """Vectorized ``(am_gain, pm_gain)`` arrays over drive frequencies (rad/s)."""
    return _am_pm(p, np.asarray(freqs, dtype=float), mode)


def drive_response(p: SystemParams, chain=None, omega_d: float = 0.0, mode: str = "full") -> DriveResponse:
    """Complex AM and PM response at one drive frequency.

    ``chain`` is accepted for symmetry with the measurement pipeline; the
    empty-cavity normalization cancels every detection factor.
    """
    am, pm = _am_pm(p, np.asarray(float(omega_d)), mode)
    return DriveResponse(float(omega_d), complex(am), complex(pm))


def response_phase_deg(values) -> np.ndarray:
    """Unwrapped phase relative to the drive, in degrees (lag negative)."""
    values = np.asarray(values)
    if values.ndim == 0:
        return -np.degrees(np.angle(values))
    return -np.degrees(np.unwrap(np.angle(values)))


@dataclass(frozen=True)
class PhaseProfile:
    freqs: np.ndarray
    am_phase_deg: np.ndarray
    pm_phase_deg: np.ndarray

    def crossings(self, which: str, level: float) -> np.ndarray:
        """Frequencies (linear interpolation) where the chosen phase crosses ``level`` degrees."""
        ph = (self.am_phase_deg if which == "am" else self.pm_phase_deg) - level
        idx = np.nonzero(np.sign(ph[1:]) != np.sign(ph[:-1]))[0]
        f0, f1 = self.freqs[idx], self.freqs[idx + 1]
        y0, y1 = ph[idx], ph[idx + 1]
        return f0 - y0 * (f1 - f0) / (y1 - y0)


def phase_profile(p: SystemParams, chain=None, freqs=(), mode: str = "full") -> PhaseProfile:
    """AM and PM phase offsets over an ascending drive-frequency grid."""
    freqs = np.asarray(freqs, dtype=float)
    if freqs.size > 1 and np.any(np.diff(freqs) <= 0):
        raise ValueError("freqs must be ascending")
    am, pm = _am_pm(p, freqs, mode)
    return PhaseProfile(freqs, response_phase_deg(am), response_phase_deg(pm))


@dataclass(frozen=True)
class StabilityReport:
    """Frequencies where the response is both at/above unity gain and phase-advanced.

    ``static_unstable`` marks a spring strong enough to make the shifted
    frequency imaginary.  An empty report means stable.
    """

    flagged_freqs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    static_unstable: bool = False

    @property
    def stable(self) -> bool:
        return not self.static_unstable and self.flagged_freqs.size == 0

    def __bool__(self):
        return not self.stable


def stability_scan(p: SystemParams, chain=None, freqs=(), mode: str = "full") -> StabilityReport:
    freqs = np.asarray(freqs, dtype=float)
    static = p.omega_m**2 + p.delta * optical_spring(p, 0.0) <= 0
    am, _ = _am_pm(p, freqs, mode)
    phase = response_phase_deg(am)
    flagged = freqs[(np.abs(am) >= 1) & (phase > 0)]
    return StabilityReport(flagged, bool(static))


def network_dataset(p: SystemParams, freqs, mode: str = "full") -> dict:
    """Columns of the network-analysis figure: gains in dB and phases in degrees."""
    freqs = np.asarray(freqs, dtype=float)
    if freqs.size < 1:
        raise ParameterError("empty drive-frequency grid")
    am, pm = _am_pm(p, freqs, mode)
    with np.errstate(divide="ignore"):
        return {
            "drive_freq_hz": freqs / (2 * np.pi),
            "am_gain_db": 20 * np.log10(np.abs(am)),
            "am_phase_deg": response_phase_deg(am),
            "pm_gain_db": 20 * np.log10(np.abs(pm)),
            "pm_phase_deg": response_phase_deg(pm),
        }
