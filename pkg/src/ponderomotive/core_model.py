"""Scalar response functions of a linearized, detuned optomechanical cavity.

All frequencies are angular (rad/s).  The probe detuning ``delta`` is signed;
``delta < 0`` places the probe below the cavity resonance (cooling side).
"""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi

GAIN_MODES = ("full", "simplified", "exact")


class ParameterError(ValueError):
    """Raised for physically invalid or inconsistent parameter sets."""


class PoleError(ArithmeticError):
    """Raised when a response function is evaluated at (or too near) a pole."""


class LowQWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the optomechanical system, in rad/s.

    Parameters
    ----------
    kappa : float
        Cavity half-linewidth.
    delta : float
        Probe-cavity detuning (signed).
    omega_m : float
        Bare mechanical frequency.
    gamma_m : float
        Mechanical damping rate.
    g_om : float
        Single-phonon optomechanical coupling rate.
    n_bar : float
        Mean intracavity photon number.
    q_warn : float
        A :class:`LowQWarning` is issued when ``omega_m / gamma_m`` is below
        this value; the linear theory assumes a high-Q oscillator.
    """

    kappa: float
    delta: float
    omega_m: float
    gamma_m: float
    g_om: float
    n_bar: float
    q_warn: float = dataclasses.field(default=10.0, repr=False, compare=False)

    def __post_init__(self):
        for name in ("kappa", "delta", "omega_m", "gamma_m", "g_om", "n_bar"):
            if not np.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if self.kappa <= 0:
            raise ParameterError("kappa must be > 0")
        if self.omega_m <= 0:
            raise ParameterError("omega_m must be > 0")
        if self.gamma_m <= 0:
            raise ParameterError("gamma_m must be > 0")
        if self.g_om < 0:
            raise ParameterError("g_om must be >= 0")
        if self.n_bar < 0:
            raise ParameterError("n_bar must be >= 0")
        if self.omega_m / self.gamma_m < self.q_warn:
            warnings.warn(
                f"omega_m/gamma_m = {self.omega_m / self.gamma_m:.3g} is below "
                f"{self.q_warn:g}; the high-Q approximation is questionable",
                LowQWarning,
                stacklevel=3,
            )

    @classmethod
    def from_hz(cls, kappa_hz, delta_hz, omega_m_hz, gamma_m_hz, g_hz, n_bar, **kw):
        """Build from ordinary frequencies in Hz."""
        return cls(
            kappa=TWO_PI * kappa_hz,
            delta=TWO_PI * delta_hz,
            omega_m=TWO_PI * omega_m_hz,
            gamma_m=TWO_PI * gamma_m_hz,
            g_om=TWO_PI * g_hz,
            n_bar=n_bar,
            **kw,
        )

    def to_hz(self) -> dict:
        return {
            "kappa_hz": self.kappa / TWO_PI,
            "delta_hz": self.delta / TWO_PI,
            "omega_m_hz": self.omega_m / TWO_PI,
            "gamma_m_hz": self.gamma_m / TWO_PI,
            "g_hz": self.g_om / TWO_PI,
            "n_bar": self.n_bar,
        }

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)

    def with_shifted_frequency(self, omega_s: float) -> "SystemParams":
        """Return a copy whose photon number reproduces the static shifted frequency.

        Fits of measured spectra report ``omega_s`` rather than ``n_bar``; this
        inverts ``omega_s**2 = omega_m**2 + delta * s_opt(0)`` for ``n_bar``.
        """
        shift = omega_s**2 - self.omega_m**2
        if shift == 0:
            return self.replace(n_bar=0.0)
        if self.delta == 0 or self.g_om == 0:
            raise ParameterError("cannot shift the resonance with delta == 0 or g_om == 0")
        n_bar = shift * (self.kappa**2 + self.delta**2) / (4 * self.g_om**2 * self.omega_m * self.delta)
        if n_bar < 0:
            raise ParameterError(
                f"omega_s = {omega_s:.6g} rad/s is not reachable at delta = {self.delta:.6g} rad/s"
            )
        return self.replace(n_bar=float(n_bar))


@dataclass(frozen=True)
class ComplexSpectrum:
    """Complex response values on an increasing angular-frequency grid."""

    freqs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=float)
        values = np.asarray(self.values, dtype=complex)
        if freqs.ndim != 1 or freqs.shape != values.shape:
            raise ValueError("freqs and values must be 1-D arrays of equal length")
        if freqs.size > 1 and np.any(np.diff(freqs) <= 0):
            raise ValueError("freqs must be strictly increasing")
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.freqs.size

    @property
    def magnitude_db(self) -> np.ndarray:
        """Power in dB, ``20 log10 |values|``."""
        with np.errstate(divide="ignore"):
            return 20 * np.log10(np.abs(self.values))

    @property
    def phase_deg(self) -> np.ndarray:
        return np.degrees(np.unwrap(np.angle(self.values)))


def nominal_params() -> SystemParams:
    """Nominal operating point: 6 intracavity photons, 1 MHz below resonance."""
    return SystemParams.from_hz(
        kappa_hz=1.8e6, delta_hz=-1.0e6, omega_m_hz=155.5e3, gamma_m_hz=1.91e3, g_hz=68e3, n_bar=6.0
    )


def network_run_params() -> SystemParams:
    """Parameters fitted to the classical AM-drive run (shifted resonance at 136.0 kHz)."""
    return nominal_params().with_shifted_frequency(TWO_PI * 136.0e3)


def quantum_run_params() -> SystemParams:
    """Parameters fitted to the shot-noise driven run (detuning -0.575 kappa)."""
    p = SystemParams.from_hz(
        kappa_hz=1.8e6, delta_hz=-0.575 * 1.8e6, omega_m_hz=155.5e3, gamma_m_hz=3.2e3, g_hz=68e3, n_bar=6.0
    )
    return p.with_shifted_frequency(TWO_PI * 140.8e3)


def kappa_coupling(p: SystemParams) -> float:
    """Mirror coupling amplitude sqrt(2 kappa), in sqrt(rad/s)."""
    return float(np.sqrt(2 * p.kappa))


def _cavity_denominator(p, omega):
    return (p.kappa - 1j * omega) ** 2 + p.delta**2


def cavity_filter(p: SystemParams, omega):
    """Dimensionless cavity filter ``kappa (kappa + i(delta - omega)) / ((kappa - i omega)^2 + delta^2)``.

    The full input filter is ``kappa_coupling(p) / p.kappa * cavity_filter(p, omega)``.
    The empty-cavity reflection ``2 * cavity_filter - 1`` is all-pass.
    """
    omega = np.asarray(omega, dtype=float)
    return p.kappa * (p.kappa + 1j * (p.delta - omega)) / _cavity_denominator(p, omega)


def _spring_denominator(p, omega):
    den = p.kappa**2 + p.delta**2 - np.asarray(omega, dtype=float) ** 2
    if np.any(den == 0):
        raise PoleError("kappa**2 + delta**2 == omega**2: optical spring pole")
    return den


def optical_spring(p: SystemParams, omega=0.0):
    """Frequency-dependent stiffening parameter ``s_opt``, rad/s.

    ``4 g^2 n_bar omega_m / (kappa^2 + delta^2 - omega^2)``.
    """
    if p.n_bar == 0 or p.g_om == 0:
        return np.zeros_like(np.asarray(omega, dtype=float))
    return 4 * p.g_om**2 * p.n_bar * p.omega_m / _spring_denominator(p, omega)


def optomechanical_damping(p: SystemParams, omega):
    """Light-induced damping ``2 kappa (omega_m^2 - omega^2) / (kappa^2 + delta^2 - omega^2)``.

    At the shifted resonance this coincides with the linewidth change of the
    full complex susceptibility; it vanishes at ``omega_m`` and is negative above.
    """
    omega = np.asarray(omega, dtype=float)
    return 2 * p.kappa * (p.omega_m**2 - omega**2) / _spring_denominator(p, omega)


def cooperativity(p: SystemParams) -> float:
    return 2 * p.n_bar * p.g_om**2 / (p.gamma_m * p.kappa)


def shifted_frequency(p: SystemParams) -> float:
    """Static optically shifted mechanical frequency ``sqrt(omega_m^2 + delta s_opt(0))``."""
    w2 = p.omega_m**2 + p.delta * optical_spring(p, 0.0)
    if w2 <= 0:
        raise ParameterError("omega_m**2 + delta*s_opt <= 0: statically unstable (imaginary omega_s)")
    return float(np.sqrt(w2))


def gain(p: SystemParams, omega, mode: str = "full", pole_eps: float = 1e-9):
    """Closed-loop optomechanical gain G(omega).

    Parameters
    ----------
    mode : {"full", "simplified", "exact"}
        ``full`` uses the frequency-dependent spring and damping; ``simplified``
        uses the static spring and static shifted frequency; ``exact`` keeps the
        complex cavity susceptibility ``4 g^2 n omega_m / ((kappa - i w)^2 + delta^2)``
        without splitting it into spring and damping.
    pole_eps : float
        A :class:`PoleError` is raised where ``|denominator| < pole_eps * omega_m**2``.
    """
    omega = np.asarray(omega, dtype=float)
    if mode not in GAIN_MODES:
        raise ValueError(f"unknown gain mode {mode!r}; expected one of {GAIN_MODES}")
    if p.n_bar == 0 or p.g_om == 0:
        return np.zeros(omega.shape, dtype=complex)
    if mode == "full":
        s = optical_spring(p, omega)
        num = (1j * p.kappa - p.delta + omega) * s
        den = p.omega_m**2 + p.delta * s - omega**2 - 1j * omega * (p.gamma_m + optomechanical_damping(p, omega))
    elif mode == "simplified":
        s0 = optical_spring(p, 0.0)
        num = (1j * p.kappa - p.delta) * s0 * np.ones_like(omega)
        den = p.omega_m**2 + p.delta * s0 - omega**2 - 1j * omega * (p.gamma_m + optomechanical_damping(p, omega))
    elif mode == "exact":
        s = 4 * p.g_om**2 * p.n_bar * p.omega_m / _cavity_denominator(p, omega)
        num = (1j * p.kappa - p.delta + omega) * s
        den = p.omega_m**2 + p.delta * s - omega**2 - 1j * omega * p.gamma_m
    else:
        raise ValueError(f"unknown gain mode {mode!r}; expected one of {GAIN_MODES}")
    if np.any(np.abs(den) < pole_eps * p.omega_m**2):
        raise PoleError("gain denominator vanishes: undamped or unstable parameter set")
    return num / den


def gain_spectrum(p: SystemParams, freqs, mode: str = "full") -> ComplexSpectrum:
    freqs = np.asarray(freqs, dtype=float)
    return ComplexSpectrum(freqs, gain(p, freqs, mode))
