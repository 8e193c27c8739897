"""Heterodyne detection chain: losses, detuning jitter, technical backgrounds.

Absolute spectral densities are in W^2/Hz.  Relative spectra (from
:mod:`ponderomotive.scattering`) are densities normalized to shot noise.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.constants

from .core_model import TWO_PI, ParameterError, PoleError, SystemParams
from .scattering import (
    QuadratureSpectrum,
    map_from_cross_spectrum,
    output_transfer,
    project_cross_spectrum,
    quadrature_cross_spectrum,
)

#: Brownian technical-noise coefficients, in uW^2 Hz (background = A / nu^2 with nu in Hz).
BROWNIAN_COEFFICIENTS = {"PM": 460.0, "AM": 120.0}

#: Efficiency of the photon-counting monitor port; documented only, not modeled.
SPCM_EFFICIENCY = 0.014

PROBE_WAVELENGTH = 780e-9


@dataclass(frozen=True)
class DetectionChain:
    """Losses and calibration of the balanced heterodyne receiver.

    ``shot_noise_psd`` pins the LO shot-noise level directly (a calibration
    anchor); when omitted the level is ``p_lo * hbar * omega_lo``.
    """

    eps_cav: float = 1.0
    eps_det: float = 1.0
    p_lo: float = 980e-6
    omega_lo: float = TWO_PI * scipy.constants.c / PROBE_WAVELENGTH
    detector_floor: float = 0.0
    shot_noise_psd: float | None = None

    def __post_init__(self):
        for name in ("eps_cav", "eps_det"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ParameterError(f"{name} must lie in (0, 1], got {v}")
        if self.p_lo <= 0:
            raise ParameterError("p_lo must be > 0")
        if self.omega_lo <= 0:
            raise ParameterError("omega_lo must be > 0")
        if self.detector_floor < 0:
            raise ParameterError("detector_floor must be >= 0")
        if self.shot_noise_psd is not None and self.shot_noise_psd <= 0:
            raise ParameterError("shot_noise_psd must be > 0")

    @classmethod
    def calibrated(cls, vacuum_psd: float, eps: float, detector_floor: float = 0.0, **kw) -> "DetectionChain":
        """Chain whose predicted LO-vacuum PSD (floor included) equals ``vacuum_psd``."""
        if vacuum_psd <= detector_floor:
            raise ParameterError("vacuum_psd must exceed the detector floor")
        return cls(eps_cav=1.0, eps_det=eps, detector_floor=detector_floor,
                   shot_noise_psd=vacuum_psd - detector_floor, **kw)

    @property
    def eps(self) -> float:
        return self.eps_cav * self.eps_det

    @property
    def shot_noise_level(self) -> float:
        if self.shot_noise_psd is not None:
            return self.shot_noise_psd
        return self.p_lo * scipy.constants.hbar * self.omega_lo

    def vacuum_level(self, include_floor: bool = True) -> float:
        return self.shot_noise_level + (self.detector_floor if include_floor else 0.0)


def nominal_chain() -> DetectionChain:
    """10.1 % overall efficiency, calibrated to the measured 203.78 pW^2/Hz LO-vacuum level."""
    return DetectionChain.calibrated(vacuum_psd=203.78e-24, eps=0.101, detector_floor=0.9e-24)


@dataclass(frozen=True)
class DetectedPSD:
    """Detected power spectral density with its shot-noise reference."""

    freqs: np.ndarray
    psd: np.ndarray
    shot_noise: float
    floor: float = 0.0
    theta: float | None = None

    @property
    def relative(self) -> np.ndarray:
        """PSD divided by the LO-vacuum PSD (detector floor included in both)."""
        return self.psd / (self.shot_noise + self.floor)


def heterodyne_psd(spec: QuadratureSpectrum, chain: DetectionChain, bin_width: float = 1.0) -> DetectedPSD:
    """Lossless heterodyne PSD ``(SN / 2) * (1 + bin_width * <X X>)``.

    The leading 1 is the demodulated image-band vacuum.  ``bin_width`` converts
    per-bin variances to densities; leave it at 1 for shot-noise-normalized densities.
    """
    sn = chain.shot_noise_level
    return DetectedPSD(spec.freqs, sn / 2 * (1 + bin_width * spec.values), sn, theta=spec.theta)


def apply_loss(psd: DetectedPSD, chain: DetectionChain) -> DetectedPSD:
    """Blend with uncorrelated shot noise: ``eps * S + (1 - eps) * SN``."""
    eps = chain.eps
    return DetectedPSD(psd.freqs, eps * psd.psd + (1 - eps) * psd.shot_noise, psd.shot_noise,
                       psd.floor, psd.theta)


def add_detector_floor(psd: DetectedPSD, chain: DetectionChain) -> DetectedPSD:
    return DetectedPSD(psd.freqs, psd.psd + chain.detector_floor, psd.shot_noise,
                       psd.floor + chain.detector_floor, psd.theta)


def detected_psd(spec: QuadratureSpectrum, chain: DetectionChain, include_floor: bool = False) -> DetectedPSD:
    """Full chain: heterodyne, loss, and (optionally) the detector floor, applied last."""
    out = apply_loss(heterodyne_psd(spec, chain), chain)
    return add_detector_floor(out, chain) if include_floor else out


def detected_relative(values, eps: float):
    """Detected PSD relative to shot noise for a relative output spectrum and efficiency ``eps``."""
    return 1 - eps * (1 - np.asarray(values)) / 2


@dataclass(frozen=True)
class DetuningJitter:
    """Gaussian spread of probe detunings, in units of kappa.

    ``mean_delta_over_kappa=None`` centers the distribution on the detuning of
    the system parameters.  ``method`` is ``"gauss-hermite"`` or ``"trapezoid"``;
    the latter integrates a distribution truncated at ``truncate`` standard deviations.
    """

    mean_delta_over_kappa: float | None = None
    sigma_over_kappa: float = 0.0
    n_points: int = 15
    method: str = "gauss-hermite"
    truncate: float = 4.0

    def __post_init__(self):
        if self.sigma_over_kappa < 0:
            raise ParameterError("sigma_over_kappa must be >= 0")
        if self.n_points < 1:
            raise ParameterError("n_points must be >= 1")
        if self.method not in ("gauss-hermite", "trapezoid"):
            raise ParameterError(f"unknown jitter method {self.method!r}")

    def nodes(self, p: SystemParams):
        """Detunings (rad/s) and normalized weights."""
        mean = p.delta / p.kappa if self.mean_delta_over_kappa is None else self.mean_delta_over_kappa
        if self.sigma_over_kappa == 0 or self.n_points == 1:
            return np.array([mean * p.kappa]), np.array([1.0])
        if self.method == "gauss-hermite":
            x, w = np.polynomial.hermite_e.hermegauss(self.n_points)
        else:
            x = np.linspace(-self.truncate, self.truncate, self.n_points)
            w = np.exp(-x**2 / 2)
            w[[0, -1]] /= 2
        w = w / w.sum()
        return (mean + self.sigma_over_kappa * x) * p.kappa, w


def quantum_run_jitter() -> DetuningJitter:
    return DetuningJitter(mean_delta_over_kappa=-0.575, sigma_over_kappa=0.14)


def detuning_average_cross(p: SystemParams, jitter: DetuningJitter, freqs, mode: str = "full") -> np.ndarray:
    """Output (AM, PM) cross-spectral matrix averaged over the detuning distribution.

    The photon number is held fixed while the detuning varies.
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    deltas, weights = jitter.nodes(p)
    acc = np.zeros((freqs.size, 2, 2), dtype=complex)
    for delta, w in zip(deltas, weights):
        try:
            s = output_transfer(p.replace(delta=float(delta)), freqs, mode)
        except PoleError as exc:
            raise PoleError(f"gain pole at quadrature node delta/kappa = {delta / p.kappa:.4f}: {exc}") from exc
        acc += w * quadrature_cross_spectrum(s)
    return acc


def detuning_average(p: SystemParams, jitter: DetuningJitter, theta: float, freqs, mode: str = "full") -> QuadratureSpectrum:
    """Relative output spectrum in quadrature ``theta``, convolved with the detuning spread."""
    cross = detuning_average_cross(p, jitter, freqs, mode)
    values = project_cross_spectrum(cross, theta)
    return QuadratureSpectrum(np.atleast_1d(np.asarray(freqs, dtype=float)), float(theta), np.clip(values, 0, None))


def detected_squeezing_map(p, jitter, chain, freqs, thetas, mode="full"):
    """Detected PSD relative to shot noise over (theta, omega), including jitter and loss."""
    smap = map_from_cross_spectrum(freqs, thetas, detuning_average_cross(p, jitter, freqs, mode))
    return type(smap)(smap.freqs, smap.thetas, detected_relative(smap.values, chain.eps))


def technical_background(quadrature: str, freqs, coefficient: float | None = None):
    """Brownian background ``A / nu^2`` with ``nu = omega / 2 pi`` in Hz.

    With the default coefficients the result is in uW^2/Hz.
    """
    key = quadrature.upper()
    if key not in BROWNIAN_COEFFICIENTS:
        raise ValueError(f"quadrature must be 'AM' or 'PM', got {quadrature!r}")
    a = BROWNIAN_COEFFICIENTS[key] if coefficient is None else coefficient
    nu = np.asarray(freqs, dtype=float) / TWO_PI
    if np.any(nu <= 0):
        raise ValueError("technical background is undefined at nu <= 0")
    return a / nu**2


def technical_cross_spectrum(p: SystemParams, freqs, am_rel=0.0, pm_rel=0.0, mode: str = "full") -> np.ndarray:
    """Extra output cross-spectrum from classical technical noise, relative to shot noise.

    ``am_rel`` is classical amplitude noise on the input field, scaled so that the
    empty cavity would show it at the output with that relative level; it drives
    radiation pressure and is transduced by the amplifier.  ``pm_rel`` is phase
    noise added at the output.
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    am_rel = np.broadcast_to(np.asarray(am_rel, dtype=float), freqs.shape)
    pm_rel = np.broadcast_to(np.asarray(pm_rel, dtype=float), freqs.shape)

    def response(params):
        r_am, r_pm = output_transfer(params, freqs, mode).quadrature_rows()
        return np.stack([r_am.sum(-1), r_pm.sum(-1)], -1)

    v = response(p)
    v0 = response(p.replace(n_bar=0.0))
    scale = am_rel / np.sum(np.abs(v0) ** 2, -1)
    extra = scale[:, None, None] * (v.conj()[:, :, None] * v[:, None, :])
    extra[:, 1, 1] += pm_rel
    return extra


@dataclass(frozen=True)
class BandRatio:
    band: tuple
    ratio: float
    stderr: float
    n_bins: int


@dataclass(frozen=True)
class SqueezingReport:
    bands: list = field(default_factory=list)
    detector_floor: float = 0.0

    def to_dict(self) -> dict:
        def clean(x):
            return None if isinstance(x, float) and math.isnan(x) else x

        return {
            "detector_floor_w2_per_hz": self.detector_floor,
            "bands": [
                {
                    "band_hz": [b.band[0] / TWO_PI, b.band[1] / TWO_PI],
                    "ratio": b.ratio,
                    "stderr": clean(b.stderr),
                    "n_bins": b.n_bins,
                }
                for b in self.bands
            ],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def squeezing_report(detected, vacuum, freqs, bands, detected_err=None, vacuum_err=None,
                     detector_floor: float = 0.0) -> SqueezingReport:
    """Mean detected/vacuum ratio per frequency band with its standard error.

    ``bands`` is a list of ``(low, high)`` angular-frequency intervals (inclusive).
    If per-bin uncertainties are supplied they are propagated; otherwise the
    spread of the per-bin ratios is used.  ``detector_floor`` is subtracted from
    both spectra before taking the ratio.
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    d = np.broadcast_to(np.asarray(detected, dtype=float), freqs.shape) - detector_floor
    v = np.broadcast_to(np.asarray(vacuum, dtype=float), freqs.shape) - detector_floor
    have_err = detected_err is not None or vacuum_err is not None
    de = np.broadcast_to(np.asarray(0.0 if detected_err is None else detected_err, dtype=float), freqs.shape)
    ve = np.broadcast_to(np.asarray(0.0 if vacuum_err is None else vacuum_err, dtype=float), freqs.shape)
    if not bands:
        raise ValueError("at least one band is required")
    out = []
    for lo, hi in bands:
        sel = (freqs >= lo) & (freqs <= hi)
        n = int(sel.sum())
        if n == 0:
            raise ValueError(f"band [{lo:.6g}, {hi:.6g}] rad/s contains no bins")
        r = d[sel] / v[sel]
        if have_err:
            rel = np.hypot(de[sel] / d[sel], ve[sel] / v[sel])
            stderr = float(np.sqrt(np.sum((r * rel) ** 2)) / n)
        elif n > 1:
            stderr = float(np.std(r, ddof=1) / np.sqrt(n))
        else:
            stderr = float("nan")
        out.append(BandRatio((float(lo), float(hi)), float(np.mean(r)), stderr, n))
    return SqueezingReport(out, detector_floor)
