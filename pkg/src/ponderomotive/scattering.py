"""Bogoliubov transfer of vacuum input fluctuations to intracavity and output fields.

Every per-frequency transfer acts on the pair ``[a_in(w), a_in^dagger(-w)]``.
The conjugate row of a matrix is ``conj(.)`` of the first row evaluated at ``-w``.

Quadratures are taken relative to the mean field:
``X_AM = (x + x^dagger) / 2`` and ``X_PM = (x - x^dagger) / 2i``, and the
detection quadrature at angle ``theta`` is ``cos(theta) X_AM + sin(theta) X_PM``,
so ``theta`` rotates from AM toward PM.  Spectra are symmetrized and expressed
relative to shot noise (vacuum = 1 in every quadrature).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_model import SystemParams, cavity_filter, gain


@dataclass(frozen=True)
class ScatteringMatrix:
    """Per-frequency 2x2 map ``[a_in(w), a_in^dag(-w)] -> [x(w), x^dag(-w)]``."""

    freqs: np.ndarray
    m11: np.ndarray
    m12: np.ndarray
    m21: np.ndarray
    m22: np.ndarray

    def __post_init__(self):
        freqs = np.atleast_1d(np.asarray(self.freqs, dtype=float))
        object.__setattr__(self, "freqs", freqs)
        for name in ("m11", "m12", "m21", "m22"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=complex), freqs.shape).copy()
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.freqs.size

    def as_array(self) -> np.ndarray:
        """Stack into an ``(n, 2, 2)`` complex array."""
        return np.stack([np.stack([self.m11, self.m12], -1), np.stack([self.m21, self.m22], -1)], -2)

    def commutator_residual(self) -> np.ndarray:
        """``|m11|^2 - |m12|^2``; equals 1 for a transfer that preserves the field commutator."""
        return np.abs(self.m11) ** 2 - np.abs(self.m12) ** 2

    def quadrature_rows(self):
        """Input coefficients of the AM and PM quadratures, each shaped ``(n, 2)``."""
        row1 = np.stack([self.m11, self.m12], -1)
        row2 = np.stack([self.m21, self.m22], -1)
        return (row1 + row2) / 2, (row1 - row2) / 2j


@dataclass(frozen=True)
class QuadratureSpectrum:
    """Symmetrized noise power in one quadrature, relative to shot noise."""

    freqs: np.ndarray
    theta: float
    values: np.ndarray

    def __post_init__(self):
        freqs = np.atleast_1d(np.asarray(self.freqs, dtype=float))
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if freqs.shape != values.shape:
            raise ValueError("freqs and values must have equal shapes")
        if np.any(values < 0):
            raise ValueError("quadrature spectrum must be nonnegative")
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.freqs.size


def intracavity_transfer(p: SystemParams, freqs, mode: str = "full") -> ScatteringMatrix:
    """Input vacuum to intracavity field, for the field rescaled by ``sqrt(kappa/2)``.

    With that scaling the empty resonant cavity passes vacuum at unit level at DC,
    and the output is ``2 * intracavity - identity``.
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))

    def first_row(w):
        h = cavity_filter(p, w)
        h_conj = np.conj(cavity_filter(p, -w))
        g = gain(p, w, mode)
        return h * (1 + g / 2), h_conj * g / 2

    m11, m12 = first_row(freqs)
    m11n, m12n = first_row(-freqs)
    return ScatteringMatrix(freqs, m11, m12, np.conj(m12n), np.conj(m11n))


def output_transfer(p: SystemParams, freqs, mode: str = "full") -> ScatteringMatrix:
    """Input vacuum to the output field through ``a_out = sqrt(2 kappa) a - a_in``."""
    s = intracavity_transfer(p, freqs, mode)
    return ScatteringMatrix(s.freqs, 2 * s.m11 - 1, 2 * s.m12, 2 * s.m21, 2 * s.m22 - 1)


def quadrature_cross_spectrum(s: ScatteringMatrix) -> np.ndarray:
    """Symmetrized (AM, PM) cross-spectral matrix for vacuum input, shape ``(n, 2, 2)``.

    Entry ``[p, q]`` is ``<X_p(w)^dag X_q(w)>`` relative to shot noise; the matrix
    is Hermitian and positive semidefinite, and equals the identity for an all-pass.
    """
    r_am, r_pm = s.quadrature_rows()
    out = np.empty(r_am.shape[:-1] + (2, 2), dtype=complex)
    out[..., 0, 0] = 2 * np.sum(np.abs(r_am) ** 2, -1)
    out[..., 1, 1] = 2 * np.sum(np.abs(r_pm) ** 2, -1)
    out[..., 0, 1] = 2 * np.sum(r_am.conj() * r_pm, -1)
    out[..., 1, 0] = np.conj(out[..., 0, 1])
    return out


def project_cross_spectrum(cross: np.ndarray, theta) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.real(c * c * cross[..., 0, 0] + s * s * cross[..., 1, 1] + 2 * c * s * np.real(cross[..., 0, 1]))


def vacuum_quadrature_psd(s: ScatteringMatrix, theta: float) -> QuadratureSpectrum:
    """Noise in quadrature ``theta`` for vacuum input; 1 for any all-pass transfer."""
    values = project_cross_spectrum(quadrature_cross_spectrum(s), theta)
    return QuadratureSpectrum(s.freqs, float(theta), np.clip(values, 0.0, None))


@dataclass(frozen=True)
class SqueezingMap:
    """Relative PSD over quadrature angle (rows) and frequency (columns)."""

    freqs: np.ndarray
    thetas: np.ndarray
    values: np.ndarray

    @property
    def squeezed(self) -> np.ndarray:
        return self.values < 1.0

    def minimum(self, freq_range=None):
        """Return ``(value, theta, freq)`` at the deepest squeezing, optionally within a frequency range."""
        cols = np.ones(self.freqs.size, dtype=bool)
        if freq_range is not None:
            cols = (self.freqs >= freq_range[0]) & (self.freqs <= freq_range[1])
            if not cols.any():
                raise ValueError("frequency range selects no grid points")
        sub = self.values[:, cols]
        i, j = np.unravel_index(np.argmin(sub), sub.shape)
        return float(sub[i, j]), float(self.thetas[i]), float(self.freqs[cols][j])


def map_from_cross_spectrum(freqs, thetas, cross) -> SqueezingMap:
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    values = np.stack([project_cross_spectrum(cross, t) for t in thetas])
    return SqueezingMap(np.asarray(freqs, dtype=float), thetas, np.clip(values, 0.0, None))


def squeezing_map(p: SystemParams, freqs, thetas, mode: str = "full") -> SqueezingMap:
    """Output-field vacuum noise over a (theta, omega) grid, relative to shot noise."""
    s = output_transfer(p, freqs, mode)
    return map_from_cross_spectrum(s.freqs, thetas, quadrature_cross_spectrum(s))
