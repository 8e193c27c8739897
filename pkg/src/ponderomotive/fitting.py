"""Least-squares fits of spectra and network responses to the linear theory.

The optimizer is a small damped Gauss-Newton (Levenberg-Marquardt) loop with a
finite-difference Jacobian.  Parameters are handled in user units and scaled
internally by their typical magnitude.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core_model import TWO_PI, ParameterError, PoleError, SystemParams
from .detection import DetectionChain, DetuningJitter, detuning_average_cross
from .dsp import expected_welch
from .network_drive import drive_responses

FIT_STATUSES = ("converged", "max-iter", "singular")


class FitError(RuntimeError):
    """A fit did not produce a usable estimate; ``result`` holds the last iterate if any."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class SingularFitError(FitError):
    pass


class ConvergenceError(FitError):
    pass


class UnderdeterminedError(FitError, ValueError):
    pass


class EmptyMaskError(FitError, ValueError):
    pass


@dataclass(frozen=True)
class FitResult:
    """Estimates, 1-sigma uncertainties and optimizer diagnostics."""

    names: tuple
    values: np.ndarray
    errors: np.ndarray
    residual_norm: float
    status: str
    iterations: int
    covariance: np.ndarray | None = None
    residuals: np.ndarray | None = None
    gradient: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in FIT_STATUSES:
            raise ValueError(f"unknown fit status {self.status!r}")
        errs = np.asarray(self.errors, dtype=float)
        if np.any(errs < 0):
            raise ValueError("uncertainties must be nonnegative")

    def __getitem__(self, name):
        return float(self.values[self.names.index(name)])

    def error(self, name) -> float:
        return float(self.errors[self.names.index(name)])

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def as_dict(self) -> dict:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def to_dict(self) -> dict:
        """Structured report: parameters, uncertainties, residual norm, diagnostics."""
        out = {
            "parameters": {n: {"value": float(v), "error": float(e)} for n, v, e in zip(self.names, self.values, self.errors)},
            "residual_norm": float(self.residual_norm),
            "status": self.status,
            "iterations": int(self.iterations),
        }
        out.update({k: v for k, v in self.info.items() if k not in out})
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _jacobian(fun, x, r0, steps):
    jac = np.empty((r0.size, x.size))
    for k in range(x.size):
        dx = np.zeros_like(x)
        dx[k] = steps[k]
        jac[:, k] = (fun(x + dx) - fun(x - dx)) / (2 * steps[k])
    return jac


def levenberg_marquardt(fun, x0, scale=None, names=None, max_iter: int = 200, xtol: float = 1e-10,
                        gtol: float = 1e-12, diff_step: float = 1e-6, lam0: float = 1e-3,
                        absolute_sigma: bool = False) -> FitResult:
    """Minimize ``0.5 * |fun(x)|^2`` by adaptively damped Gauss-Newton steps.

    Parameters
    ----------
    fun : callable
        Residual vector as a function of the parameter vector.
    scale : array_like, optional
        Typical parameter magnitudes; steps and tolerances are taken relative to them.
    xtol : float
        Converged when the scaled step is below ``xtol * (|x_scaled| + xtol)``.
    gtol : float
        Converged when ``|J^T r|_inf`` is below ``gtol`` times ``|J|_F |r|``.
    absolute_sigma : bool
        When False the covariance is rescaled by the reduced chi-square.

    Returns
    -------
    FitResult
        ``status`` is ``"singular"`` if the normal matrix is rank deficient at
        the start or at the solution.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    scale = np.ones(n) if scale is None else np.abs(np.asarray(scale, dtype=float))
    scale = np.where(scale > 0, scale, 1.0)
    names = tuple(names) if names is not None else tuple(f"x{k}" for k in range(n))

    def f_scaled(u):
        return np.asarray(fun(u * scale), dtype=float)

    u = x0 / scale
    r = f_scaled(u)
    if not np.all(np.isfinite(r)):
        raise FitError("residuals are not finite at the initial guess")
    m = r.size
    if m < n:
        raise UnderdeterminedError(f"{m} residuals cannot determine {n} parameters")
    steps_of = lambda u: diff_step * np.maximum(np.abs(u), 1.0)  # noqa: E731
    jac = _jacobian(f_scaled, u, r, steps_of(u))
    cost = 0.5 * r @ r
    lam = lam0
    status = "max-iter"
    it = 0
    for it in range(1, max_iter + 1):
        a = jac.T @ jac
        grad = jac.T @ r
        if np.linalg.matrix_rank(a, tol=1e-12 * max(np.max(np.abs(a)), 1e-300)) < n:
            status = "singular"
            break
        if np.max(np.abs(grad)) <= gtol * np.linalg.norm(jac) * max(np.linalg.norm(r), 1e-300):
            status = "converged"
            break
        diag = np.diag(a).copy()
        improved = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(a + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            r_new = f_scaled(u + step)
            cost_new = 0.5 * r_new @ r_new if np.all(np.isfinite(r_new)) else np.inf
            if cost_new <= cost:
                improved = True
                break
            lam *= 4
        if not improved:
            # no downhill step at any damping: stationary to working precision
            status = "converged"
            break
        u = u + step
        r, cost = r_new, cost_new
        lam = max(lam / 5, 1e-12)
        jac = _jacobian(f_scaled, u, r, steps_of(u))
        if np.linalg.norm(step) <= xtol * (np.linalg.norm(u) + xtol):
            status = "converged"
            break
    a = jac.T @ jac
    grad = jac.T @ r
    cov = None
    errors = np.full(n, np.nan)
    if np.linalg.matrix_rank(a, tol=1e-12 * max(np.max(np.abs(a)), 1e-300)) < n:
        status = "singular"
    else:
        cov_u = np.linalg.inv(a)
        if not absolute_sigma:
            cov_u = cov_u * (2 * cost / max(m - n, 1))
        cov = cov_u * np.outer(scale, scale)
        errors = np.sqrt(np.clip(np.diag(cov), 0, None))
    info = {"optimality": float(np.max(np.abs(grad)) / max(np.linalg.norm(jac) * np.linalg.norm(r), 1e-300))}
    return FitResult(names, u * scale, np.nan_to_num(errors, nan=0.0) if cov is not None else np.zeros(n),
                     float(np.sqrt(2 * cost)), status, it, cov, r, grad / scale, info)


def _check(result: FitResult, strict: bool) -> FitResult:
    if strict and result.status == "singular":
        raise SingularFitError("normal equations are singular: the data do not constrain every parameter", result)
    if strict and result.status == "max-iter":
        raise ConvergenceError(f"no convergence after {result.iterations} iterations", result)
    return result


def _mask(freqs, values, mask, exclude=()):
    keep = np.isfinite(values) & np.isfinite(freqs)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    for lo, hi in exclude:
        keep &= ~((freqs >= lo) & (freqs <= hi))
    if not np.any(keep):
        raise EmptyMaskError("no frequency bins left after masking")
    return keep


def pm_model(p_fixed: SystemParams, freqs, omega_s, gamma_m, sigma_over_kappa, eps=1.0,
             jitter: DetuningJitter | None = None, mode: str = "full"):
    """Detected PM spectrum relative to shot noise for the three fit parameters.

    The photon number follows from ``omega_s`` at the mean detuning of ``p_fixed``.
    """
    template = jitter or DetuningJitter(n_points=15)
    p = p_fixed.with_shifted_frequency(float(omega_s)).replace(gamma_m=abs(float(gamma_m)))
    j = DetuningJitter(mean_delta_over_kappa=None, sigma_over_kappa=abs(float(sigma_over_kappa)),
                       n_points=template.n_points, method=template.method, truncate=template.truncate)
    s_pm = np.real(detuning_average_cross(p, j, freqs, mode)[:, 1, 1])
    return 1 - eps * (1 - s_pm) / 2


def _peak_guesses(freqs, values):
    base = np.median(values)
    k = int(np.argmax(values))
    contrast = values[k] - base
    scatter = 1.4826 * np.median(np.abs(np.diff(values))) / np.sqrt(2)
    if not contrast > max(5 * scatter, 1e-9 * abs(base)):
        raise SingularFitError("no resonance above the noise: the spectrum carries no information on the fit parameters")
    half = base + contrast / 2
    lo, hi = k, k
    while lo > 0 and values[lo - 1] > half:
        lo -= 1
    while hi < values.size - 1 and values[hi + 1] > half:
        hi += 1
    width = freqs[min(hi + 1, freqs.size - 1)] - freqs[max(lo - 1, 0)]
    return freqs[k], width


def fit_pm_spectrum(freqs, psd, p_fixed: SystemParams, chain: DetectionChain | None = None, mask=None,
                    exclude=(), sigma=None, fit_amplitude: bool = False, jitter: DetuningJitter | None = None,
                    mode: str = "full", x0=None, max_iter: int = 200, strict: bool = True,
                    resolution=None) -> FitResult:
    """Fit a detected PM spectrum for ``(omega_s, gamma_m, sigma_over_kappa)``.

    Parameters
    ----------
    freqs : array_like
        Angular frequencies (rad/s).
    psd : array_like
        Detected PM PSD relative to shot noise.
    p_fixed : SystemParams
        Supplies kappa, mean detuning, omega_m and g; its photon number and
        damping are replaced by the fit.
    mask, exclude :
        Boolean bin selection and ``(lo, hi)`` rad/s intervals to drop, e.g.
        around narrow nonlinear peaks.
    sigma : array_like, optional
        Per-bin standard errors; uniform weights when omitted.
    fit_amplitude : bool
        Adds a free overall scale (fitted as its logarithm, reported as ``amplitude``).
    x0 : sequence, optional
        Initial ``(omega_s, gamma_m, sigma_over_kappa)``; by default the peak
        bin, the half-power width and 0.1.
    resolution : PSDEstimate, optional
        When the data are a Welch estimate, pass it here so the model is
        smeared by the same window kernel before comparison.
    """
    freqs = np.asarray(freqs, dtype=float)
    psd = np.asarray(psd, dtype=float)
    keep = _mask(freqs, psd, mask, exclude)
    f, y = freqs[keep], psd[keep]
    w = np.ones_like(y) if sigma is None else 1 / np.asarray(sigma, dtype=float)[keep]
    eps = 1.0 if chain is None else chain.eps
    if x0 is None:
        ws, width = _peak_guesses(f, y)
        x0 = (ws, max(width, 1e-3 * ws), 0.1)
    x0 = [float(v) for v in x0]
    names = ["omega_s", "gamma_m", "sigma_over_kappa"]
    scale = [x0[0], x0[1], 0.1]
    if fit_amplitude:
        model0 = pm_model(p_fixed, f, *x0, eps=eps, jitter=jitter, mode=mode)
        x0.append(float(np.log(np.sum(y * w**2 * model0) / np.sum((w * model0) ** 2))))
        names.append("log_amplitude")
        scale.append(1.0)

    def model_fn(x):
        if resolution is None:
            return pm_model(p_fixed, f, x[0], x[1], x[2], eps=eps, jitter=jitter, mode=mode)
        shape = f.shape

        def psd_fn(nu):
            flat = TWO_PI * nu.ravel()
            return pm_model(p_fixed, flat, x[0], x[1], x[2], eps=eps, jitter=jitter, mode=mode).reshape(nu.shape)

        return expected_welch(psd_fn, f / TWO_PI, resolution.sample_rate, resolution.nperseg,
                              resolution.window, oversample=2, half_width=4).reshape(shape)

    def residual(x):
        try:
            model = model_fn(x)
        except (ParameterError, PoleError):
            return np.full(y.size, np.inf)
        if fit_amplitude:
            model = model * np.exp(x[3])
        return (y - model) * w

    res = levenberg_marquardt(residual, x0, scale, names, max_iter=max_iter, absolute_sigma=sigma is not None)
    values, errors = res.values.copy(), res.errors.copy()
    values[1:3] = np.abs(values[1:3])
    names = tuple(names)
    if fit_amplitude:
        values[3] = np.exp(values[3])
        errors[3] = values[3] * errors[3]
        names = names[:3] + ("amplitude",)
    info = dict(res.info, n_bins=int(keep.sum()), mask=keep.tolist(), exclude=[list(e) for e in exclude])
    out = FitResult(names, values, errors, res.residual_norm, res.status, res.iterations, res.covariance,
                    res.residuals, res.gradient, info)
    return _check(out, strict)


def fit_network(responses, p_fixed: SystemParams, sigma_amp: float = 0.01, sigma_phase: float = np.radians(1.0),
                mode: str = "full", x0=None, max_iter: int = 200, strict: bool = True) -> FitResult:
    """Joint fit of complex AM and PM drive responses for ``(omega_s, gamma_m)``.

    Residuals are the log-amplitude and phase differences of each response,
    weighted by ``sigma_amp`` (fractional) and ``sigma_phase`` (rad).
    """
    responses = list(responses)
    freqs = np.array([r.drive_freq for r in responses], dtype=float)
    if np.unique(freqs).size < 4:
        raise UnderdeterminedError("network fit needs at least 4 distinct drive frequencies")
    am = np.array([r.am_gain for r in responses], dtype=complex)
    pm = np.array([r.pm_gain for r in responses], dtype=complex)
    if x0 is None:
        k = int(np.argmax(np.abs(pm)))
        x0 = (freqs[k], p_fixed.gamma_m)
    x0 = [float(v) for v in x0]

    def residual(x):
        try:
            p = p_fixed.with_shifted_frequency(x[0]).replace(gamma_m=abs(x[1]))
            am_m, pm_m = drive_responses(p, freqs, mode)
        except (ParameterError, PoleError):
            return np.full(4 * freqs.size, np.inf)
        ra = np.log(am / am_m)
        rp = np.log(pm / pm_m)
        return np.concatenate([ra.real / sigma_amp, ra.imag / sigma_phase, rp.real / sigma_amp, rp.imag / sigma_phase])

    res = levenberg_marquardt(residual, x0, [x0[0], x0[1]], ("omega_s", "gamma_m"), max_iter=max_iter)
    values = res.values.copy()
    values[1] = abs(values[1])
    out = FitResult(res.names, values, res.errors, res.residual_norm, res.status, res.iterations, res.covariance,
                    res.residuals, res.gradient, dict(res.info, n_points=int(freqs.size)))
    return _check(out, strict)


def fit_brownian(freqs_hz, psd, mask=None, exclude=(), sigma=None, offset: bool = False) -> FitResult:
    """Weighted linear least squares for ``psd = A / nu**2`` (plus a constant if ``offset``).

    ``freqs_hz`` must be positive; ``exclude`` lists ``(lo, hi)`` Hz intervals
    around narrow peaks.  ``A`` carries the units of ``psd`` times Hz^2.
    """
    nu = np.asarray(freqs_hz, dtype=float)
    y = np.asarray(psd, dtype=float)
    keep = _mask(nu, y, mask, exclude)
    if np.any(nu[keep] <= 0):
        raise ValueError("Brownian fit requires positive frequencies")
    w = np.ones(keep.sum()) if sigma is None else 1 / np.asarray(sigma, dtype=float)[keep]
    cols = [1 / nu[keep] ** 2] + ([np.ones(keep.sum())] if offset else [])
    design = np.stack(cols, 1) * w[:, None]
    target = y[keep] * w
    if design.shape[0] < design.shape[1]:
        raise UnderdeterminedError("not enough bins for the Brownian model")
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    resid = target - design @ coef
    dof = max(design.shape[0] - design.shape[1], 1)
    cov = np.linalg.pinv(design.T @ design)
    if sigma is None:
        cov = cov * (resid @ resid) / dof
    names = ("A", "offset") if offset else ("A",)
    info = {"n_bins": int(keep.sum()), "exclude": [list(e) for e in exclude]}
    return FitResult(names, coef, np.sqrt(np.clip(np.diag(cov), 0, None)), float(np.linalg.norm(resid)),
                     "converged", 0, cov, resid, design.T @ resid, info)


def fit_residual_table(freqs, result: FitResult) -> dict:
    """Columns for a residual CSV: frequency of each fitted bin and its weighted residual."""
    keep = np.asarray(result.info.get("mask", np.ones(len(result.residuals), bool)), dtype=bool)
    freqs = np.asarray(freqs, dtype=float)
    f = freqs[keep] if keep.size == freqs.size else freqs
    return {"freq_hz": f / (2 * np.pi), "residual": np.asarray(result.residuals)[: f.size]}
