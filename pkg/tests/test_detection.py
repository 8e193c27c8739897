import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ponderomotive.core_model import TWO_PI, ParameterError, PoleError
from ponderomotive.detection import (
    BROWNIAN_COEFFICIENTS,
    DetectedPSD,
    DetectionChain,
    DetuningJitter,
    add_detector_floor,
    apply_loss,
    detected_psd,
    detected_relative,
    detected_squeezing_map,
    detuning_average,
    detuning_average_cross,
    heterodyne_psd,
    squeezing_report,
    technical_background,
    technical_cross_spectrum,
)
from ponderomotive.scattering import QuadratureSpectrum, output_transfer, vacuum_quadrature_psd


def _spec(values, theta=0.0):
    values = np.atleast_1d(np.asarray(values, dtype=float))
    return QuadratureSpectrum(np.arange(1.0, values.size + 1), theta, values)


def test_vacuum_gives_shot_noise_level():
    chain = DetectionChain(eps_det=0.3, shot_noise_psd=5.0)
    out = detected_psd(_spec(np.ones(7)), chain)
    assert np.allclose(out.psd, 5.0)
    assert np.allclose(out.relative, 1.0)


def test_shot_noise_from_lo_power():
    import scipy.constants

    chain = DetectionChain(p_lo=980e-6)
    assert chain.shot_noise_level == pytest.approx(980e-6 * scipy.constants.hbar * chain.omega_lo, rel=1e-12)


def test_calibration_anchor(chain):
    assert chain.vacuum_level(include_floor=True) == pytest.approx(203.78e-24, rel=1e-12)
    assert chain.eps == pytest.approx(0.101)
    floor = add_detector_floor(detected_psd(_spec(np.ones(3)), chain), chain)
    assert np.allclose(floor.psd, 203.78e-24, rtol=1e-12)
    assert np.allclose(floor.relative, 1.0)


def test_loss_identity_and_affine():
    chain = DetectionChain(shot_noise_psd=2.0)
    het = heterodyne_psd(_spec([0.5, 1.0, 3.0]), chain)
    assert np.allclose(apply_loss(het, chain).psd, het.psd)
    for eps in (0.05, 0.5, 0.9):
        lossy = DetectionChain(eps_det=eps, shot_noise_psd=2.0)
        sn = DetectedPSD(het.freqs, np.full(3, 2.0), 2.0)
        assert np.allclose(apply_loss(sn, lossy).psd, 2.0, rtol=1e-15)


@given(st.floats(1e-3, 1.0), st.lists(st.floats(0.0, 50.0), min_size=1, max_size=20))
def test_loss_is_contraction_toward_shot_noise(eps, values):
    chain = DetectionChain(eps_det=eps, shot_noise_psd=1.0)
    het = heterodyne_psd(_spec(values), DetectionChain(shot_noise_psd=1.0))
    lossy = apply_loss(het, chain)
    assert np.all(np.abs(lossy.psd - 1) <= np.abs(het.psd - 1) + 1e-15)


@given(st.floats(1e-3, 1.0), st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_detected_strictly_increasing(eps, a, b):
    if abs(a - b) < 1e-9:
        return
    lo, hi = sorted((a, b))
    assert detected_relative(lo, eps) < detected_relative(hi, eps)


def test_detected_relative_matches_chain():
    chain = DetectionChain(eps_det=0.101, shot_noise_psd=3.0)
    vals = np.linspace(0.2, 4, 9)
    assert np.allclose(detected_psd(_spec(vals), chain).relative, detected_relative(vals, 0.101), rtol=1e-14)


def test_few_percent_after_loss(quantum_run):
    # deep output squeezing becomes a few percent after 10 % detection efficiency
    w = TWO_PI * np.linspace(60e3, 300e3, 2401)
    s = vacuum_quadrature_psd(output_transfer(quantum_run, w), 0.0).values
    det = detected_relative(s, 0.101)
    assert s.min() < 0.7
    assert 0.94 < det.min() < 0.99


def test_jitter_zero_sigma_is_point_evaluation(quantum_run):
    w = TWO_PI * np.linspace(60e3, 300e3, 101)
    point = vacuum_quadrature_psd(output_transfer(quantum_run, w), 0.4).values
    for jit in (DetuningJitter(), DetuningJitter(sigma_over_kappa=0.0, n_points=15),
                DetuningJitter(sigma_over_kappa=0.2, n_points=1)):
        assert np.allclose(detuning_average(quantum_run, jit, 0.4, w).values, point, rtol=1e-14)


def test_jitter_quadrature_routes_agree(quantum_run, jitter):
    w = TWO_PI * np.linspace(60e3, 300e3, 121)
    tz = detuning_average(quantum_run, DetuningJitter(-0.575, 0.14, n_points=401, method="trapezoid",
                                                      truncate=6.0), np.pi / 2, w).values
    gh61 = detuning_average(quantum_run, DetuningJitter(-0.575, 0.14, n_points=61), np.pi / 2, w).values
    gh15 = detuning_average(quantum_run, jitter, np.pi / 2, w).values
    assert np.max(np.abs(gh61 - tz) / tz) < 1e-4
    # the 15-node default is accurate to a few parts per thousand
    assert np.max(np.abs(gh15 - tz) / tz) < 5e-3


def test_jitter_preserves_far_floor(quantum_run, jitter):
    # the spring tail makes the far floor approach 1 slowly; detected values sit within 0.01
    w = TWO_PI * np.array([400e3])
    cross = detuning_average_cross(quantum_run, jitter, w)
    for theta in (0.0, np.pi / 4, np.pi / 2):
        v = detected_relative(np.real(cross[0, 0, 0] * np.cos(theta) ** 2 + cross[0, 1, 1] * np.sin(theta) ** 2
                                      + 2 * np.sin(theta) * np.cos(theta) * cross[0, 0, 1].real), 0.101)
        assert abs(v - 1) < 0.01


def test_jitter_broadens_pm_peak(quantum_run, jitter):
    w = TWO_PI * np.linspace(100e3, 200e3, 2001)
    sharp = detuning_average(quantum_run, DetuningJitter(), np.pi / 2, w).values
    broad = detuning_average(quantum_run, jitter, np.pi / 2, w).values
    assert broad.max() < sharp.max()

    def fwhm(v):
        base = np.median(v)
        above = w[v - base > (v.max() - base) / 2]
        return above[-1] - above[0]

    assert fwhm(broad) > fwhm(sharp)


def test_jitter_pole_reported(quantum_run, jitter, monkeypatch):
    import ponderomotive.detection as det

    real = det.output_transfer

    def fragile(p, freqs, mode="full"):
        if p.delta > quantum_run.delta:
            raise PoleError("synthetic pole")
        return real(p, freqs, mode)

    monkeypatch.setattr(det, "output_transfer", fragile)
    with pytest.raises(PoleError, match=r"quadrature node delta/kappa = -0\.4631"):
        detuning_average_cross(quantum_run, jitter, TWO_PI * np.linspace(50e3, 300e3, 11))


def test_jitter_validation():
    with pytest.raises(ParameterError):
        DetuningJitter(sigma_over_kappa=-0.1)
    with pytest.raises(ParameterError):
        DetuningJitter(n_points=0)
    with pytest.raises(ParameterError):
        DetuningJitter(method="simpson")


def test_chain_validation():
    with pytest.raises(ParameterError):
        DetectionChain(eps_det=0.0)
    with pytest.raises(ParameterError):
        DetectionChain(p_lo=-1.0)
    with pytest.raises(ParameterError):
        DetectionChain.calibrated(1.0, 0.1, detector_floor=2.0)


def test_brownian_background_units():
    nu = 100e3
    pm = technical_background("PM", TWO_PI * nu)
    am = technical_background("AM", TWO_PI * nu)
    assert pm == pytest.approx(460 / nu**2, rel=1e-14)
    assert am / pm == pytest.approx(120 / 460, rel=1e-14)
    nus = TWO_PI * np.geomspace(1e3, 1e6, 17)
    assert np.allclose(technical_background("AM", nus) / technical_background("PM", nus), 120 / 460)
    assert BROWNIAN_COEFFICIENTS == {"PM": 460.0, "AM": 120.0}
    with pytest.raises(ValueError):
        technical_background("PM", 0.0)


def test_technical_cross_spectrum(quantum_run):
    w = TWO_PI * np.linspace(60e3, 300e3, 50)
    zero = technical_cross_spectrum(quantum_run, w)
    assert np.all(zero == 0)
    pm_only = technical_cross_spectrum(quantum_run, w, pm_rel=0.2)
    assert np.allclose(pm_only[:, 1, 1], 0.2) and np.allclose(pm_only[:, 0, 0], 0)
    dark = technical_cross_spectrum(quantum_run.replace(n_bar=0.0), w, am_rel=0.3)
    assert np.allclose(dark[:, 0, 0] + dark[:, 1, 1], 0.3)


def test_squeezing_report_calibration_pair():
    w = np.array([1.0])
    rep = squeezing_report(201.8e-24, 203.78e-24, w, [(0.5, 1.5)], detected_err=0.2e-24, vacuum_err=0.05e-24)
    assert rep.bands[0].ratio == pytest.approx(201.8 / 203.78, rel=1e-14)
    assert round(rep.bands[0].ratio, 3) == 0.990
    assert rep.bands[0].stderr == pytest.approx(0.001, abs=2e-4)
    shifted = squeezing_report(201.8e-24, 203.78e-24, w, [(0.5, 1.5)], detector_floor=0.9e-24)
    assert abs(shifted.bands[0].ratio - rep.bands[0].ratio) < 0.005
    payload = json.loads(rep.to_json())
    assert payload["bands"][0]["n_bins"] == 1


def test_squeezing_report_identity_and_errors():
    w = np.linspace(1, 10, 10)
    rep = squeezing_report(np.full(10, 3.0), np.full(10, 3.0), w, [(1, 5), (6, 10)])
    assert [b.ratio for b in rep.bands] == [1.0, 1.0]
    assert rep.bands[0].stderr == 0.0
    single = squeezing_report(np.ones(10), np.ones(10), w, [(1, 1)])
    assert json.loads(single.to_json())["bands"][0]["stderr"] is None
    with pytest.raises(ValueError):
        squeezing_report(np.ones(10), np.ones(10), w, [(20, 30)])
    with pytest.raises(ValueError):
        squeezing_report(np.ones(10), np.ones(10), w, [])


def test_detected_map_uniform_without_light(quantum_run, jitter, chain):
    w = TWO_PI * np.linspace(60e3, 300e3, 31)
    m = detected_squeezing_map(quantum_run.replace(n_bar=0.0), jitter, chain, w, np.radians(np.arange(-90, 91, 15)))
    assert np.allclose(m.values, 1.0, atol=1e-12)
