"""Simulated measurement: photocurrent to fitted parameters.

Synthesizes heterodyne records at the 10 MHz intermediate frequency,
demodulates them, removes the slow phase drift, averages Welch spectra and
fits the phase quadrature for (omega_s, Gamma_m, sigma_delta).  A second part
drives the system with a tone and reads it back with a second demodulation.
Run: python3 demos/04_heterodyne_pipeline.py  (about a minute)
"""
from ponderomotive import TWO_PI, dsp, nominal_chain, quantum_run_jitter, quantum_run_params, shifted_frequency
from ponderomotive.fitting import fit_pm_spectrum
from ponderomotive.network_drive import drive_response, response_phase_deg

p, jitter, chain = quantum_run_params(), quantum_run_jitter(), nominal_chain()

raw = dsp.synthesize(p, chain, 5e-3, seed=0, jitter=jitter)
print(f"raw record: {raw.samples.size} samples at {raw.sample_rate / 1e6:.0f} MS/s")
iq = dsp.phase_drift_correct(dsp.demodulate_if(raw))
print(f"baseband:   {iq.i.size} samples at {iq.sample_rate / 1e6:.0f} MS/s, receiver phase {iq.rotation[0]:+.3f} rad")

# averaging: the same chain at the baseband level is much cheaper, so use it for the fit
n = 400
acc = 0.0
for seed in range(n):
    rec = dsp.phase_drift_correct(dsp.synthesize_iq(p, chain, 5e-3, seed, jitter=jitter))
    est = dsp.welch_psd(rec.pm, rec.sample_rate)
    acc = acc + est.psd
y = acc / n / chain.shot_noise_level
w = est.omega
mask = (w >= TWO_PI * 60e3) & (w <= TWO_PI * 300e3)
res = fit_pm_spectrum(w, y, p, chain, mask=mask, sigma=y * est.relative_error(n), jitter=jitter, resolution=est)
print(f"\nPM fit over {n} records ({res.status}, {res.iterations} iterations):")
print(f"  omega_s / 2 pi = {res['omega_s'] / TWO_PI / 1e3:8.3f} +- {res.error('omega_s') / TWO_PI / 1e3:.3f} kHz"
      f"   (true {shifted_frequency(p) / TWO_PI / 1e3:.3f})")
print(f"  Gamma_m / 2 pi = {res['gamma_m'] / TWO_PI:8.1f} +- {res.error('gamma_m') / TWO_PI:.1f} Hz"
      f"   (true {p.gamma_m / TWO_PI:.1f})")
print(f"  sigma / kappa  = {res['sigma_over_kappa']:8.4f} +- {res.error('sigma_over_kappa'):.4f}"
      f"   (true {jitter.sigma_over_kappa:.4f})")

# network analysis through the full chain
amp = dsp.tone_amplitude_for_snr(chain, 60.0, est.bin_width)
print("\ndrive    measured AM (gain, phase)   model AM")
for f_d in (110e3, 140e3, 200e3):
    tone = dsp.Tone(TWO_PI * f_d, amp)
    on = dsp.superheterodyne(dsp.phase_drift_correct(dsp.demodulate_if(
        dsp.synthesize(p, chain, 5e-3, 1, drive=tone))), tone.omega)
    off = dsp.superheterodyne(dsp.phase_drift_correct(dsp.demodulate_if(
        dsp.synthesize(p.replace(n_bar=0.0), chain, 5e-3, 2, drive=tone))), tone.omega)
    am, _ = on.normalized(off)
    r = drive_response(p, chain, tone.omega)
    print(f"{f_d / 1e3:5.0f} kHz  {abs(am):7.3f} {float(response_phase_deg(am)):+7.2f} deg          "
          f"{abs(r.am_gain):7.3f} {float(response_phase_deg(r.am_gain)):+7.2f} deg")
