"""Response of the amplifier to a classical amplitude drive.

A weak AM tone is swept across the resonance.  Far below the shifted
frequency the loop adds gain; at the bare frequency the returned field
cancels the drive (squashing); the phases swing through the resonance.
Run: python3 demos/02_network_response.py
"""
import numpy as np

from ponderomotive import TWO_PI, network_run_params, phase_profile, shifted_frequency, stability_scan
from ponderomotive.network_drive import network_dataset

p = network_run_params()
grid = TWO_PI * np.linspace(100e3, 250e3, 500)
data = network_dataset(p, grid)
prof = phase_profile(p, None, grid)

print(f"omega_s = {shifted_frequency(p) / TWO_PI / 1e3:.1f} kHz, omega_m = {p.omega_m / TWO_PI / 1e3:.1f} kHz")
k = int(np.argmax(data["am_gain_db"]))
print(f"largest AM gain   {data['am_gain_db'][k]:+6.2f} dB at {data['drive_freq_hz'][k] / 1e3:.1f} kHz")
k = int(np.argmin(data["am_gain_db"]))
print(f"deepest squashing {data['am_gain_db'][k]:+6.2f} dB at {data['drive_freq_hz'][k] / 1e3:.1f} kHz")
print("AM phase crosses   0 deg at", np.round(prof.crossings("am", 0.0) / TWO_PI / 1e3, 2), "kHz")
print("PM phase crosses -180 deg at", np.round(prof.crossings("pm", -180.0) / TWO_PI / 1e3, 2), "kHz")
print()

for f_khz in (110, 125, 136, 145, 155.5, 170, 200, 240):
    k = int(np.argmin(np.abs(data["drive_freq_hz"] - f_khz * 1e3)))
    print(f"{f_khz:6.1f} kHz  AM {data['am_gain_db'][k]:+7.2f} dB {data['am_phase_deg'][k]:+8.1f} deg   "
          f"PM {data['pm_gain_db'][k]:+7.2f} dB {data['pm_phase_deg'][k]:+8.1f} deg")
print()

# the same system on the blue side of the cavity is a phonon laser
blue = p.replace(delta=-p.delta)
print("red-detuned stable:", stability_scan(p, freqs=grid).stable)
print("blue-detuned stable:", stability_scan(blue, freqs=grid).stable)
