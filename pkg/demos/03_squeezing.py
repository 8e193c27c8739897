"""Sub-shot-noise light from the amplifier, ideal and as detected.

The output field is squeezed over a band of quadratures and frequencies.
With 10 % detection efficiency and a spread of cavity detunings only a few
percent survives in the amplitude quadrature.
Run: python3 demos/03_squeezing.py
"""
import numpy as np

from ponderomotive import TWO_PI, nominal_chain, quantum_run_jitter, quantum_run_params, shifted_frequency
from ponderomotive import squeezing_map
from ponderomotive.detection import detected_relative, detected_squeezing_map, detuning_average_cross

p, jitter, chain = quantum_run_params(), quantum_run_jitter(), nominal_chain()
grid = TWO_PI * np.linspace(50e3, 300e3, 501)
thetas = np.radians(np.linspace(-90, 90, 181))
ws = shifted_frequency(p)

ideal = squeezing_map(p, grid, thetas)
v, th, f = ideal.minimum()
print(f"ideal output, single detuning: {10 * np.log10(v):+.2f} dB at {np.degrees(th):+.0f} deg, {f / TWO_PI / 1e3:.1f} kHz")

det = detected_squeezing_map(p, jitter, chain, grid, thetas)
v, th, f = det.minimum((grid[0], ws))
print(f"detected, below omega_s:       {v:.4f} x shot noise at {np.degrees(th):+.0f} deg, {f / TWO_PI / 1e3:.1f} kHz")
v, th, f = det.minimum((ws, grid[-1]))
print(f"detected, above omega_s:       {v:.4f} x shot noise at {np.degrees(th):+.0f} deg, {f / TWO_PI / 1e3:.1f} kHz")

cross = detuning_average_cross(p, jitter, grid)
am = detected_relative(np.real(cross[:, 0, 0]), chain.eps)
k = int(np.argmin(am))
print(f"amplitude quadrature minimum:  {am[k]:.4f} x shot noise at {grid[k] / TWO_PI / 1e3:.1f} kHz")
print()

# coarse text rendering of the detected map: '-' squeezed, '.' within 1 %, '+' above
rows = np.radians(np.arange(-90, 91, 15))
cols = TWO_PI * np.arange(60e3, 301e3, 10e3)
coarse = detected_squeezing_map(p, jitter, chain, cols, rows)
print("theta   " + "".join(f"{c / TWO_PI / 1e3:4.0f}" for c in cols[::2]))
for r, line in zip(rows, coarse.values):
    cells = "".join("   -" if x < 0.995 else ("   ." if x < 1.01 else "   +") for x in line[::2])
    print(f"{np.degrees(r):+5.0f}  {cells}")
