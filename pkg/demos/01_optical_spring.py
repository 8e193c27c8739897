"""How radiation pressure shifts and damps the mechanical resonance.

On the red side of the cavity the optical spring is negative, so the
resonance moves down from 155.5 kHz to about 142 kHz.  The delayed force
adds damping below the bare frequency and anti-damping above it.
Run: python3 demos/01_optical_spring.py
"""
import numpy as np

from ponderomotive import TWO_PI, cooperativity, gain, nominal_params, optical_spring, optomechanical_damping
from ponderomotive import shifted_frequency

p = nominal_params()
print(f"bare resonance        {p.omega_m / TWO_PI / 1e3:8.2f} kHz")
print(f"static spring s(0)    {optical_spring(p) / TWO_PI:8.1f} Hz (angular units / 2 pi)")
print(f"shifted resonance     {shifted_frequency(p) / TWO_PI / 1e3:8.2f} kHz")
print(f"cooperativity         {cooperativity(p):8.2f}")
print()

# sweep the photon number: the resonance walks down as the spring grows
for n_bar in (0, 2, 4, 6, 8, 10):
    q = p.replace(n_bar=float(n_bar))
    print(f"n_bar = {n_bar:2d}: omega_s = {shifted_frequency(q) / TWO_PI / 1e3:7.2f} kHz")
print()

# damping changes sign at the bare frequency
w = TWO_PI * np.array([100e3, 140e3, 155.5e3, 170e3, 200e3])
for wk, d in zip(w, optomechanical_damping(p, w)):
    print(f"{wk / TWO_PI / 1e3:6.1f} kHz: Gamma_opt / 2 pi = {d / TWO_PI:+10.1f} Hz")
print()

# the loop gain: the three modes differ in how much of the cavity delay they keep
for mode in ("full", "simplified", "exact"):
    g = gain(p, w, mode)
    cells = "  ".join(f"{abs(x):6.2f}/{np.degrees(np.angle(x)):+7.1f}" for x in g)
    print(f"{mode:10s} |G|/deg: {cells}")
