"""
Ergodic averages of a random checkerboard
=========================================

Spatial averages of the phase indicator over [0, W] converge to the phase
probability. For i.i.d. cells the error decays like W^(-1/2).
"""
import numpy as np

from stochhom import RandomMedium, ergodic_average, fit_loglog_slope

sizes = [1e2, 1e3, 1e4, 1e5]
errors = []
for seed in range(16):
    medium = RandomMedium.two_phase(0.5, seed=seed).randomized_shift()
    errors.append([r.error_to_expectation for r in ergodic_average(medium, {1: 1.0, 2: 0.0}, sizes)])

median = np.median(errors, axis=0)
for W, e in zip(sizes, median):
    print(f"W = {W:8.0f}   median |average - 1/2| = {e:.2e}")
print(f"fitted slope {fit_loglog_slope(sizes, median):.3f} (expected about -0.5)")
