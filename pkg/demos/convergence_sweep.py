"""
Oscillating solutions approach the homogenized one
==================================================

-(2 a(x/eta) u')' = 2 on (0, 1) with the random rod of the first demo.
As eta shrinks, u_eta approaches u*(x) = x (1 - x) / 3.2, the solution
with the harmonic-mean coefficient. The arithmetic-mean law (c = 2.5)
serves as a wrong answer that the sweep must rule out.
"""
import numpy as np

from stochhom import HomogenizedLaw, Integrand, ProblemSpec, RandomMedium, run_convergence

axes = (np.linspace(-1, 1, 9),)
law = HomogenizedLaw.quadratic(axes, 1.6)
wrong = HomogenizedLaw.quadratic(axes, 2.5)

report = run_convergence(ProblemSpec((0, 1), 256, 2.0), RandomMedium.two_phase(0.5),
                         Integrand.quadratic({1: 1.0, 2: 4.0}), law,
                         eta_schedule=[1 / 8, 1 / 16, 1 / 32, 1 / 64], seeds=range(8),
                         negative_law=wrong)
print(report.summary())

# the gradients oscillate and do not converge strongly, only weakly
grad = report.median("strong_error_grad_u")
print("strong grad-u error per eta:", np.array2string(grad, precision=4))
