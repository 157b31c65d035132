"""
A p = 4 cell problem against its closed form
============================================

For densities alpha |xi|^4 / 4 in 1-D the flux of the cell problem is
constant, which gives c_4 = E[alpha^(-1/3)]^(-3). With alpha in {1, 16}
that is ((1 + 16^(-1/3)) / 2)^(-3) = 2.93522. The Newton solver does not
know this; we compare.
"""
import numpy as np

from stochhom import CellProblemConfig, Integrand, RandomMedium, estimate_phi0

exact = ((1 + 16 ** (-1 / 3)) / 2) ** -3
medium = RandomMedium.two_phase(0.5, seed=7)
integrand = Integrand.power_law(4, {1: 1.0, 2: 16.0})

cfg = CellProblemConfig(xi=(1.0,), torus_cells=20000, realization_count=8)
est = estimate_phi0(cfg, medium, integrand)
print(f"c4 estimate {4 * est.mean:.4f} +/- {4 * est.halfwidth:.4f}, closed form {exact:.5f}")

# phi0 is 4-homogeneous: doubling xi multiplies it by 16
twice = estimate_phi0(cfg.with_xi((2.0,)), medium, integrand)
print(f"phi0(2) / phi0(1) = {twice.mean / est.mean:.6f}")
print("largest duality gap:", float(np.max(np.concatenate([est.gaps, twice.gaps]))))
