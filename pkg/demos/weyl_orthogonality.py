"""
Potential and solenoidal fields are orthogonal on the torus
===========================================================

On a periodic grid, the forward-difference gradient of any scalar and the
rotated gradient of any stream function have zero inner product. The
corrector fields of the cell problem live in these two spaces.
"""
import numpy as np

from stochhom import discrete_weyl_orthogonality, potential_field, solenoidal_field

rng = np.random.default_rng(0)
n, h = 32, 1 / 32
v = potential_field(rng.normal(size=(n, n)), h)
z = solenoidal_field(rng.normal(size=(n, n)), h)

print("|<v, z>| / (|v| |z|) =", discrete_weyl_orthogonality([v], [z], relative=True))
print("mean of v:", v.mean(axis=(0, 1)), " mean of z:", z.mean(axis=(0, 1)))

# a constant field is solenoidal too but not mean-zero: it is not orthogonal to v + const
c = np.ones_like(v)
print("with a constant added:", discrete_weyl_orthogonality([v + c], [z + c], relative=True))
