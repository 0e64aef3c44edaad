"""Matching two linear systems from their generator matrices alone.

The pair x' = (x2, x1) and y' = (y1, -y2) is projected onto the linear
monomials. The generator matrices are diagonalised, the eigenvectors are
fixed by a single matching point and the conjugacy comes out as a matrix.

Run: python demos/edmdm_linear.py
"""
import numpy as np

from koopmatch.dynsys import get_system
from koopmatch.edmd import multinomial_dictionary, project_generator
from koopmatch.edmdm import MatchingPoint, edmdm_pipeline

d = multinomial_dictionary(2, 2)
s1 = get_system("lin2d", {"a11": 0, "a12": 1, "a21": 1, "a22": 0})
s2 = get_system("lin2d", {"a11": 1, "a12": 0, "a21": 0, "a22": -1})
k1, k2 = project_generator(s1, d), project_generator(s2, d)
print("K1 =\n", k1.k)
print("K2 =\n", k2.k)

res = edmdm_pipeline(k1, k2, d, MatchingPoint([1, 2], [3, -1]), normalize="max")
print("D  =", res.d_diag)
print("h  =\n", res.h_matrix)

# h maps the first flow onto the second: compare h(phi_t x) with psi_t(h x)
x = np.array([[0.3, -0.7]])
for t in (0.5, 1.0):
    lhs = res.h_map(s1.analytic_flow(x, t))
    rhs = s2.analytic_flow(res.h_map(x), t)
    print(f"t={t}: |h(phi_t x) - psi_t(h x)| = {np.abs(lhs - rhs).max():.2e}")
