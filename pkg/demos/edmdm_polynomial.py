"""Recovering a polynomial conjugacy with a truncated monomial dictionary.

A polynomial field that is conjugate to x' = diag(a1, a2) x through a
polynomial change of coordinates is matched to that linear field. The generator is projected onto the first 14 monomials,
and the repeated eigenvalues are resolved with the matching point.

Run: python demos/edmdm_polynomial.py
"""
import numpy as np

from koopmatch.dynsys import get_system
from koopmatch.edmd import multinomial_dictionary, project_generator
from koopmatch.edmdm import MatchingPoint, edmdm_pipeline

d = multinomial_dictionary(2, 14)
k1 = project_generator(get_system("quad2d", {"a1": 1.0, "a2": -0.5}), d, truncate=True)
k2 = project_generator(get_system("lindiag", {"a1": 1.0, "a2": -0.5}), d)
res = edmdm_pipeline(k1, k2, d, MatchingPoint([2, 2], [-2, -2]), allow_degenerate=True)

g = np.linspace(-1, 1, 41)
G = np.array(np.meshgrid(g, g, indexing="ij")).reshape(2, -1).T
x1, x2 = G[:, 0], G[:, 1]
exact = np.column_stack([x1 - x2**2, -(x1**2) + x2 + 2 * x1 * x2**2 - x2**4])
print(f"{d.n} dictionary functions")
print(f"max |h - exact| on [-1,1]^2: {np.abs(res.h_map(G) - exact).max():.2e}")
