"""An isostable of the Van der Pol oscillator from Laplace averages.

The modulus of the Laplace average of x1 at the principal linearisation
eigenvalue is a Koopman eigenfunction modulus. Its level set through a
seed point is traced by predictor-corrector continuation, and the run is
repeated at twice the averaging horizon to show convergence.

Run: python demos/vdp_levelset.py   (about 1-2 min)
"""
import numpy as np

from koopmatch.dynsys import get_system
from koopmatch.laplace import LaplaceConfig, coordinate_observable, levelset_continuation, linearization_eigenvalues

sys_ = get_system("vdp", {"mu": 0.5})
lam = linearization_eigenvalues(sys_, [0.0, 0.0])[0]
print(f"principal eigenvalue at the origin: {lam:.4f}")
cfg = LaplaceConfig(coordinate_observable(0), lam, T=100.0)
for T in (100.0, 200.0):
    ls = levelset_continuation(cfg.with_T(T), sys_, [0.3, 0.0])
    r = np.linalg.norm(ls.points, axis=1)
    print(f"T={T:.0f}: c={ls.c:.6f}, closed={ls.closed}, {len(ls.points)} vertices, radius {r.min():.3f}..{r.max():.3f}")
