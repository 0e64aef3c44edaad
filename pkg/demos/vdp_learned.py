"""Learning a dictionary that matches Van der Pol to a transformed copy.

Both systems are sampled on small boxes around their fixed points. An MLP
dictionary is trained on the two EDMD fits with periodic similarity steps,
and EDMD-M then produces the map between the systems. Its accuracy is
checked on trajectories pushed through the known affine transform.

Run: python demos/vdp_learned.py [iterations]   (default 3000, about 2-3 min)
"""
import sys

from koopmatch.experiments import vdp

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
rep = vdp(seed=0, overrides={"train": {"iters": iters}}, log=print)
for key in ("initial_error", "final_error", "p_condition", "spectrum_gap", "aborted"):
    print(f"{key:>15}: {rep.metrics[key]}")
for c in rep.checks:
    print(c.line())
