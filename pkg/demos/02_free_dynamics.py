"""
Free and interacting jumps
==========================

Simulate single particles and small Poisson systems, then compare the free
displacement law with its exact characteristic function.
"""

import numpy as np

from kawasaki_lab.configuration import Configuration, make_poisson_window
from kawasaki_lab.model import JumpKernel, ModelParams, Potential
from kawasaki_lab.simulator import run_ensemble, simulate

free = ModelParams(JumpKernel("gaussian", 0.8, 1), Potential("box", 0.0, 1.0, 1), 0.0)

# One trajectory: every clock ring is a jump when nothing interacts.
path = simulate(np.zeros((3, 1)), 2.0, free, seed=1, query_times=[0.0, 1.0, 2.0])
print("rings", path.n_rings, "jumps", path.n_events)
for s, i, a, b in list(path.events())[:5]:
    print(f"t={s:.3f} particle {i}: {a[0]:+.3f} -> {b[0]:+.3f}")

# Displacement of a lone particle after t = 1.
t = 1.0
ens = run_ensemble(Configuration(np.zeros((1, 1))), 20000, t, free, 7, [t])
disp = np.array([c[0, 0] for c in ens.configs_at(t)])
for w in (0.5, 1.0, 2.0):
    exact = np.exp(t * (free.kernel.char_function(w) - 1.0))
    print(f"w={w}: empirical {np.cos(w * disp).mean():.4f}  exact {float(exact):.4f}")

# A repulsive box potential rejects jumps onto occupied neighbourhoods.
src = make_poisson_window(1.0, (-5.0, 5.0))
for height in (0.0, 1.0, 4.0):
    p = ModelParams(free.kernel, Potential("box", height, 0.5, 1), 0.0)
    e = run_ensemble(src, 300, 1.0, p, 3)
    print(f"height {height}: acceptance {e.acceptance_stats()['acceptance']:.3f}")
