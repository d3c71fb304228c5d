"""
Statistical checks on an ensemble
=================================

Moment bounds, the weak evolution residual and the bounded-Lipschitz
distance, each reported as a record with an explicit sigma rule.
"""

import numpy as np

from kawasaki_lab.configuration import TestFunction, Theta, bl_metric, make_poisson_window
from kawasaki_lab.estimators import fp_residual, moment_bounds, summary_table
from kawasaki_lab.model import JumpKernel, ModelParams, Potential
from kawasaki_lab.simulator import run_ensemble

p = ModelParams(JumpKernel("gaussian", 1.0, 1), Potential("box", 0.2, 1.0, 1), 0.0)
src = make_poisson_window(0.5, (-5.0, 5.0))
times = list(np.linspace(0.0, 0.5, 11))
ens = run_ensemble(src, 2000, 0.5, p, 11, times)

recs = moment_bounds(ens, 0.5, ((-2.0,), (2.0,)), 3, 0.5)
F = TestFunction.F_tilde(Theta.gaussian(0.5), 0.6)
recs.append(fp_residual(ens, F, 0.0, 0.5, p))
print(summary_table(recs))

# Distance between the same replica at two times.
a, b = ens.configs_at(0.0)[0], ens.configs_at(0.5)[0]
print("distance", bl_metric(a, b), "self", bl_metric(a, a))
