"""
Message passing by hand
=======================

Forward pass, exact gradients and a finite-difference spot check.
"""
import numpy as np

from isccmarket.graph_model import EmploymentGraph
from isccmarket.neural import (GnnArch, LossSpec, backward, gnn_forward, init_params, loss_value,
                               policy_distribution)

rng = np.random.default_rng(0)
g = EmploymentGraph("distributor", [0, 1, 2, 3], rng.normal(size=(4, 6)),
                    [(0, 1, 0.5), (1, 2, 0.0)])  # vertex 3 is isolated
params = init_params(GnnArch(d_v=6, hidden=8), seed=0)

scores, value, cache = gnn_forward(params, g)
print("scores", scores.round(4), "value", round(value, 4))
print("policy", policy_distribution(scores, [True] * 4).round(4))

spec = LossSpec(action=2, mask=(True,) * 4, advantage=1.5, target=0.3, beta=0.01, value_coef=0.5)
grad = backward(params, g, cache, spec).vector

eps = 1e-5
for k in rng.choice(len(grad), 5, replace=False):
    up, down = params.copy(), params.copy()
    up.vector[k] += eps
    down.vector[k] -= eps
    fd = (loss_value(up, g, spec) - loss_value(down, g, spec)) / (2 * eps)
    print(f"param {k:4d}: analytic {grad[k]: .8f}  numeric {fd: .8f}")
