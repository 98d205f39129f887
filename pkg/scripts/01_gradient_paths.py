"""Backprop as a sum over forward paths.

For a ReLU network every weight derivative can be written as a sum over the
paths that leave the weight's target node and end at an output node.  Each
path contributes its weight product, gated by the on/off switches it passes
through, times the output gap at its end.  This script checks that view
against ordinary backprop on a small random network and then lists the
paths that actually carry gradient for one weight.
"""

import numpy as np

from coopnet.network import MlpConfig, backprop, forward
from coopnet.pathgrad import (
    enumerate_active_paths,
    gradient_equivalence_report,
    path_count,
    path_sum_gradient,
    random_network,
)

config = MlpConfig((5, 4, 3), feature_dim=4)
mlp = random_network(config, seed=0)
rng = np.random.default_rng(0)
x = rng.standard_normal((20, 4))
y = np.eye(3)[rng.integers(0, 3, 20)]

print(f"paths from one first-layer node to the output: {path_count(config.layer_sizes, 1)}")

report = gradient_equivalence_report(mlp, list(zip(x, y)))
print(f"{report.compared} derivatives compared, "
      f"max |backprop - path sum| = {report.max_abs_diff:.2e}")

trace = forward(mlp, x[0])
coord = (1, 2, 0)  # weight into node 2 of layer 1 from input feature 0
print(f"\nd loss / d w{coord}")
print(f"  backprop : {backprop(mlp, trace, y[0])[0][2, 0]: .12f}")
print(f"  path sum : {path_sum_gradient(mlp, trace, y[0], coord): .12f}")

paths = enumerate_active_paths(trace, mlp, y[0], coord[:2])
print(f"\n{len(paths)} of {path_count(config.layer_sizes, 1)} paths are fully switched on:")
for p in paths:
    print(f"  path {p.path_id}: nodes {p.nodes}, weight product {p.weight_product: .4f}, "
          f"gap {p.gap: .4f}")
