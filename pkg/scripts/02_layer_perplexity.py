"""How many distinct on/off patterns does each layer use per class?

Trains a 10x100 ReLU network and reports, per hidden layer, the perplexity
of the class-conditional activation patterns on the test split.  Early
layers give almost every sample its own pattern; deeper layers collapse
each class onto a few patterns.  The script also shows how sharply the late
nodes pick classes: the share of (node, class) activation fractions that
sit within 5% of 0 or 1.
"""

import numpy as np
from _data import image_splits

from coopnet.network import MlpConfig, TrainSchedule, evaluate, train
from coopnet.perplexity import activation_fractions, perplexity_report

(train_set, val, test), name = image_splits()
config = MlpConfig.from_grid(10, 100, train_set.feature_dim, 10)
epochs = 30 if name == "MNIST" else 60
result = train(config, (train_set, val, test), TrainSchedule(epochs, 64, 1e-3, seed=1))
print(f"{name}: best epoch {result.best_epoch}, "
      f"test error {evaluate(result.best, test)[1]:.4f}")

rep = perplexity_report(result.best, test)
print(f"\nmean test samples per class: {test.class_counts.mean():.0f}")
for layer, p in enumerate(rep.mean_perplexity, start=1):
    print(f"  layer {layer:2d}: mean perplexity {p:8.2f}")

prof = activation_fractions(result.best, test)
for layer in range(1, config.depth):
    fr = prof.layer(layer)
    share = np.mean((fr <= 0.05) | (fr >= 0.95))
    print(f"  layer {layer:2d}: {share:.2f} of node/class fractions near 0 or 1")
