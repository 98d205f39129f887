"""Every hidden layer as a naive-Bayes classifier.

Each node is read three ways: by its on/off state alone (discrete), by a
kernel density over its pre-activation (continuous), or by the density
when the node is on and the on/off rate when it is off (combined).  A
layer multiplies its nodes' class likelihoods.  Watching the three
accuracies across training shows the switch states and the magnitudes
converging on the same answer in the last hidden layer.

Pass ``--sigmoid`` for a 7x100 sigmoid network with softmax outputs.
"""

import sys

from _data import image_splits

from coopnet.network import Checkpoint, MlpConfig, TrainSchedule, train
from coopnet.nodeclassifiers import evaluate_systems

sigmoid = "--sigmoid" in sys.argv
(train_set, val, test), name = image_splits()
if sigmoid:
    config = MlpConfig.from_grid(7, 100, train_set.feature_dim, 10,
                                 hidden_activation="sigmoid", loss="ce_softmax")
    schedule = TrainSchedule(100, 64, 3e-3, seed=1, checkpoint_epochs=(0, 1, 10))
else:
    config = MlpConfig.from_grid(6, 100, train_set.feature_dim, 10)
    schedule = TrainSchedule(60, 64, 1e-3, seed=1, checkpoint_epochs=(0, 1, 10))

result = train(config, (train_set, val, test), schedule)
best = Checkpoint("best", result.best_epoch, result.best.weights, 0, 0, 0)
table = evaluate_systems(result.checkpoints + [best], config, train_set, test,
                         splits=("test",))

print(f"{name}, {config.depth - 1}x100 {config.hidden_activation}: test accuracy")
print(f"{'checkpoint':>12} {'layer':>5} {'discrete':>9} {'continuous':>10} {'combined':>9}")
for ck in result.checkpoints + [best]:
    tag = (ck.kind, ck.index)
    for layer in range(1, config.depth):
        accs = [table.lookup(layer, s, "test", tag)
                for s in ("discrete", "continuous", "combined")]
        print(f"{ck.tag:>12} {layer:5d} " + " ".join(f"{a:9.4f}" for a in accs))
    print(f"{ck.tag:>12}   net {table.lookup(None, 'network', 'test', tag):9.4f}")
