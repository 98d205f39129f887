"""Dense ReLU/sigmoid networks viewed as cooperating discrete and continuous systems.

Submodules:

``datasets``         IDX loading, synthetic Gaussian classes, seeded splits
``network``          MLP forward/backward pass, Adam training, checkpoints
``pathgrad``         weight gradients by explicit path enumeration
``perplexity``       activation patterns, layer perplexity, activation fractions
``nodeclassifiers``  per-node likelihood estimators and layer classifiers
``experiments``      spec-driven grids of runs with CSV outputs
"""

from .datasets import Dataset, SplitSpec, load_idx, split, synthetic_gaussians
from .errors import (
    ConfigError,
    FitError,
    NumericError,
    PathBudgetExceeded,
    TrainingError,
    UnsupportedConfigurationError,
)
from .experiments import ExperimentSpec, RunManifest, emit_figure_data, load_spec, run
from .network import (
    Mlp,
    MlpConfig,
    TrainSchedule,
    backprop,
    forward,
    output_delta,
    train,
)
from .nodeclassifiers import (
    LayerClassifier,
    build_classifiers,
    evaluate_systems,
    layer_posterior,
)
from .pathgrad import (
    active_path_gradient,
    gradient_equivalence_report,
    path_sum_gradient,
    random_network,
)
from .perplexity import activation_fractions, perplexity_report

__version__ = "0.1.0"
