"""Hidden nodes as class-likelihood estimators, combined per layer.

Each node gets three estimates of ``P(z | class)`` from the training-split
pre-activations ``z``:

discrete
    ``rho`` (fraction of the class's samples whose node is on) when the
    node is on, ``1 - rho`` otherwise, clamped to ``[eps, 1 - eps]``.  A
    node is on when ``z > 0`` (ReLU) or ``sigmoid(z) > 0.5`` (sigmoid).
continuous
    Gaussian KDE of the class's ``z`` values (Silverman bandwidth), floored
    at ``eps``.
combined
    continuous value when the node is on, discrete value otherwise.

A layer classifier treats its nodes as independent: it sums log
likelihoods over nodes, adds the log prior and normalizes over classes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import expit, logsumexp

from .datasets import Dataset, Sample
from .errors import FitError, NotFittedError
from .network import Checkpoint, ForwardTrace, Mlp, MlpConfig, check_weights, forward, predict
from .perplexity import pre_activations

SYSTEMS = ("discrete", "continuous", "combined")
LIKELIHOOD_FLOOR = 1e-6
BANDWIDTH_FLOOR = 1e-3
_SQRT_2PI = math.sqrt(2.0 * math.pi)
ACTIVITY_RULES = ("relu", "sigmoid")


def node_on(z, rule: str = "relu") -> np.ndarray:
    """Switch state from pre-activations: ``z > 0`` or ``sigmoid(z) > 0.5``."""
    z = np.asarray(z, dtype=np.float64)
    if rule == "relu":
        return z > 0
    if rule == "sigmoid":
        return expit(z) > 0.5
    raise ValueError(f"activity rule must be one of {ACTIVITY_RULES}")


def silverman_bandwidth(values, floor: float = BANDWIDTH_FLOOR) -> float:
    """``0.9 * min(std, IQR / 1.34) * m**(-1/5)``, floored."""
    values = np.asarray(values, dtype=np.float64)
    m = values.size
    if m < 2:
        return floor
    q75, q25 = np.percentile(values, [75, 25])
    spread = min(float(np.std(values, ddof=1)), float(q75 - q25) / 1.34)
    return max(0.9 * spread * m ** -0.2, floor)


@dataclass
class DiscreteEstimator:
    ratios: np.ndarray  # (nodes, classes)
    floor: float = LIKELIHOOD_FLOOR
    rule: str = "relu"

    def __post_init__(self):
        self.ratios = np.atleast_2d(np.asarray(self.ratios, dtype=np.float64))

    @property
    def clamped(self) -> np.ndarray:
        return np.clip(self.ratios, self.floor, 1.0 - self.floor)

    def likelihood(self, z, cls: int, node: int = 0):
        rho = self.clamped[node, cls]
        return np.where(node_on(z, self.rule), rho, 1.0 - rho)

    def log_likelihoods(self, Z) -> np.ndarray:
        """``(n, nodes, classes)`` log likelihoods for a pre-activation matrix."""
        rho = self.clamped
        on = node_on(Z, self.rule)[:, :, None]
        return np.where(on, np.log(rho)[None], np.log1p(-rho)[None])


@dataclass
class KdeEstimator:
    """Gaussian KDE per (node, class); ``stores[node][cls]`` holds sorted values.

    ``method`` is ``"exact"`` (direct kernel sums), ``"binned"`` (linear
    binning onto a grid of spacing ``h / 8``, FFT convolution, linear
    interpolation) or ``"auto"``, which bins stores larger than
    ``binned_above`` values.
    """

    stores: list
    bandwidths: np.ndarray  # (nodes, classes)
    floor: float = LIKELIHOOD_FLOOR
    method: str = "auto"
    binned_above: int = 1000
    _grids: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.bandwidths = np.atleast_2d(np.asarray(self.bandwidths, dtype=np.float64))
        if np.any(self.bandwidths <= 0):
            raise ValueError("bandwidths must be positive")

    def _use_grid(self, node, cls):
        if self.method == "exact":
            return False
        m = self.stores[node][cls].size
        return self.method == "binned" or m > self.binned_above

    def _grid(self, node, cls):
        key = (node, cls)
        if key not in self._grids:
            self._grids[key] = _binned_density(
                self.stores[node][cls], self.bandwidths[node, cls]
            )
        return self._grids[key]

    def raw_density(self, z, node: int, cls: int) -> np.ndarray:
        """Unfloored density estimate at ``z``."""
        z = np.atleast_1d(np.asarray(z, dtype=np.float64))
        store = self.stores[node][cls]
        h = self.bandwidths[node, cls]
        if self._use_grid(node, cls):
            grid = self._grid(node, cls)
            if grid is not None:
                xs, dens = grid
                return np.interp(z, xs, dens, left=0.0, right=0.0)
        return _exact_density(z, store, h)

    def density(self, z, node: int = 0, cls: int = 0):
        out = np.maximum(self.raw_density(z, node, cls), self.floor)
        return out if np.ndim(z) else float(out[0])

    def likelihood(self, z, cls: int, node: int = 0):
        return self.density(z, node, cls)

    def log_likelihoods(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        n, nodes = Z.shape
        classes = self.bandwidths.shape[1]
        out = np.empty((n, nodes, classes))
        for node in range(nodes):
            for c in range(classes):
                out[:, node, c] = np.log(
                    np.maximum(self.raw_density(Z[:, node], node, c), self.floor)
                )
        return out


def _exact_density(z, store, h, chunk_elems: int = 4_000_000):
    out = np.empty(z.shape[0])
    step = max(1, chunk_elems // max(store.size, 1))
    for s in range(0, z.shape[0], step):
        u = (z[s : s + step, None] - store[None, :]) / h
        out[s : s + step] = np.exp(-0.5 * u * u).sum(axis=1)
    return out / (store.size * h * _SQRT_2PI)


def _binned_density(store, h, per_h: int = 8, reach: float = 8.0, max_grid: int = 1 << 18):
    delta = h / per_h
    lo = store[0] - reach * h
    hi = store[-1] + reach * h
    size = int(math.ceil((hi - lo) / delta)) + 2
    if size > max_grid:
        return None
    pos = (store - lo) / delta
    left = np.floor(pos).astype(np.int64)
    frac = pos - left
    counts = np.bincount(left, weights=1.0 - frac, minlength=size)
    counts += np.bincount(left + 1, weights=frac, minlength=size)
    half = int(math.ceil(reach * per_h))
    offsets = np.arange(-half, half + 1) / per_h
    kernel = np.exp(-0.5 * offsets**2) / (h * _SQRT_2PI)
    dens = np.maximum(fftconvolve(counts, kernel, mode="same"), 0.0) / store.size
    return lo + delta * np.arange(size), dens


@dataclass
class CombinedEstimator:
    discrete: DiscreteEstimator
    continuous: KdeEstimator

    def likelihood(self, z, cls: int, node: int = 0):
        z_arr = np.asarray(z, dtype=np.float64)
        out = np.where(
            node_on(z_arr, self.discrete.rule),
            self.continuous.density(np.atleast_1d(z_arr), node, cls).reshape(z_arr.shape),
            self.discrete.likelihood(z_arr, cls, node),
        )
        return out if out.ndim else float(out)

    def log_likelihoods(self, Z, discrete_ll=None, continuous_ll=None) -> np.ndarray:
        d = self.discrete.log_likelihoods(Z) if discrete_ll is None else discrete_ll
        k = self.continuous.log_likelihoods(Z) if continuous_ll is None else continuous_ll
        return np.where(node_on(Z, self.discrete.rule)[:, :, None], k, d)


def likelihood(estimator, z, cls: int, node: int = 0):
    """``P(z | cls)`` at one node under any of the three estimators."""
    if estimator is None:
        raise NotFittedError("estimator has not been fitted")
    return estimator.likelihood(z, cls, node)


@dataclass
class LayerEstimators:
    layer: int
    discrete: DiscreteEstimator
    continuous: KdeEstimator

    @property
    def combined(self) -> CombinedEstimator:
        return CombinedEstimator(self.discrete, self.continuous)

    def get(self, system: str):
        return {"discrete": self.discrete, "continuous": self.continuous,
                "combined": self.combined}[system]


def fit_layer(Z, labels, class_count: int, layer: int = 0, active=None,
              kde_method: str = "auto", rule: str = "relu") -> LayerEstimators:
    """Fit the three estimators from an ``(n, nodes)`` pre-activation matrix.

    ``rule`` picks the on/off test (see :func:`node_on`); ``active``
    overrides it for the discrete ratios only.
    """
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    on = node_on(Z, rule) if active is None else np.asarray(active, dtype=bool)
    counts = np.bincount(labels, minlength=class_count)
    for c in range(class_count):
        if counts[c] < 2:
            raise FitError(f"class {c} has {counts[c]} training samples; need >= 2")
    nodes = Z.shape[1]
    ratios = np.empty((nodes, class_count))
    bandwidths = np.empty((nodes, class_count))
    stores = [[None] * class_count for _ in range(nodes)]
    for c in range(class_count):
        Zc = Z[labels == c]
        ratios[:, c] = on[labels == c].mean(axis=0)
        for node in range(nodes):
            values = np.sort(Zc[:, node])
            stores[node][c] = values
            bandwidths[node, c] = silverman_bandwidth(values)
    return LayerEstimators(
        layer,
        DiscreteEstimator(ratios, rule=rule),
        KdeEstimator(stores, bandwidths, method=kde_method),
    )


def classifier_layers(config: MlpConfig, include_output: bool = False) -> list[int]:
    last = config.depth if include_output else config.depth - 1
    return list(range(1, last + 1))


def layer_rule(config: MlpConfig, layer: int) -> str:
    """Hidden layers follow the hidden activation; output nodes use ``z > 0``."""
    return config.hidden_activation if layer < config.depth else "relu"


def fit_estimators(mlp: Mlp, train: Dataset, include_output: bool = False,
                   kde_method: str = "auto") -> dict[int, LayerEstimators]:
    """Per-layer estimators fitted on the training split's pre-activations."""
    Zs = pre_activations(mlp, train.features)
    return {
        l: fit_layer(Zs[l - 1], train.labels, train.class_count, l,
                     kde_method=kde_method, rule=layer_rule(mlp.config, l))
        for l in classifier_layers(mlp.config, include_output)
    }


def posterior_from_log_scores(scores) -> np.ndarray:
    """Normalize per-class log scores into posteriors (log-sum-exp)."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.exp(scores - logsumexp(scores, axis=-1, keepdims=True))


@dataclass
class LayerClassifier:
    layer: int
    system: str
    estimators: LayerEstimators
    priors: np.ndarray
    network: Mlp | None = None

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"system must be one of {SYSTEMS}")
        self.priors = np.asarray(self.priors, dtype=np.float64)

    def log_scores(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        ll = self.estimators.get(self.system).log_likelihoods(Z)
        with np.errstate(divide="ignore"):
            return ll.sum(axis=1) + np.log(self.priors)[None]

    def posterior(self, Z) -> np.ndarray:
        return posterior_from_log_scores(self.log_scores(Z))

    def predict(self, Z) -> np.ndarray:
        return np.argmax(self.log_scores(Z), axis=1)


def _layer_input(classifier: LayerClassifier, item) -> np.ndarray:
    if isinstance(item, ForwardTrace):
        return item.pre[classifier.layer - 1]
    if classifier.network is None:
        raise NotFittedError("classifier has no network to run samples through")
    x = item.features if isinstance(item, Sample) else item
    return forward(classifier.network, x).pre[classifier.layer - 1]


def layer_posterior(classifier: LayerClassifier, trace) -> np.ndarray:
    """Class posterior from one layer's nodes; a vector for a single sample."""
    z = _layer_input(classifier, trace)
    post = classifier.posterior(z)
    return post[0] if np.ndim(z) == 1 else post


def classify(classifier: LayerClassifier, sample) -> int | np.ndarray:
    """Most probable class (lowest index on ties)."""
    z = _layer_input(classifier, sample)
    pred = classifier.predict(z)
    return int(pred[0]) if np.ndim(z) == 1 else pred


def build_classifiers(mlp: Mlp, train: Dataset, include_output: bool = False,
                      kde_method: str = "auto") -> dict[tuple[int, str], LayerClassifier]:
    fitted = fit_estimators(mlp, train, include_output, kde_method)
    priors = train.class_priors
    return {
        (l, s): LayerClassifier(l, s, est, priors, mlp)
        for l, est in fitted.items() for s in SYSTEMS
    }


# ----------------------------------------------------------- system accuracy


@dataclass(frozen=True)
class SystemsRow:
    checkpoint_kind: str
    checkpoint_index: int
    layer: int | None  # None for the network's own accuracy
    system: str
    split: str
    accuracy: float


CSV_COLUMNS = ("checkpoint_kind", "checkpoint_index", "layer", "system", "split", "accuracy")


@dataclass
class SystemsAccuracyTable:
    rows: list[SystemsRow] = field(default_factory=list)

    def lookup(self, layer, system, split, checkpoint=None) -> float:
        for r in self.rows:
            if (r.layer == layer and r.system == system and r.split == split
                    and (checkpoint is None
                         or (r.checkpoint_kind, r.checkpoint_index) == checkpoint)):
                return r.accuracy
        raise KeyError((layer, system, split, checkpoint))

    def to_csv(self, path, extra: dict | None = None) -> None:
        extra = extra or {}
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(extra) + list(CSV_COLUMNS))
            for r in self.rows:
                writer.writerow(list(extra.values()) + [
                    r.checkpoint_kind, r.checkpoint_index,
                    "" if r.layer is None else r.layer,
                    r.system, r.split, repr(float(r.accuracy)),
                ])


def _system_predictions(estimators: LayerEstimators, priors, Z, chunk=4096):
    log_prior = np.log(priors)
    preds = {s: np.empty(Z.shape[0], dtype=np.int64) for s in SYSTEMS}
    for s in range(0, Z.shape[0], chunk):
        Zc = Z[s : s + chunk]
        d = estimators.discrete.log_likelihoods(Zc)
        k = estimators.continuous.log_likelihoods(Zc)
        comb = np.where(node_on(Zc, estimators.discrete.rule)[:, :, None], k, d)
        for name, ll in (("discrete", d), ("continuous", k), ("combined", comb)):
            preds[name][s : s + chunk] = np.argmax(ll.sum(axis=1) + log_prior, axis=1)
    return preds


def evaluate_systems(checkpoints, config: MlpConfig, train: Dataset, test: Dataset,
                     include_output: bool = False, kde_method: str = "auto",
                     splits=("train", "test")) -> SystemsAccuracyTable:
    """Accuracy of all three systems at every layer of every checkpoint.

    Estimators are re-fitted on ``train`` at each checkpoint.  Each
    checkpoint also gets ``system="network"`` rows with the network's own
    accuracy.
    """
    checkpoints = list(checkpoints)
    for ck in checkpoints:
        try:
            check_weights(ck.weights, config)
        except ValueError as exc:
            raise ValueError(f"checkpoint {ck.tag} does not match the architecture") from exc
    data = {"train": train, "test": test}
    table = SystemsAccuracyTable()
    priors = train.class_priors
    layers = classifier_layers(config, include_output)
    for ck in checkpoints:
        mlp = ck.network(config)
        z_train = pre_activations(mlp, train.features)
        z_split = {"train": z_train}
        for name in splits:
            if name != "train":
                z_split[name] = pre_activations(mlp, data[name].features)
        for name in splits:
            acc = float(np.mean(predict(mlp, data[name].features) == data[name].labels))
            table.rows.append(SystemsRow(ck.kind, ck.index, None, "network", name, acc))
        for l in layers:
            est = fit_layer(z_train[l - 1], train.labels, train.class_count, l,
                            kde_method=kde_method, rule=layer_rule(config, l))
            for name in splits:
                preds = _system_predictions(est, priors, z_split[name][l - 1])
                for system in SYSTEMS:
                    acc = float(np.mean(preds[system] == data[name].labels))
                    table.rows.append(SystemsRow(ck.kind, ck.index, l, system, name, acc))
    return table
