import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy.integrate import trapezoid
from scipy.stats import norm

from coopnet.datasets import Dataset, SplitSpec, split
from coopnet.errors import FitError, NotFittedError
from coopnet.network import MlpConfig, TrainSchedule, evaluate, forward, train
from coopnet.nodeclassifiers import (
    CombinedEstimator,
    DiscreteEstimator,
    KdeEstimator,
    LayerClassifier,
    LayerEstimators,
    build_classifiers,
    classify,
    evaluate_systems,
    fit_layer,
    layer_posterior,
    likelihood,
    node_on,
    posterior_from_log_scores,
    silverman_bandwidth,
)


def kde(values, h):
    store = np.sort(np.asarray(values, dtype=float))
    return KdeEstimator([[store]], np.array([[h]]), method="exact")


def fixed_layer(lik):
    """Layer estimators whose discrete likelihoods are a fixed (nodes, classes) table."""
    return LayerEstimators(0, DiscreteEstimator(lik, floor=0.0), kde([0.0], 1.0))


def test_discrete_ratio_and_clamp():
    z = np.array([1, 2, 3, 4, 5, 6, 7, -1, -2, 0.0])[:, None]
    est = fit_layer(np.vstack([z, z]), np.repeat([0, 1], 10), 2)
    assert est.discrete.ratios[0, 0] == 0.7
    neg = fit_layer(-np.abs(z) - 1, np.repeat([0, 1], 5), 2)
    assert_allclose(neg.discrete.clamped, 1e-6)
    d = DiscreteEstimator([[0.7]])
    assert d.likelihood(0.3, 0) == 0.7
    assert_allclose(d.likelihood(-0.1, 0), 0.3)


def test_kde_single_point_and_two_point():
    h = 0.37
    assert_allclose(kde([1.5], h).density(1.5), 1 / (h * math.sqrt(2 * math.pi)),
                    rtol=1e-15)
    two = kde([-1.0, 1.0], h).density(0.0)
    assert_allclose(two, 2 * 0.5 * norm.pdf(0.0, loc=1.0, scale=h), rtol=1e-12)


def test_combined_boundary():
    comb = CombinedEstimator(DiscreteEstimator([[0.7]]), kde([0.0], 0.1))
    assert_allclose(comb.likelihood(0.0, 0), 0.3)
    assert_allclose(comb.likelihood(0.05, 0), kde([0.0], 0.1).density(0.05))
    with pytest.raises(NotFittedError):
        likelihood(None, 0.0, 0)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=300), st.sampled_from(["exact", "binned"]))
def test_kde_integrates_to_one(values, method):
    v = np.sort(np.array(values))
    h = silverman_bandwidth(v)
    est = KdeEstimator([[v]], np.array([[h]]), method=method)
    lo, hi = v[0] - 5 * h, v[-1] + 5 * h
    grid = np.union1d(np.linspace(lo, hi, 20001), np.clip(
        (v[:, None] + h * np.linspace(-5, 5, 41)).ravel(), lo, hi))
    total = trapezoid(est.raw_density(grid, 0, 0), grid)
    assert abs(total - 1.0) < 1e-3


def test_binned_matches_exact():
    rng = np.random.default_rng(0)
    v = np.sort(rng.standard_normal(5000))
    h = silverman_bandwidth(v)
    q = np.linspace(-3, 3, 101)
    exact = KdeEstimator([[v]], np.array([[h]]), method="exact").raw_density(q, 0, 0)
    binned = KdeEstimator([[v]], np.array([[h]]), method="binned").raw_density(q, 0, 0)
    assert_allclose(binned, exact, atol=2e-3 * exact.max())


def test_silverman():
    v = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    iqr = 2.0
    expected = 0.9 * min(np.std(v, ddof=1), iqr / 1.34) * 5 ** -0.2
    assert_allclose(silverman_bandwidth(v), expected)
    assert silverman_bandwidth(np.ones(10)) == 1e-3


def test_posterior_examples():
    one = LayerClassifier(0, "discrete", fixed_layer([[0.8, 0.2]]), [0.5, 0.5])
    assert_allclose(one.posterior(np.array([[1.0]])), [[0.8, 0.2]], atol=1e-15)
    flat = LayerClassifier(0, "discrete", fixed_layer([[0.5, 0.5]]), [0.3, 0.7])
    assert_allclose(flat.posterior(np.array([[1.0]])), [[0.3, 0.7]], atol=1e-15)
    two = LayerClassifier(0, "discrete", fixed_layer([[2 / 3, 1 / 3]] * 2), [0.5, 0.5])
    post = two.posterior(np.array([[1.0, 1.0]]))[0]
    assert_allclose(post[0] / post[1], 4.0, rtol=1e-12)


def test_argmax_ties_and_shift():
    assert classify(LayerClassifier(0, "discrete", fixed_layer([[0.5, 0.5]]),
                                    [0.5, 0.5]), forward_trace_stub()) == 0
    scores = np.array([[-3.0, -1.0, -2.0]])
    assert_allclose(posterior_from_log_scores(scores),
                    posterior_from_log_scores(scores + 1234.5), atol=1e-15)


def forward_trace_stub():
    from coopnet.network import Mlp

    mlp = Mlp([np.array([[1.0, 0.0]]), np.array([[1.0], [1.0]])], MlpConfig((1, 2), 1))
    return forward(mlp, np.array([1.0]))


def test_sigmoid_rule():
    z = np.array([1e-20, 0.0, -1e-20, 0.3])
    assert_array_equal(node_on(z, "relu"), [True, False, False, True])
    assert_array_equal(node_on(z, "sigmoid"), [False, False, False, True])


def test_fit_error():
    with pytest.raises(FitError):
        fit_layer(np.zeros((3, 2)), [0, 0, 1], 2)


@pytest.fixture(scope="module")
def trained(blobs):
    config = MlpConfig((6, 5, 3), 4)
    sched = TrainSchedule(15, 16, 1e-2, seed=1, checkpoint_epochs=(0, 5))
    return config, train(config, blobs, sched), blobs


def test_posteriors_are_distributions(trained):
    config, result, (tr, va, te) = trained
    for (layer, system), clf in build_classifiers(result.best, tr).items():
        post = layer_posterior(clf, forward(result.best, te.features))
        assert np.all(np.isfinite(post)) and np.all(post >= 0)
        assert_allclose(post.sum(axis=1), 1.0, atol=1e-9)
        assert_array_equal(classify(clf, te[0]), np.argmax(layer_posterior(clf, te[0])))


def test_discrete_ignores_positive_magnitudes(trained):
    config, result, (tr, va, te) = trained
    clf = build_classifiers(result.best, tr)[1, "discrete"]
    Z = forward(result.best, te.features).pre[0]
    bumped = np.where(Z > 0, Z * 17.0 + 3.0, Z)
    assert_array_equal(clf.predict(Z), clf.predict(bumped))


def test_uniform_likelihood_returns_prior_argmax():
    clf = LayerClassifier(0, "discrete", fixed_layer([[0.5, 0.5, 0.5]]), [0.2, 0.5, 0.3])
    assert_array_equal(clf.predict(np.array([[1.0], [-1.0]])), [1, 1])


def test_evaluate_systems_table(trained, tmp_path):
    config, result, (tr, va, te) = trained
    table = evaluate_systems(result.checkpoints, config, tr, te)
    kinds = {(r.checkpoint_kind, r.checkpoint_index) for r in table.rows}
    assert kinds == {("epoch", 0), ("epoch", 5)}
    # layers 1..2 x 3 systems x 2 splits + 2 network rows, per checkpoint
    assert len(table.rows) == 2 * (2 * 3 * 2 + 2)
    net = result.checkpoints[1].network(config)
    assert table.lookup(None, "network", "test", ("epoch", 5)) == evaluate(net, te)[0]
    table.to_csv(tmp_path / "s.csv", extra={"seed": 1})
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["seed", "checkpoint_kind", "checkpoint_index", "layer", "system",
                       "split", "accuracy"]
    assert rows[1][3] == ""


def test_systems_improve_with_training():
    from sklearn.datasets import load_digits

    d = load_digits()
    data = Dataset(d.data / 16.0, d.target, 10)
    parts = split(data, SplitSpec(0.7, 0.15, 0))
    config = MlpConfig.from_grid(4, 32, 64, 10)
    res = train(config, parts, TrainSchedule(20, 64, 1e-3, seed=1, checkpoint_epochs=(0,)))
    from coopnet.network import Checkpoint

    best = Checkpoint("best", res.best_epoch, res.best.weights, 0, 0, 0)
    table = evaluate_systems([res.checkpoints[0], best], config, parts[0], parts[2])
    for system in ("discrete", "continuous", "combined"):
        before = table.lookup(4, system, "test", ("epoch", 0))
        after = table.lookup(4, system, "test", ("best", res.best_epoch))
        assert after > before
