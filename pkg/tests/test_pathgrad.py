import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from coopnet.errors import PathBudgetExceeded, UnsupportedConfigurationError
from coopnet.network import Mlp, MlpConfig, backprop, forward
from coopnet.pathgrad import (
    PathIndexer,
    active_path_gradient,
    active_sample_set,
    enumerate_active_paths,
    gradient_equivalence_report,
    path_count,
    path_index,
    path_sum_delta,
    path_sum_gradient,
    random_network,
)

small_nets = st.builds(
    lambda sizes, d, loss, seed: (MlpConfig(tuple(sizes), d, "relu", loss), seed),
    st.lists(st.integers(2, 5), min_size=1, max_size=4),
    st.integers(1, 4),
    st.sampled_from(["mse_linear", "ce_softmax"]),
    st.integers(0, 10**6),
)


def _sample(config, seed, n=1):
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((n, config.feature_dim))
    y = np.eye(config.class_count)[rng.integers(0, config.class_count, n)]
    return x, y


def chain_net():
    return Mlp([np.array([[0.5, 0.0]]), np.array([[2.0]])], MlpConfig((1, 1), 1))


def test_path_count():
    assert path_count([4, 3, 2], 1) == 6
    assert path_count([4, 3, 2], 3) == 1
    assert path_count([5], 1) == 1


def test_path_index_examples():
    ix = PathIndexer((4, 3, 2), 1, 0)
    assert path_index(ix, 2, 5) == 2
    assert path_index(ix, 3, 5) == 1
    assert all(path_index(ix, 1, b) == 0 for b in range(6))
    with pytest.raises(ValueError):
        path_index(ix, 2, 6)


@given(st.lists(st.integers(1, 5), min_size=1, max_size=5), st.data())
def test_indexer_exhaustive(sizes, data):
    i = data.draw(st.integers(1, len(sizes)))
    j = data.draw(st.integers(0, sizes[i - 1] - 1))
    table = PathIndexer(tuple(sizes), i, j).node_table()
    tuples = [tuple(r[1:]) for r in table]
    assert len(set(tuples)) == len(tuples)
    assert sorted(tuples) == list(itertools.product(*[range(s) for s in sizes[i:]]))
    assert tuples == sorted(tuples)  # b order is lexicographic


def test_chain_path_sum():
    mlp = chain_net()
    tr = forward(mlp, np.array([1.0]))
    assert path_sum_gradient(mlp, tr, [0.0], (1, 0, 0)) == 2.0
    assert backprop(mlp, tr, [0.0])[0][0, 0] == 2.0


def test_zero_source_and_dead_paths():
    config = MlpConfig((3, 2), 2)
    mlp = random_network(config, 4)
    tr = forward(mlp, np.array([0.0, 1.0]))
    assert path_sum_gradient(mlp, tr, [1, 0], (1, 0, 0)) == 0.0
    mlp.weights[0][:] = -1.0
    mlp.weights[0][:, -1] = -1.0
    tr = forward(mlp, np.array([1.0, 1.0]))
    assert not tr.switches[0].any()
    for j in range(3):
        assert path_sum_gradient(mlp, tr, [1, 0], (1, j, 1)) == 0.0
    assert enumerate_active_paths(tr, mlp, [1, 0], (1, 0)) == []


@given(small_nets)
def test_equivalence_with_backprop(net):
    config, seed = net
    mlp = random_network(config, seed)
    x, y = _sample(config, seed, 4)
    rep = gradient_equivalence_report(mlp, list(zip(x, y)))
    assert rep.ok and rep.max_abs_diff < 1e-10
    assert rep.compared == 4 * sum(r * c for r, c in config.weight_shapes())


def test_zero_weight_network():
    config = MlpConfig((3, 3, 2), 2)
    mlp = Mlp([np.zeros(s) for s in config.weight_shapes()], config)
    rep = gradient_equivalence_report(mlp, [(np.ones(2), np.array([1.0, 0.0]))])
    assert rep.max_abs_diff == 0.0 and rep.ok


def test_budget_and_activation_guards():
    with pytest.raises(PathBudgetExceeded) as err:
        gradient_equivalence_report(random_network(MlpConfig((100,) * 10, 3), 0), [])
    assert err.value.path_count == 100**9
    sig = random_network(MlpConfig((2, 2), 2, "sigmoid"), 0)
    with pytest.raises(UnsupportedConfigurationError):
        gradient_equivalence_report(sig, [])


def test_tolerance_zero_reports_everything():
    config = MlpConfig((3, 2), 2)
    mlp = random_network(config, 1)
    x, y = _sample(config, 1, 2)
    rep = gradient_equivalence_report(mlp, list(zip(x, y)), tolerance=0.0)
    assert not rep.ok and len(rep.mismatches) == rep.compared


def test_all_on_active_paths():
    config = MlpConfig((4, 3, 2), 2)
    mlp = Mlp([np.abs(w) for w in random_network(config, 2).weights], config)
    tr = forward(mlp, np.array([1.0, 2.0]))
    paths = enumerate_active_paths(tr, mlp, [1.0, 0.0], (1, 0))
    assert len(paths) == 6
    assert [p.path_id for p in paths] == list(range(6))


@given(small_nets)
def test_active_paths_reproduce_path_sum(net):
    config, seed = net
    mlp = random_network(config, seed)
    x, y = _sample(config, seed)
    tr = forward(mlp, x[0])
    for i, (rows, cols) in enumerate(config.weight_shapes(), start=1):
        for j in range(rows):
            paths = enumerate_active_paths(tr, mlp, y[0], (i, j))
            for k in range(cols):
                src = tr.activation(i - 1)[k]
                via_paths = -src * sum(p.weight_product * p.gap for p in paths)
                assert_allclose(via_paths, path_sum_gradient(mlp, tr, y[0], (i, j, k)),
                                atol=1e-12)


@given(small_nets)
def test_gap_linearity(net):
    config, seed = net
    mlp = random_network(config, seed)
    x, y = _sample(config, seed)
    tr = forward(mlp, x[0])
    if config.loss != "mse_linear":
        return
    doubled = tr.output - 2 * (tr.output - y[0])  # gap y - z doubled
    for i in range(1, config.depth + 1):
        one = path_sum_delta(mlp, tr, y[0], i, 0)
        two = path_sum_delta(mlp, tr, doubled, i, 0)
        assert_allclose(two, 2 * one, rtol=1e-12, atol=1e-14)


@given(small_nets)
def test_batch_active_set_gradient(net):
    config, seed = net
    mlp = random_network(config, seed)
    x, y = _sample(config, seed, 6)
    batch = forward(mlp, x)
    grads = backprop(mlp, batch, y)
    for i, (rows, cols) in enumerate(config.weight_shapes(), start=1):
        for j in range(rows):
            for k in range(cols):
                got = active_path_gradient(mlp, batch, y, (i, j, k))
                assert abs(got - grads[i - 1][j, k]) < 1e-10


def test_active_sample_set_cases():
    config = MlpConfig((2, 2), 1)
    mlp = Mlp([np.array([[1.0, 0.0], [-1.0, -1.0]]), np.eye(2)], config)
    batch = forward(mlp, np.array([[1.0], [2.0], [0.0]]))
    assert active_sample_set(batch, (1, 1, 0)).samples == ()
    assert active_sample_set(batch, (1, 0, 0)).samples == (0, 1)
    assert active_sample_set(batch, (2, 1, 0)).samples == (0, 1)
    single = forward(mlp, np.array([1.0]))
    assert set(active_sample_set(single, (1, 0, 0)).samples) <= {0}
