"""Weight gradients by explicit enumeration of forward paths.

For a ReLU network the derivative of the loss w.r.t. ``w[i][j, k]`` (weight
from node ``k`` of layer ``i-1`` to node ``j`` of layer ``i``) equals

    a[i-1][k] * sum_b  delta[I(N, b)]
                       * prod_{g=i}^{N-1} T(z[g][I(g, b)])
                       * prod_{r=i+1}^{N} w[r][I(r, b), I(r-1, b)]

where ``b`` runs over every path from ``(i, j)`` to the output layer and
``I(r, b)`` decodes the node that path ``b`` visits in layer ``r`` as a
mixed-radix digit.  This module evaluates that sum by brute force and
compares it against :func:`coopnet.network.backprop`.  It is exponential in
depth and exists for verification only.

Layers are numbered from 1 (first hidden layer) to ``N`` (output); node
indices are 0-based.  Returned values are ``dE/dw`` (no learning-rate sign).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PathBudgetExceeded, UnsupportedConfigurationError
from .network import ForwardTrace, Mlp, MlpConfig, backprop, forward, output_delta

DEFAULT_BUDGET = 10**6


def path_count(layer_sizes, layer: int) -> int:
    """Number of distinct paths from one node of ``layer`` to the output."""
    n = len(layer_sizes)
    if not 1 <= layer <= n:
        raise ValueError(f"layer {layer} outside 1..{n}")
    return math.prod(int(s) for s in layer_sizes[layer:])


@dataclass(frozen=True)
class PathIndexer:
    layer_sizes: tuple[int, ...]
    start_layer: int
    start_node: int
    strides: dict = field(init=False, repr=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        n = len(sizes)
        if not 1 <= self.start_layer <= n:
            raise ValueError(f"start layer {self.start_layer} outside 1..{n}")
        if not 0 <= self.start_node < sizes[self.start_layer - 1]:
            raise ValueError(f"start node {self.start_node} outside layer")
        strides = {r: path_count(sizes, r) for r in range(self.start_layer, n + 1)}
        object.__setattr__(self, "strides", strides)

    @property
    def depth(self) -> int:
        return len(self.layer_sizes)

    @property
    def path_count(self) -> int:
        return self.strides[self.start_layer]

    def node_table(self) -> np.ndarray:
        """``(B_i, N - i + 1)`` array; column ``r - i`` holds ``I(r, b)``."""
        b = np.arange(self.path_count, dtype=np.int64)
        cols = [np.full_like(b, self.start_node)]
        for r in range(self.start_layer + 1, self.depth + 1):
            cols.append((b // self.strides[r]) % self.layer_sizes[r - 1])
        return np.stack(cols, axis=1)


def path_index(indexer: PathIndexer, r: int, b: int) -> int:
    """Node visited in layer ``r`` by path ``b``."""
    if not 0 <= b < indexer.path_count:
        raise ValueError(f"path id {b} outside 0..{indexer.path_count - 1}")
    if not indexer.start_layer <= r <= indexer.depth:
        raise ValueError(f"layer {r} outside {indexer.start_layer}..{indexer.depth}")
    if r == indexer.start_layer:
        return indexer.start_node
    return (b // indexer.strides[r]) % indexer.layer_sizes[r - 1]


def _require_relu_single(mlp: Mlp, trace: ForwardTrace):
    if mlp.config.hidden_activation != "relu":
        raise UnsupportedConfigurationError(
            "path decomposition needs ReLU hidden units (switch factorization)"
        )
    if trace.inputs.ndim != 1:
        raise ValueError("path enumeration works on a single-sample trace")


def _check_coord(config: MlpConfig, coord):
    i, j, k = coord
    shapes = config.weight_shapes()
    if not 1 <= i <= len(shapes):
        raise ValueError(f"layer {i} outside 1..{len(shapes)}")
    rows, cols = shapes[i - 1]
    if not (0 <= j < rows and 0 <= k < cols):
        raise ValueError(f"coordinate {coord} outside weight matrix {rows}x{cols}")


def path_sum_delta(mlp: Mlp, trace: ForwardTrace, target, layer: int, node: int) -> float:
    """Sum over all paths from ``(layer, node)``: dE/dz at that node."""
    _require_relu_single(mlp, trace)
    indexer = PathIndexer(mlp.config.layer_sizes, layer, node)
    table = indexer.node_table()
    n = indexer.depth
    lam = output_delta(trace, target, mlp.config.loss)
    terms = lam[table[:, -1]].copy()
    for g in range(layer, n):
        terms *= trace.switches[g - 1][table[:, g - layer]]
    for r in range(layer + 1, n + 1):
        terms *= mlp.weights[r - 1][table[:, r - layer], table[:, r - layer - 1]]
    return float(np.sum(terms))


def path_sum_gradient(mlp: Mlp, trace: ForwardTrace, target, coord) -> float:
    """``dE/dw[i][j, k]`` for one sample by summing over all ``B_i`` paths."""
    _check_coord(mlp.config, coord)
    i, j, k = coord
    source = trace.activation(i - 1)[k]
    return float(source) * path_sum_delta(mlp, trace, target, i, j)


# --------------------------------------------------------------- active paths


@dataclass(frozen=True)
class ActivePath:
    path_id: int
    nodes: tuple[int, ...]  # p_1..p_{N-i}: nodes visited in layers i+1..N
    weight_product: float
    gap: float  # target - output at the path's end node


def enumerate_active_paths(trace: ForwardTrace, mlp: Mlp, target, start) -> list[ActivePath]:
    """Paths from ``start = (i, j)`` whose every hidden switch is on.

    Walks depth-first in lexicographic node order, which is the same order
    as increasing path id ``b``, pruning at the first switched-off node.
    """
    _require_relu_single(mlp, trace)
    layer, node = start
    sizes = mlp.config.layer_sizes
    n = len(sizes)
    indexer = PathIndexer(sizes, layer, node)
    gap = -output_delta(trace, target, mlp.config.loss)
    if layer < n and not trace.switches[layer - 1][node]:
        return []

    paths = []

    def walk(r, prev, nodes, product, b):
        w = mlp.weights[r - 1]
        stride = indexer.strides[r]
        for q in range(sizes[r - 1]):
            if r < n and not trace.switches[r - 1][q]:
                continue
            p = product * w[q, prev]
            if r == n:
                paths.append(ActivePath(b + q * stride, nodes + (q,), p, float(gap[q])))
            else:
                walk(r + 1, q, nodes + (q,), p, b + q * stride)

    if layer == n:
        paths.append(ActivePath(0, (), 1.0, float(gap[node])))
    else:
        walk(layer + 1, node, (), 1.0, 0)
    return paths


@dataclass(frozen=True)
class SampleActivitySet:
    coord: tuple[int, int, int]
    samples: tuple[int, ...]


def _as_batch(traces) -> ForwardTrace:
    if isinstance(traces, ForwardTrace):
        if traces.inputs.ndim == 1:
            return ForwardTrace(
                traces.inputs[None], [z[None] for z in traces.pre],
                [a[None] for a in traces.act], [t[None] for t in traces.switches],
                traces.hidden_activation, traces.loss,
            )
        return traces
    traces = list(traces)
    first = traces[0]
    return ForwardTrace(
        np.stack([t.inputs for t in traces]),
        [np.stack([t.pre[l] for t in traces]) for l in range(first.depth)],
        [np.stack([t.act[l] for t in traces]) for l in range(first.depth)],
        [np.stack([t.switches[l] for t in traces]) for l in range(first.depth)],
        first.hidden_activation, first.loss,
    )


def active_sample_set(traces, coord) -> SampleActivitySet:
    """Samples whose activity lets them touch weight ``coord``.

    A sample qualifies when node ``j`` of layer ``i`` is on (output nodes
    always count as on) and its source is active: switch ``k`` of layer
    ``i-1`` on, or for the first layer a non-zero input feature.
    """
    batch = _as_batch(traces)
    i, j, k = coord
    if i < batch.depth:
        mask = batch.switches[i - 1][:, j].copy()
    else:
        mask = np.ones(batch.inputs.shape[0], dtype=bool)
    if i == 1:
        mask &= batch.inputs[:, k] != 0
    else:
        mask &= batch.switches[i - 2][:, k]
    return SampleActivitySet(tuple(coord), tuple(int(s) for s in np.flatnonzero(mask)))


def active_path_gradient(mlp: Mlp, traces, targets, coord) -> float:
    """Batch-mean ``dE/dw`` summed over active samples and their active paths."""
    batch = _as_batch(traces)
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    i, j, k = coord
    total = 0.0
    for s in active_sample_set(batch, coord).samples:
        trace = batch.sample(s)
        source = trace.activation(i - 1)[k]
        for path in enumerate_active_paths(trace, mlp, targets[s], (i, j)):
            total += source * path.weight_product * path.gap
    return -total / batch.inputs.shape[0]


# ------------------------------------------------------------ equivalence


@dataclass(frozen=True)
class CoordinateMismatch:
    sample: int
    coord: tuple[int, int, int]
    backprop: float
    path_sum: float

    @property
    def abs_diff(self) -> float:
        return abs(self.backprop - self.path_sum)


@dataclass
class EquivalenceReport:
    max_abs_diff: float
    max_rel_diff: float
    compared: int
    path_count: int
    tolerance: float
    mismatches: list[CoordinateMismatch]

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def __iter__(self):
        return iter((self.max_abs_diff, self.max_rel_diff))


def gradient_equivalence_report(
    mlp: Mlp, samples, budget: int = DEFAULT_BUDGET, tolerance: float = 1e-10
) -> EquivalenceReport:
    """Compare backprop and path-sum derivatives at every weight and sample.

    ``samples`` is an iterable of ``(features, target)`` pairs or a
    :class:`~coopnet.datasets.Dataset`.  Coordinates whose absolute
    difference is not strictly below ``tolerance`` are listed in ``mismatches``,
    so a tolerance of 0 always reports every coordinate.
    """
    if mlp.config.hidden_activation != "relu":
        raise UnsupportedConfigurationError("equivalence check needs a ReLU network")
    b1 = path_count(mlp.config.layer_sizes, 1)
    if b1 > budget:
        raise PathBudgetExceeded(b1, budget)
    if hasattr(samples, "one_hot") and hasattr(samples, "features"):
        samples = list(zip(samples.features, samples.one_hot))
    max_abs = max_rel = 0.0
    compared = 0
    mismatches = []
    sizes = mlp.config.layer_sizes
    for s, (x, y) in enumerate(samples):
        trace = forward(mlp, x)
        grads = backprop(mlp, trace, y)
        for i, size in enumerate(sizes, start=1):
            source = trace.activation(i - 1)
            for j in range(size):
                delta = path_sum_delta(mlp, trace, y, i, j)
                path_row = source * delta
                bp_row = grads[i - 1][j]
                diff = np.abs(bp_row - path_row)
                scale = np.maximum(np.abs(bp_row), np.abs(path_row))
                rel = np.divide(diff, scale, out=np.zeros_like(diff), where=scale > 0)
                max_abs = max(max_abs, float(diff.max()))
                max_rel = max(max_rel, float(rel.max()))
                compared += diff.size
                for k in np.flatnonzero(diff >= tolerance):
                    mismatches.append(CoordinateMismatch(
                        s, (i, j, int(k)), float(bp_row[k]), float(path_row[k])))
    return EquivalenceReport(max_abs, max_rel, compared, b1, tolerance, mismatches)


def random_network(config: MlpConfig, seed: int, scale: float = 1.0) -> Mlp:
    """Network with every weight, bias included, drawn from ``U(-scale, scale)``."""
    rng = np.random.default_rng(seed)
    return Mlp(
        [rng.uniform(-scale, scale, size=shape) for shape in config.weight_shapes()],
        config,
    )
