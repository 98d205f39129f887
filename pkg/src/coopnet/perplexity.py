"""Binary activation patterns, per-class layer perplexity and node profiles."""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .network import Mlp, forward

# How output nodes count as "active" in fraction profiles.
OUTPUT_RULES = {
    "mse_linear": "pre-activation > 0",
    "ce_softmax": "softmax probability > 0.5",
}


def switch_states(mlp: Mlp, features, chunk: int = 8192) -> list[np.ndarray]:
    """Boolean ``(n, s_l)`` switch arrays for every layer, output included."""
    x = np.atleast_2d(features)
    parts = [forward(mlp, x[s : s + chunk]).switches for s in range(0, len(x), chunk)]
    if not parts:
        return [np.zeros((0, s), dtype=bool) for s in mlp.config.layer_sizes]
    return [np.concatenate(layer) for layer in zip(*parts)]


def pre_activations(mlp: Mlp, features, chunk: int = 8192) -> list[np.ndarray]:
    x = np.atleast_2d(features)
    parts = [forward(mlp, x[s : s + chunk]).pre for s in range(0, len(x), chunk)]
    return [np.concatenate(layer) for layer in zip(*parts)]


def extract_patterns(mlp: Mlp, data: Dataset) -> list[np.ndarray]:
    """Per hidden layer, an ``(n, s_l)`` boolean pattern matrix.

    ReLU nodes are on when ``z > 0``; sigmoid nodes when ``a > 0.5``.
    """
    return switch_states(mlp, data.features)[:-1]


def pattern_counts(patterns: np.ndarray) -> np.ndarray:
    """Occurrence counts of the distinct rows of a boolean pattern matrix."""
    patterns = np.atleast_2d(patterns)
    if patterns.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    packed = np.packbits(patterns.astype(bool), axis=1)
    _, counts = np.unique(packed, axis=0, return_counts=True)
    return counts


def entropy(counts, total: int | None = None) -> float:
    """Natural-log entropy of a multiset given by its positive counts."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0:
        raise ValueError("entropy of an empty multiset")
    if np.any(counts <= 0):
        raise ValueError("pattern counts must be positive")
    n = counts.sum() if total is None else float(total)
    if not math.isclose(counts.sum(), n):
        raise ValueError(f"counts sum to {counts.sum()}, expected {n}")
    p = counts / n
    return float(max(0.0, -np.sum(p * np.log(p))))


def perplexity(h: float) -> float:
    if h < 0:
        raise ValueError("entropy must be non-negative")
    return math.exp(h)


@dataclass
class PatternTable:
    """Pattern multisets ``K(c, l)`` keyed by ``(class, layer)``."""

    counts: dict[tuple[int, int], Counter]
    class_totals: np.ndarray
    layer_sizes: tuple[int, ...]

    @classmethod
    def from_patterns(cls, patterns: list[np.ndarray], labels, class_count: int):
        labels = np.asarray(labels)
        table = {}
        for l, pat in enumerate(patterns, start=1):
            keys = np.packbits(pat, axis=1)
            for c in range(class_count):
                rows = keys[labels == c]
                table[c, l] = Counter(r.tobytes() for r in rows)
        totals = np.bincount(labels, minlength=class_count)
        return cls(table, totals, tuple(p.shape[1] for p in patterns))


@dataclass
class PerplexityReport:
    entropy: np.ndarray  # (layers, classes)
    perplexity: np.ndarray  # (layers, classes)
    class_totals: np.ndarray
    mean_perplexity: np.ndarray  # (layers,)
    metadata: dict = field(default_factory=dict)

    def rows(self):
        for l in range(self.entropy.shape[0]):
            for c in range(self.entropy.shape[1]):
                yield l + 1, c, self.entropy[l, c], self.perplexity[l, c]


def layer_mean_perplexity(perplexities: np.ndarray) -> np.ndarray:
    """Mean over classes per layer, ignoring classes absent from the split."""
    perplexities = np.atleast_2d(np.asarray(perplexities, dtype=np.float64))
    present = ~np.isnan(perplexities)
    if not present.all():
        warnings.warn("some classes are absent; averaging over present classes")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(perplexities, axis=1)


def perplexity_report(mlp: Mlp, data: Dataset, **metadata) -> PerplexityReport:
    """Entropy and perplexity of hidden-layer patterns per class."""
    patterns = extract_patterns(mlp, data)
    classes = data.class_count
    H = np.full((len(patterns), classes), np.nan)
    for l, pat in enumerate(patterns):
        for c in range(classes):
            rows = pat[data.labels == c]
            if rows.shape[0]:
                H[l, c] = entropy(pattern_counts(rows))
    P = np.exp(H)
    meta = {"samples": len(data), **metadata}
    return PerplexityReport(H, P, data.class_counts, layer_mean_perplexity(P), meta)


@dataclass
class ActivationFractionProfile:
    """Fraction of each class's samples that switch each node on.

    Rows run over hidden and output nodes, layer by layer from the input
    side; ``layer_of_node`` gives the 1-based layer of each row.
    """

    fractions: np.ndarray  # (nodes, classes)
    layer_of_node: np.ndarray
    metadata: dict = field(default_factory=dict)

    def layer(self, l: int) -> np.ndarray:
        return self.fractions[self.layer_of_node == l]


def activation_fractions(mlp: Mlp, data: Dataset, **metadata) -> ActivationFractionProfile:
    states = np.concatenate(switch_states(mlp, data.features), axis=1)
    totals = data.class_counts
    fractions = np.full((states.shape[1], data.class_count), np.nan)
    for c in range(data.class_count):
        if totals[c]:
            fractions[:, c] = states[data.labels == c].sum(axis=0) / totals[c]
    layer_of_node = np.repeat(
        np.arange(1, mlp.config.depth + 1), mlp.config.layer_sizes
    )
    meta = {"output_rule": OUTPUT_RULES[mlp.config.loss], **metadata}
    return ActivationFractionProfile(fractions, layer_of_node, meta)


def class_activation_histogram(mlp: Mlp, data: Dataset, layer: int, node: int,
                               bins: int = 50):
    """Per-class histograms of pre-activation values at one node.

    Returns ``(edges, counts)`` with ``counts`` shaped ``(classes, bins)``.
    """
    z = pre_activations(mlp, data.features)[layer - 1][:, node]
    edges = np.histogram_bin_edges(z, bins=bins)
    counts = np.stack([
        np.histogram(z[data.labels == c], bins=edges)[0]
        for c in range(data.class_count)
    ])
    return edges, counts
