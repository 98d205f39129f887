import gzip
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_array_equal, assert_allclose

from coopnet.datasets import (
    Dataset,
    IdxTruncatedError,
    SplitSpec,
    holdout,
    load_idx,
    one_hot,
    split,
    synthetic_gaussians,
    write_idx,
)
from coopnet.errors import ConsistencyError, EmptyDatasetError, IdxFormatError

from .conftest import mnist_dir


def _reference_idx(path):
    """Independent IDX reader: header via int.from_bytes, body via bytes()."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    ndim = raw[3]
    dims = [int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim)]
    body = list(raw[4 + 4 * ndim :])
    return dims, body


def _write_pair(tmp_path, pixels, labels, suffix=""):
    n, rows, cols = pixels.shape
    img = tmp_path / f"img{suffix}"
    lab = tmp_path / f"lab{suffix}"
    blobs = (struct.pack(">IIII", 0x803, n, rows, cols) + pixels.astype(np.uint8).tobytes(),
             struct.pack(">II", 0x801, labels.size) + labels.astype(np.uint8).tobytes())
    for p, b in zip((img, lab), blobs):
        if suffix.endswith(".gz"):
            with gzip.open(p, "wb") as fh:
                fh.write(b)
        else:
            p.write_bytes(b)
    return img, lab


@pytest.mark.parametrize("suffix", ["", ".gz"])
def test_load_idx_matches_reference_reader(tmp_path, rng, suffix):
    pixels = rng.integers(0, 256, size=(7, 3, 4))
    labels = rng.integers(0, 5, size=7)
    img, lab = _write_pair(tmp_path, pixels, labels, suffix)
    data = load_idx(img, lab)
    dims, body = _reference_idx(img)
    assert dims == [7, 3, 4]
    assert data.feature_dim == 12 and data.image_shape == (3, 4)
    assert_array_equal(data.features * 255.0, np.array(body, float).reshape(7, 12))
    assert_array_equal(data.labels, _reference_idx(lab)[1])


def test_pixel_255_is_one(tmp_path):
    img, lab = _write_pair(tmp_path, np.full((1, 2, 2), 255), np.array([0]))
    assert_array_equal(load_idx(img, lab).features, 1.0)


def test_empty_idx_rejected(tmp_path):
    img, lab = _write_pair(tmp_path, np.zeros((0, 2, 2)), np.zeros(0))
    with pytest.raises(EmptyDatasetError):
        load_idx(img, lab)


def test_idx_errors(tmp_path):
    img, lab = _write_pair(tmp_path, np.zeros((3, 2, 2)), np.zeros(2))
    with pytest.raises(ConsistencyError):
        load_idx(img, lab)
    with pytest.raises(IdxFormatError):
        load_idx(lab, img)
    img.write_bytes(img.read_bytes()[:-1])
    with pytest.raises(IdxTruncatedError):
        load_idx(img, lab)


@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_idx_round_trip(tmp_path_factory, n, rows, cols, seed):
    tmp = tmp_path_factory.mktemp("rt")
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(n, rows, cols))
    img, lab = _write_pair(tmp, pixels, rng.integers(0, 3, size=n))
    first = load_idx(img, lab, class_count=3)
    write_idx(first, tmp / "a", tmp / "b")
    again = load_idx(tmp / "a", tmp / "b", class_count=3)
    assert_array_equal(first.features, again.features)
    assert_array_equal(first.labels, again.labels)
    assert (tmp / "a").read_bytes() == img.read_bytes()


@pytest.mark.skipif(mnist_dir() is None, reason="MNIST IDX files not available")
def test_mnist_test_files():
    d = mnist_dir()
    suffix = ".gz" if (d / "t10k-images-idx3-ubyte.gz").exists() else ""
    img = d / f"t10k-images-idx3-ubyte{suffix}"
    data = load_idx(img, d / f"t10k-labels-idx1-ubyte{suffix}")
    assert (len(data), data.feature_dim, data.class_count) == (10000, 784, 10)
    dims, body = _reference_idx(img)
    assert dims == [10000, 28, 28]
    assert_array_equal(data.features[0] * 255.0, body[:784])


def test_one_hot():
    assert_array_equal(one_hot(2, 4), [0, 0, 1, 0])
    assert_array_equal(one_hot(0, 1), [1])
    with pytest.raises(ValueError):
        one_hot(5, 3)


def test_synthetic_determinism_and_priors():
    a = synthetic_gaussians(2, 50, 2, 4.0, seed=7)
    b = synthetic_gaussians(2, 50, 2, 4.0, seed=7)
    assert a.features.tobytes() == b.features.tobytes()
    assert_array_equal(a.labels, b.labels)
    c = synthetic_gaussians(3, 10, 5, 6.0, seed=1)
    assert len(c) == 30
    assert_allclose(c.class_priors, [1 / 3] * 3)


def test_zero_separation_is_chance():
    data = synthetic_gaussians(2, 5000, 3, 0.0, seed=0)
    means = [data.features[data.labels == c].mean(axis=0) for c in range(2)]
    assert_allclose(means[0], means[1], atol=0.1)
    # the Bayes-optimal rule for coincident means is a coin flip; a nearest-mean
    # classifier fitted on one half scores near chance on the other
    tr, te = data.subset(np.arange(0, 10000, 2)), data.subset(np.arange(1, 10000, 2))
    mu = np.stack([tr.features[tr.labels == c].mean(axis=0) for c in range(2)])
    pred = np.argmin(((te.features[:, None] - mu[None]) ** 2).sum(-1), axis=1)
    assert abs(np.mean(pred == te.labels) - 0.5) < 0.03


def test_split_sizes_and_determinism():
    data = synthetic_gaussians(2, 50, 2, 1.0, seed=0)
    parts = split(data, SplitSpec(0.8, 0.1, 3))
    assert tuple(map(len, parts)) == (80, 10, 10)
    again = split(data, SplitSpec(0.8, 0.1, 3))
    for p, q in zip(parts, again):
        assert_array_equal(p.features, q.features)
    with pytest.raises(ValueError):
        SplitSpec(0.99, 0.02)


@given(st.integers(3, 200), st.floats(0.1, 0.7), st.floats(0.05, 0.25), st.integers(0, 99))
def test_split_is_partition(n, tf, vf, seed):
    data = Dataset(np.arange(n, dtype=float)[:, None], np.zeros(n, int), 1)
    try:
        parts = split(data, SplitSpec(tf, vf, seed))
    except ValueError:
        return
    ids = np.concatenate([p.features[:, 0] for p in parts])
    assert sum(map(len, parts)) == n
    assert_array_equal(np.sort(ids), np.arange(n))
    for p in parts:
        assert_allclose(p.class_priors.sum(), 1.0, atol=1e-12)


def test_holdout():
    data = synthetic_gaussians(2, 30, 2, 1.0, seed=0)
    tr, va = holdout(data, 1 / 6, 0)
    assert (len(tr), len(va)) == (50, 10)


def test_dataset_immutable_and_iterable():
    data = synthetic_gaussians(2, 3, 2, 1.0, seed=0)
    with pytest.raises(ValueError):
        data.features[0, 0] = 1.0
    samples = list(data)
    assert len(samples) == 6
    assert_array_equal(samples[0].one_hot, one_hot(samples[0].label, 2))
    with pytest.raises(EmptyDatasetError):
        data.subset(np.arange(0)).class_priors
