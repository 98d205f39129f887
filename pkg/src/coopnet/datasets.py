"""Dataset containers, IDX reading/writing, synthetic data and splits.

Features are stored as one ``(n, feature_dim)`` float64 array and labels as
one int array, so a :class:`Dataset` is cheap to slice.  Iterating over it
yields :class:`Sample` records.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, EmptyDatasetError, IdxFormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def one_hot(label: int, class_count: int) -> np.ndarray:
    """Return a length-``class_count`` vector with a single 1 at ``label``."""
    if class_count < 1:
        raise ValueError(f"class_count must be positive, got {class_count}")
    if not 0 <= label < class_count:
        raise ValueError(f"label {label} out of range for {class_count} classes")
    vec = np.zeros(class_count)
    vec[label] = 1.0
    return vec


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int
    one_hot: np.ndarray


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    image_shape: tuple[int, int] | None = None
    name: str = ""

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D (samples, features) array")
        if labels.shape != (feats.shape[0],):
            raise ConsistencyError(
                f"{feats.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValueError("labels must lie in [0, class_count)")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.shape[0]

    def __iter__(self):
        eye = np.eye(self.class_count)
        for x, y in zip(self.features, self.labels):
            yield Sample(x, int(y), eye[y])

    def __getitem__(self, idx) -> Sample:
        y = int(self.labels[idx])
        return Sample(self.features[idx], y, one_hot(y, self.class_count))

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def one_hot(self) -> np.ndarray:
        return np.eye(self.class_count)[self.labels]

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    @property
    def class_priors(self) -> np.ndarray:
        if len(self) == 0:
            raise EmptyDatasetError("class priors of an empty dataset")
        return self.class_counts / len(self)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            self.features[index],
            self.labels[index],
            self.class_count,
            self.image_shape,
            self.name,
        )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    val_fraction: float = 0.15
    shuffle_seed: int = 0

    def __post_init__(self):
        for name in ("train_fraction", "val_fraction"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if self.train_fraction + self.val_fraction >= 1:
            raise ValueError(
                "train_fraction + val_fraction must be < 1 to leave a test split"
            )


# ---------------------------------------------------------------- IDX format


class IdxTruncatedError(OSError):
    pass


def _open(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, expected_magic: int, expected_ndim: int) -> np.ndarray:
    path = Path(path)
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError(path, "file too short for an IDX header")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    magic = struct.unpack(">I", raw[:4])[0]
    if zero != 0 or dtype_code != 0x08 or ndim != expected_ndim:
        raise IdxFormatError(
            path,
            f"magic 0x{magic:08x} does not match expected 0x{expected_magic:08x}",
        )
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IdxFormatError(path, "truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    count = int(np.prod(dims))
    payload = raw[header_end:]
    if len(payload) < count:
        raise IdxTruncatedError(
            f"{path}: payload has {len(payload)} bytes, header promises {count}"
        )
    return np.frombuffer(payload, dtype=np.uint8, count=count).reshape(dims)


def load_idx(images_path, labels_path, class_count: int | None = None) -> Dataset:
    """Load an IDX image/label file pair, scaling pixel bytes by 1/255.

    ``class_count`` defaults to ``max(label) + 1``.
    """
    images = _read_idx(images_path, IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images_path} holds {images.shape[0]} images but "
            f"{labels_path} holds {labels.shape[0]} labels"
        )
    if images.shape[0] == 0:
        raise EmptyDatasetError(f"{images_path} contains no items")
    n, rows, cols = images.shape
    features = images.reshape(n, rows * cols).astype(np.float64) / 255.0
    if class_count is None:
        class_count = int(labels.max()) + 1
    return Dataset(
        features,
        labels.astype(np.int64),
        class_count,
        image_shape=(rows, cols),
        name=Path(images_path).name,
    )


def write_idx(dataset: Dataset, images_path, labels_path, image_shape=None):
    """Write ``dataset`` as an IDX pair (pixels re-quantized as round(255*x))."""
    shape = image_shape or dataset.image_shape or (1, dataset.feature_dim)
    rows, cols = shape
    if rows * cols != dataset.feature_dim:
        raise ValueError(f"image shape {shape} does not match {dataset.feature_dim}")
    pixels = np.rint(np.clip(dataset.features, 0.0, 1.0) * 255.0).astype(np.uint8)
    n = len(dataset)
    img = struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + pixels.tobytes()
    lab = struct.pack(">II", LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    for path, blob in ((Path(images_path), img), (Path(labels_path), lab)):
        if path.suffix == ".gz":
            with gzip.open(path, "wb") as fh:
                fh.write(blob)
        else:
            path.write_bytes(blob)


# ------------------------------------------------------------------ synthetic


def _class_directions(class_count: int, feature_dim: int, rng) -> np.ndarray:
    dirs = []
    for c in range(class_count):
        vec = np.zeros(feature_dim)
        if c < feature_dim:
            vec[c] = 1.0
        elif c < 2 * feature_dim:
            vec[c - feature_dim] = -1.0
        else:
            vec = rng.standard_normal(feature_dim)
            vec /= np.linalg.norm(vec)
        dirs.append(vec)
    return np.array(dirs)


def synthetic_gaussians(
    class_count: int,
    per_class: int,
    feature_dim: int,
    separation: float,
    seed: int,
) -> Dataset:
    """Isotropic unit-variance Gaussian blobs, one per class.

    Class ``c`` is centred at ``separation * d_c`` where the unit directions
    ``d_c`` are the coordinate axes, then their negatives, then seeded random
    directions once those run out.
    """
    if feature_dim < 1:
        raise ValueError(f"feature_dim must be >= 1, got {feature_dim}")
    if class_count < 1 or per_class < 1:
        raise ValueError("class_count and per_class must be positive")
    if separation < 0:
        raise ValueError("separation must be non-negative")
    rng = np.random.default_rng(seed)
    means = separation * _class_directions(class_count, feature_dim, rng)
    labels = np.repeat(np.arange(class_count), per_class)
    features = means[labels] + rng.standard_normal((labels.size, feature_dim))
    order = rng.permutation(labels.size)
    return Dataset(features[order], labels[order], class_count, name="synthetic")


# --------------------------------------------------------------------- splits


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle with ``spec.shuffle_seed`` and cut into train/val/test."""
    n = len(dataset)
    if n == 0:
        raise EmptyDatasetError("cannot split an empty dataset")
    n_train = int(round(spec.train_fraction * n))
    n_val = int(round(spec.val_fraction * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(
            f"split of {n} samples gives sizes ({n_train}, {n_val}, {n_test})"
        )
    order = np.random.default_rng(spec.shuffle_seed).permutation(n)
    return (
        dataset.subset(order[:n_train]),
        dataset.subset(order[n_train : n_train + n_val]),
        dataset.subset(order[n_train + n_val :]),
    )


def holdout(dataset: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Two-way split used when a separate test set already exists."""
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must lie in (0, 1)")
    n = len(dataset)
    n_val = int(round(val_fraction * n))
    if n_val < 1 or n_val >= n:
        raise ValueError(f"holdout of {n} samples leaves an empty side")
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(order[n_val:]), dataset.subset(order[:n_val])
