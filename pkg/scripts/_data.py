"""Image data for the scripts: MNIST if ``$COOPNET_MNIST_DIR`` holds the IDX
files, otherwise scikit-learn's 8x8 digits as a small stand-in."""

import os
from pathlib import Path

from coopnet.datasets import Dataset, SplitSpec, holdout, load_idx, split


def _find(d: Path, stem: str) -> Path:
    return d / stem if (d / stem).exists() else d / f"{stem}.gz"


def image_splits():
    d = os.environ.get("COOPNET_MNIST_DIR")
    if d and _find(Path(d), "t10k-images-idx3-ubyte").exists():
        d = Path(d)
        full = load_idx(_find(d, "train-images-idx3-ubyte"),
                        _find(d, "train-labels-idx1-ubyte"), 10)
        test = load_idx(_find(d, "t10k-images-idx3-ubyte"),
                        _find(d, "t10k-labels-idx1-ubyte"), 10)
        return (*holdout(full, 1 / 6, 0), test), "MNIST"
    from sklearn.datasets import load_digits

    digits = load_digits()
    data = Dataset(digits.data / 16.0, digits.target, 10, image_shape=(8, 8))
    return split(data, SplitSpec(0.7, 0.15, 0)), "8x8 digits"
