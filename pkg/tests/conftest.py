import os
from pathlib import Path

import pytest

MNIST_CANDIDATES = [
    os.environ.get("TRIPATH_MNIST_DIR"),
    "/root/data/mnist",
    "data/mnist",
]

MNIST_FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]


def _find_mnist():
    for cand in MNIST_CANDIDATES:
        if not cand:
            continue
        d = Path(cand)
        if all((d / f).exists() for f in MNIST_FILES):
            return d
    return None


@pytest.fixture(scope="session")
def mnist_dir():
    d = _find_mnist()
    if d is None:
        pytest.skip(
            "MNIST IDX files not found; set TRIPATH_MNIST_DIR or place the four "
            "ubyte files under data/mnist/ (see README)"
        )
    return d


@pytest.fixture(scope="session")
def mnist_train(mnist_dir):
    from tripath.dataio import load_image_dataset

    return load_image_dataset(
        mnist_dir / "train-images-idx3-ubyte",
        mnist_dir / "train-labels-idx1-ubyte",
        num_classes=10,
    )


@pytest.fixture(scope="session")
def mnist_test(mnist_dir):
    from tripath.dataio import load_image_dataset

    return load_image_dataset(
        mnist_dir / "t10k-images-idx3-ubyte",
        mnist_dir / "t10k-labels-idx1-ubyte",
        num_classes=10,
    )
