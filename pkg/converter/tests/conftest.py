from pathlib import Path

import numpy as np
import pytest

from synth import build_cells, write_container


@pytest.fixture(scope="session")
def container_cells() -> np.ndarray:
    return build_cells()


@pytest.fixture(scope="session")
def container(tmp_path_factory, container_cells) -> Path:
    path = tmp_path_factory.mktemp("alphadigs") / "binaryalphadigs.mat"
    write_container(path, container_cells)
    return path
