import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@pytest.fixture(scope="session")
def digits():
    """Train and test sets from the bundled digits fixture, downsampled to 14x14."""
    from curiousfl.harness import DataConfig, load_datasets

    base = os.path.join(ROOT, "data", "digits")
    cfg = DataConfig(
        os.path.join(base, "train-images-idx3-ubyte.gz"),
        os.path.join(base, "train-labels-idx1-ubyte.gz"),
        os.path.join(base, "t10k-images-idx3-ubyte.gz"),
        os.path.join(base, "t10k-labels-idx1-ubyte.gz"),
        downsample=2,
    )
    return load_datasets(cfg)


@pytest.fixture(scope="session")
def data_config():
    from curiousfl.harness import DataConfig

    base = os.path.join(ROOT, "data", "digits")
    return DataConfig(
        os.path.join(base, "train-images-idx3-ubyte.gz"),
        os.path.join(base, "train-labels-idx1-ubyte.gz"),
        os.path.join(base, "t10k-images-idx3-ubyte.gz"),
        os.path.join(base, "t10k-labels-idx1-ubyte.gz"),
        downsample=2,
    )
