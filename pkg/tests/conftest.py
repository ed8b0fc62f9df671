import pytest
import numpy as np

from kanformer.data.cifar import FORMATS, PIXEL_BYTES
from kanformer.utils import load_config, remap_flags, resolve_config

TINY = [
    "--task", "feynman:I.12.1",
    "--model.dim", "8",
    "--model.layers", "1",
    "--model.heads", "2",
    "--moe.num_experts", "4",
    "--kan.grid_size", "4",
    "--data.n_train", "32",
    "--data.n_test", "16",
    "--train.batch_size", "8",
    "--train.max_epochs", "2",
    "--bench.dim", "8",
    "--bench.layers", "1",
    "--bench.batch_size", "8",
    "--bench.max_epochs", "1",
]


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_flags():
    """Command-line flags of a model small enough to train in a few seconds."""
    return list(TINY)


@pytest.fixture
def tiny_cfg(tiny_flags):
    cfg, _ = load_config(None, remap_flags(tiny_flags))
    return resolve_config(cfg)


def write_cifar10(directory, records_per_file=4, test_records=6, num_labels=3, seed=0):
    rng = np.random.default_rng(seed)
    fmt = FORMATS["cifar10"]
    count = 0
    for name, n in [(f, records_per_file) for f in fmt.train_files] + [(fmt.test_files[0], test_records)]:
        raw = b""
        for _ in range(n):
            raw += bytes([count % num_labels]) + rng.integers(0, 256, PIXEL_BYTES, dtype=np.uint8).tobytes()
            count += 1
        (directory / name).write_bytes(raw)
    return directory


@pytest.fixture
def cifar10_dir(tmp_path):
    directory = tmp_path / "cifar-10-batches-bin"
    directory.mkdir()
    return write_cifar10(directory)
