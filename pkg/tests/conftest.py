import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from bgtal.clicks import generate_synthetic_dataset
from bgtal.data import load_manifest

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A tiny synthetic dataset shared by module tests (6 train / 3 test)."""
    root = tmp_path_factory.mktemp("smalldata")
    train_m, test_m = generate_synthetic_dataset(
        root, n_train=6, n_test=3, n_classes=3, d_in=16, t_fixed=128,
        sigma=0.1, rng_seed=7)
    return load_manifest(train_m), load_manifest(test_m)
