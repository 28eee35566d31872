import numpy as np
import pytest
import torch

from DistilPy.base import ValidationError
from DistilPy.core.seeding import *


def test_derive_seed_is_deterministic():
    assert derive_seed(42, "pretrain") == derive_seed(42, "pretrain")


def test_derive_seed_separates_stages_and_roots():
    assert derive_seed(42, "pretrain") != derive_seed(42, "distill")
    assert derive_seed(42, "x") != derive_seed(43, "x")
    assert derive_seed(0, "x") != derive_seed(2 ** 64 - 1, "x")

    seeds = {derive_seed(root, stage) for root in range(20)
             for stage in ("pretrain", "attack", "teacher", "student", "distill")}
    assert len(seeds) == 100


def test_derive_seed_range():
    for root in (0, 1, 2 ** 63 - 1, 2 ** 63, 2 ** 64 - 1):
        seed = derive_seed(root, "stage")
        assert 0 <= seed < 2 ** 64


def test_derive_seed_rejects_roots_outside_unsigned_64_bits():
    for root in (-1, -2 ** 63, 2 ** 64):
        with pytest.raises(ValidationError):
            derive_seed(root, "stage")


def test_derive_seed_needs_stage():
    with pytest.raises(ValidationError):
        derive_seed(0, "")


def test_generators():
    seed = derive_seed(7, "batches")
    assert np.array_equal(numpy_generator(seed).permutation(10),
                          numpy_generator(seed).permutation(10))
    a = torch.randperm(10, generator=torch_generator(seed))
    b = torch.randperm(10, generator=torch_generator(seed))
    assert torch.equal(a, b)


def test_seed_everything():
    seed_everything(3)
    first = (np.random.rand(), torch.rand(1).item())
    seed_everything(3)
    assert (np.random.rand(), torch.rand(1).item()) == first
