"""
Per-stage seed derivation. One root seed fans out to independent stage seeds
through a keyed blake2b hash; the bitstring package turns the digest into a
fixed width unsigned integer.
"""
import hashlib
import random

import numpy as np
import torch
from bitstring import BitArray

from DistilPy.base import ValidationError

SEED_BITS = 64


def _root_key(root_seed):
    if not 0 <= int(root_seed) < 2 ** SEED_BITS:
        raise ValidationError("seed", "%r is not an unsigned %d bit integer"
                              % (root_seed, SEED_BITS))
    return BitArray(uint=int(root_seed), length=SEED_BITS).bytes


def derive_seed(root_seed, stage_name):
    """
    Returns a 64 bit seed for ``stage_name`` derived from ``root_seed``.

    USAGE
    =====

    >>> derive_seed(42, "pretrain") == derive_seed(42, "pretrain")
    True
    >>> derive_seed(42, "pretrain") == derive_seed(42, "distill")
    False
    """
    if not stage_name:
        raise ValidationError("stage_name", "must not be empty")
    digest = hashlib.blake2b(
        str(stage_name).encode("utf-8"), key=_root_key(root_seed), digest_size=32).digest()
    return BitArray(bytes=digest)[:SEED_BITS].uint


def torch_seed(seed):
    # torch.manual_seed accepts at most 64 unsigned bits
    return int(seed) % (2 ** SEED_BITS)


def seed_everything(seed):
    """
    Seeds python's ``random``, numpy's legacy global state and torch.
    Stage code prefers explicit generators; this covers third party code that
    draws from the global state.
    """
    seed = torch_seed(seed)
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


def torch_generator(seed):
    generator = torch.Generator()
    generator.manual_seed(torch_seed(seed))
    return generator


def numpy_generator(seed):
    return np.random.default_rng(torch_seed(seed))
