"""
Deterministic random sources. Every sample, rollout and training run owns
its own generator derived from a base seed plus string/int keys, so work
can be split across threads without changing results.
"""

import hashlib
from typing import Union

import numpy as np
import torch

Key = Union[int, str]


def _key_to_int(key: Key) -> int:
    if isinstance(key, int):
        return key & 0xFFFFFFFFFFFFFFFF
    return int.from_bytes(hashlib.sha256(key.encode('utf-8')).digest()[:8], 'little')


def derive_rng(seed: int, *keys: Key) -> np.random.Generator:
    """Independent generator for (seed, keys...)"""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, *keys: Key) -> int:
    """Integer seed for (seed, keys...), stable across runs"""
    return int(derive_rng(seed, *keys).integers(0, 2**31 - 1))


def seed_torch(seed: int) -> None:
    torch.manual_seed(seed)
