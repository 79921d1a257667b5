"""Named sub-seeds so every random stream (split, init, shuffle, ...) is reproducible on its own."""

import hashlib

import numpy as np


def derive_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def sub_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, name))
