"""Named substreams derived from a single root seed.

Every source of randomness in a run (data order, masking, augmentation,
weight init) pulls from its own substream, so a component can be reseeded
or replayed without disturbing the others.
"""

import hashlib

import numpy as np


def substream_seed(root_seed: int, name: str) -> int:
    """Stable 63-bit seed for the substream `name` under `root_seed`."""
    h = hashlib.sha256(f"{root_seed}/{name}".encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def substream(root_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(substream_seed(root_seed, name))
