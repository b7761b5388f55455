"""Named random streams derived from a single integer seed.

Each consumer asks for its own stream by name, so adding a new consumer
never shifts the numbers an existing one sees.
"""
import hashlib

import numpy as np


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), _name_key(name)]))
