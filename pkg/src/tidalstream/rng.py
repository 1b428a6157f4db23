"""Deterministic random streams.

Every random quantity is drawn from a Philox (counter-based) generator keyed by
``(seed, stage, index)``. The key goes through numpy's ``SeedSequence`` with the
stage name hashed by BLAKE2b, so a replicate's stream depends only on its own
key: replicates can be evaluated in any order or in parallel with identical
results.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stage_code(stage):
    """Stable 32-bit code for a stage name."""
    digest = hashlib.blake2b(str(stage).encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def derive_seed(seed, stage, index=0):
    """Stable 64-bit child seed for ``(seed, stage, index)``."""
    h = hashlib.blake2b(digest_size=8)
    h.update(f"{int(seed) & _MASK64}:{stage}:{int(index)}".encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def generator(seed, stage="", index=0):
    """Philox generator for one ``(seed, stage, index)`` key."""
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64,
                                spawn_key=(stage_code(stage), int(index)))
    return np.random.Generator(np.random.Philox(ss))
