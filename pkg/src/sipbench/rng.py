"""Named seed substreams.

Every random draw in the library flows from one root seed through named
substreams, so adding or reordering consumers never silently shifts the
stream another consumer sees. Tags (strings or integers) are hashed into
64-bit words and appended to the root entropy.
"""

from __future__ import annotations

import hashlib

import numpy as np

Seed = "int | np.random.SeedSequence"


def _tag_word(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        data = b"i:" + str(int(tag)).encode()
    elif isinstance(tag, str):
        data = b"s:" + tag.encode()
    else:
        raise TypeError(f"substream tags must be int or str, got {type(tag).__name__}")
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "little")


def seed_sequence(root, *tags) -> np.random.SeedSequence:
    """SeedSequence for the substream named by ``tags`` under ``root``."""
    if isinstance(root, np.random.SeedSequence):
        entropy = list(np.atleast_1d(root.entropy)) if root.entropy is not None else [0]
    else:
        entropy = [int(root)]
    return np.random.SeedSequence(entropy + [_tag_word(t) for t in tags])


def substream(root, *tags) -> np.random.Generator:
    """Generator for the named substream."""
    return np.random.default_rng(seed_sequence(root, *tags))


def substream_seed(root, *tags) -> int:
    """A plain integer seed derived from the named substream.

    Used where an API boundary takes an int seed rather than a Generator.
    """
    return int(seed_sequence(root, *tags).generate_state(1, np.uint64)[0])


def as_rng(seed) -> np.random.Generator:
    """Accept an int, SeedSequence, or Generator and return a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
