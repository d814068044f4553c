"""Counter-based splittable random streams.

Every stochastic component draws from its own Philox stream keyed by
(seed, stream id), so adding draws to one component never perturbs
another and runs replay bit-identically.
"""

from __future__ import annotations

import numpy as np

# Stream ids. Keep these stable: they are part of the reproducibility contract.
STREAM_CORPUS = 1
STREAM_MASKING = 2
STREAM_INIT = 3
STREAM_TRAIN = 4
STREAM_LANDSCAPE = 5
STREAM_VERIFY = 6

_MASK64 = (1 << 64) - 1


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    """Return an independent generator for (seed, stream).

    Streams with distinct ids are statistically independent Philox
    counter sequences; the same pair always yields the same sequence.
    """
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def draw_seed(entropy_rng: np.random.Generator | None = None) -> int:
    """Draw a fresh 63-bit seed (recorded in run manifests when the user
    did not pass one explicitly)."""
    if entropy_rng is None:
        return int(np.random.SeedSequence().entropy & ((1 << 63) - 1))
    return int(entropy_rng.integers(0, 1 << 63))
