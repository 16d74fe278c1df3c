"""Deterministic random streams for reproducible batch generation.

Every generated image draws from its own Philox4x64 stream keyed by
``(global_seed, image_index)``. Philox is counter-based, so the stream for a
given key is identical on every machine and independent of how many worker
processes are running or in which order images complete. Draw sequencing
within one image is fixed by the generator code (see ``synth``).
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(global_seed: int, image_index: int) -> np.random.Generator:
    """Return the dedicated random stream for one generated image.

    Args:
        global_seed: Dataset-level seed (any Python int; folded to 64 bits).
        image_index: Zero-based index of the image within the batch.

    Returns:
        A ``numpy.random.Generator`` whose output depends only on the
        ``(global_seed, image_index)`` pair.
    """
    key = np.array([global_seed & _MASK64, image_index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
