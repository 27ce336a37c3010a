"""Counter-based random streams.

Every random quantity in the package is addressed by ``(seed, stream, position)``
so that values do not depend on generation order or chunking. The backing
generator is Philox, keyed by the 64-bit seed and a stream tag.
"""
from __future__ import annotations

import numpy as np

from .errors import ValidationError

# stream tags, one per independent use of a seed
LATENTS = 1
FOLLOWERS = 2
SIMPLIFIED_EDGES = 3
BIPARTITE_EDGES = 4
EIGEN_START = 5

_MASK64 = (1 << 64) - 1


def check_seed(seed) -> int:
    seed = int(seed)
    if seed < 0 or seed > _MASK64:
        raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def uniform_stream(seed: int, stream: int, start: int, count: int) -> np.ndarray:
    """Return ``count`` uniforms in [0, 1) at positions ``start, start+1, ...``.

    Philox emits four doubles per counter increment, so the generator is
    advanced to the enclosing block and the head is discarded.
    """
    seed = check_seed(seed)
    if count <= 0:
        return np.empty(0)
    bg = np.random.Philox(key=seed | (int(stream) << 64))
    block, offset = divmod(int(start), 4)
    if block:
        bg.advance(block)
    return np.random.Generator(bg).random(offset + count)[offset:]
