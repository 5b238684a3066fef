"""Seeded random streams on the Philox4x64-10 counter-based generator.

Each stochastic component draws from its own named stream so that
independent parts of a run never share randomness.  The key layout is
fixed (and documented in the README) so ports in other languages can
reproduce the streams exactly: key word 0 is the user seed, key word 1
packs ``(stream_id << 48) | index`` where ``index`` is the epoch for
shuffle streams and 0 elsewhere.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

SYNTHESIS = 1
SHUFFLE = 2
PARAMETER_INIT = 3

_MAX_INDEX = 1 << 48


def stream(seed: int, stream_id: int, index: int = 0) -> np.random.Generator:
    """Return the generator for one named stream of a seed."""
    if not 0 <= seed < 1 << 64:
        raise ConfigError(f"seed must fit in an unsigned 64-bit word, got {seed}")
    if not 0 <= index < _MAX_INDEX:
        raise ConfigError(f"stream index out of range: {index}")
    key = np.array([seed, (stream_id << 48) | index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
