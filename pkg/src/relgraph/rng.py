"""Deterministic random streams built on the Philox counter-based generator.

Every source of randomness in the package flows through :func:`stream`.
A stream is identified by ``(seed, stream_id)``, which becomes the 128-bit
Philox key, so distinct ids give statistically independent generators and
the i-th stream can be reconstructed without drawing from streams 0..i-1.
This is what makes batched sampling equal an element-wise loop: batch
element i always uses ``stream(seed, base + i)``.

Stream-id ranges are partitioned by purpose so independent consumers never
collide on a key:

* ``0 .. 2**40``          per-example neighbor sampling during training
* ``PREDICT_STREAM_BASE`` per-example sampling at prediction time
* ``PARAM_INIT_STREAM``   model parameter initialization
* ``SHUFFLE_STREAM``      mini-batch order shuffling
* ``SYNTH_STREAM_BASE``   synthetic data generation
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

PREDICT_STREAM_BASE = 1 << 61
PARAM_INIT_STREAM = 1 << 62
SHUFFLE_STREAM = (1 << 62) + 1
SYNTH_STREAM_BASE = 1 << 63


def stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Return the generator for Philox key ``(seed, stream_id)``."""
    key = np.array([seed & _MASK64, stream_id & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
