"""Counter-based random streams.

Every random outcome in the package is drawn from a Philox generator keyed by
``(seed, stream)`` and started at counter ``step``, so a triple fully
determines a run. Independent trials use distinct stream indices.
"""
import numpy as np

_MASK = (1 << 64) - 1


def make_rng(seed, stream=0, step=0):
    """Return a numpy Generator for the given ``(seed, stream, step)``.

    Args:
        seed: Master seed (non-negative integer).
        stream: Stream index, one per independent trial or component.
        step: Starting block counter inside the stream.

    Returns:
        A ``numpy.random.Generator`` backed by Philox.
    """
    if seed < 0 or stream < 0 or step < 0:
        raise ValueError("seed, stream and step must be non-negative")
    bitgen = np.random.Philox(key=np.array([seed & _MASK, stream & _MASK], dtype=np.uint64),
                              counter=np.array([step & _MASK, 0, 0, 0], dtype=np.uint64))
    return np.random.Generator(bitgen)


def child_seed(rng):
    """Draw a 63-bit integer from ``rng`` for seeding a sub-stream."""
    return int(rng.integers(0, 2**63 - 1))
