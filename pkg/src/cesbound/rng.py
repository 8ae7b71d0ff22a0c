"""Counter-based random streams.

Every Monte Carlo batch draws from ``stream(seed, batch_index)`` so that serial
and parallel runs consume identical random numbers.
"""

import numpy as np


def stream(seed: int, *index: int) -> np.random.Generator:
    """Philox generator keyed by ``seed`` and an optional substream index."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, index)])))


def batch_sizes(n: int, batch: int) -> list[int]:
    """Split ``n`` draws into consecutive batches of at most ``batch``."""
    if n < 0 or batch < 1:
        raise ValueError("need n >= 0 and batch >= 1")
    full, rest = divmod(n, batch)
    return [batch] * full + ([rest] if rest else [])
