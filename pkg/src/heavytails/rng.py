"""Random streams: Philox (counter-based) keyed by an integer seed.

Independent streams use distinct seeds; chain ``k`` of a run seeded ``s``
uses ``s + k``.
"""

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))
