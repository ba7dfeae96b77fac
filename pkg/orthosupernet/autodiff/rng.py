from enum import IntEnum

import numpy as np


class Site(IntEnum):
    """Stream identifiers for draws that are not dropout masks."""

    BATCH = 1
    SUBNET = 2
    LAYER_DROP = 3
    HARD_CONCRETE = 4
    SANDWICH = 5
    SCORE_INIT = 6
    DROPOUT = 16


def counter_generator(seed: int, step: int, site: int, stream: int = 0) -> np.random.Generator:
    """Generator keyed on ``(seed, step, site, stream)``.

    Philox advances the lowest counter word while drawing, so the key
    coordinates occupy the upper words and distinct sites never overlap.
    """
    counter = np.array([0, stream, site, step], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=seed, counter=counter))


class DropoutStream:
    """Hands out one generator per dropout call site of a forward pass.

    Call sites are numbered in execution order, so two forwards that run the
    same code path with the same ``(seed, step, stream)`` draw identical masks.
    """

    def __init__(self, seed: int, step: int, stream: int = 0) -> None:
        self.seed = seed
        self.step = step
        self.stream = stream
        self._site = 0

    def next(self) -> np.random.Generator:
        self._site += 1
        return counter_generator(
            self.seed, self.step, Site.DROPOUT + self._site, self.stream
        )
