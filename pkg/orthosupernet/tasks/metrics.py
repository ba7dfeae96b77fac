from typing import Sequence

import numpy as np

from orthosupernet.autodiff.exceptions import ContractError


def edit_distance(hypothesis: Sequence[int], reference: Sequence[int]) -> int:
    """Levenshtein distance with unit substitution, insertion and deletion
    costs."""
    previous = np.arange(len(reference) + 1)
    for row, token in enumerate(hypothesis, start=1):
        current = np.empty_like(previous)
        current[0] = row
        for column, expected in enumerate(reference, start=1):
            current[column] = min(
                previous[column] + 1,
                current[column - 1] + 1,
                previous[column - 1] + (token != expected),
            )
        previous = current
    return int(previous[-1])


def label_error_rate(
    hypotheses: Sequence[Sequence[int]], references: Sequence[Sequence[int]]
) -> float:
    """Total edit distance over total reference length, in percent.

    Raises
    ------
    ContractError
        The two lists differ in length
    """
    if len(hypotheses) != len(references):
        raise ContractError(
            f"{len(hypotheses)} hypotheses for {len(references)} references"
        )
    distance = sum(edit_distance(h, r) for h, r in zip(hypotheses, references))
    length = sum(len(reference) for reference in references)
    return 100.0 * distance / max(length, 1)
