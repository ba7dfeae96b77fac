"""Connectionist temporal classification over the autodiff tape."""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from orthosupernet.autodiff import functional as F
from orthosupernet.autodiff.tensor import Tensor
from orthosupernet.exceptions import FeasibilityError, OracleSizeError
from orthosupernet.tasks.synth import required_frames


BLANK = 0
ORACLE_MAX_FRAMES = 8
ORACLE_MAX_VOCAB = 4


def expand(labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Blank-augmented target and, per position, whether the transition
    skipping the preceding blank is allowed."""
    extended = [BLANK]
    skip = [False]
    for position, label in enumerate(labels):
        extended += [label, BLANK]
        skip += [position > 0 and labels[position - 1] != label, False]
    return np.asarray(extended, dtype=np.intp), np.asarray(skip)


def ctc_loss(log_probs: Tensor, labels: Sequence[int]) -> Tensor:
    """Negative log-likelihood ``-log p(labels | x)``.

    Parameters
    ----------
    log_probs : Tensor
        ``T x (V + 1)`` per-frame log-probabilities, blank at index 0
    labels : Sequence[int]
        Target ids in ``1..V``; may be empty

    Returns
    -------
    Tensor
        Scalar loss

    Raises
    ------
    FeasibilityError
        ``T`` is shorter than the target needs
    """
    labels = list(labels)
    frames = log_probs.shape[0]
    needed = required_frames(labels)
    if frames < max(needed, 1):
        raise FeasibilityError(frames, max(needed, 1))

    extended, skip = expand(labels)
    states = len(extended)
    dtype = log_probs.dtype
    tape = log_probs.tape
    ninf = np.full(2, -np.inf, dtype=dtype)
    skip_bias = Tensor(np.where(skip, 0.0, -np.inf).astype(dtype), tape)

    emissions = F.take(log_probs, extended, axis=1)
    start = np.full(states, -np.inf, dtype=dtype)
    start[: min(2, states)] = 0.0
    alpha = Tensor(start, tape) + F.reshape(F.slice_axis(emissions, 0, 1, axis=0), (states,))
    for t in range(1, frames):
        stay = alpha
        if states > 1:
            step = F.concat([Tensor(ninf[:1], tape), F.slice_axis(alpha, 0, states - 1)], axis=0)
            jump = F.concat([Tensor(ninf[: min(2, states)], tape), F.slice_axis(alpha, 0, max(states - 2, 0))], axis=0)
            candidates = F.stack([stay, step, jump + skip_bias], axis=0)
            merged = F.logsumexp(candidates, axis=0)
        else:
            merged = stay
        alpha = merged + F.reshape(F.slice_axis(emissions, t, t + 1, axis=0), (states,))

    finals = [states - 1] if states == 1 else [states - 2, states - 1]
    return -F.logsumexp(F.take(alpha, finals), axis=0)


def collapse(path: Sequence[int]) -> list[int]:
    """Merge consecutive repeats, then drop blanks."""
    return [int(label) for label, _ in itertools.groupby(path) if label != BLANK]


def ctc_brute_force(probs: np.ndarray, labels: Sequence[int]) -> float:
    """``-log`` of the summed probability of every path collapsing to
    ``labels``; ``inf`` when none does.

    Raises
    ------
    OracleSizeError
        More than 8 frames or 4 labels
    """
    probs = np.asarray(probs, dtype=np.float64)
    frames, classes = probs.shape
    if frames > ORACLE_MAX_FRAMES or classes - 1 > ORACLE_MAX_VOCAB:
        raise OracleSizeError(frames, classes - 1)
    target = list(labels)
    total = 0.0
    for path in itertools.product(range(classes), repeat=frames):
        if collapse(path) == target:
            total += float(np.prod(probs[np.arange(frames), path]))
    if total == 0.0:
        return float("inf")
    return -float(np.log(total))


def greedy_decode(log_probs: Tensor | np.ndarray) -> list[int]:
    data = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    return collapse(np.argmax(data, axis=-1).tolist())
