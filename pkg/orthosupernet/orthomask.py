"""Orthogonal-softmax mask learning.

Row ``i`` of ``W = softmax_rows(S / T)`` is a distribution over groups; a
subnet's soft mask is the sum of the first ``k`` rows, with ``k`` the longest
prefix whose expected cost stays under the budget. The orthogonality loss
pushes those rows toward distinct one-hot vectors so the mask becomes
``k``-hot.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from orthosupernet.autodiff import functional as F
from orthosupernet.autodiff.rng import Site, counter_generator
from orthosupernet.autodiff.tensor import Parameter, Tape, Tensor
from orthosupernet.costs import CostVector, resolve_budget, verify
from orthosupernet.encoder.masks import MaskVector
from orthosupernet.exceptions import BudgetInfeasible
from orthosupernet.schemas import SubnetBudget


SCORE_NAME = "orthomask/scores"


@dataclass(frozen=True)
class TemperatureSchedule:
    """``T(t) = max(floor, initial * decay ** t)``; a disabled schedule
    holds ``initial``."""

    initial: float = 1.0
    floor: float = 0.1
    decay: float = 0.999992
    anneal: bool = True

    def __call__(self, step: int) -> float:
        if not self.anneal:
            return self.initial
        return max(self.floor, self.initial * self.decay**step)


def temperature(step: int) -> float:
    return TemperatureSchedule()(step)


class ScoreMatrix:
    """Learnable ``N x N`` score matrix, always 64-bit.

    Starts at zero plus, when ``noise > 0``, a seeded uniform draw from
    ``[-noise, noise]`` per entry; rows that enter a subnet's prefix together
    receive identical gradients and stay identical unless they start apart.
    """

    def __init__(self, size: int, noise: float = 0.0, seed: int = 0) -> None:
        values = np.zeros((size, size), dtype=np.float64)
        if noise > 0:
            generator = counter_generator(seed, 0, Site.SCORE_INIT)
            values += generator.uniform(-noise, noise, size=(size, size))
        self.parameter = Parameter(SCORE_NAME, values)

    @property
    def size(self) -> int:
        return self.parameter.value.shape[0]

    @property
    def values(self) -> np.ndarray:
        return self.parameter.value

    def watch(self, tape: Tape) -> Tensor:
        return tape.watch(self.parameter)

    def weights(self, temperature: float) -> np.ndarray:
        return weights(Tensor(self.values), temperature).data


@dataclass
class SubnetPlan:
    """Budget and current selection of one subnet.

    Attributes
    ----------
    subnet : int
        Position in the ascending-``tau`` order
    budget : SubnetBudget
    tau : float
    k : int
    mask : MaskVector or None
        Rounded binary mask once Step 1 has ended
    split : int or None
        Tapped block of an auxiliary-head subnet
    """

    subnet: int
    budget: SubnetBudget
    tau: float
    k: int = 0
    mask: MaskVector | None = None
    split: int | None = None


def plan_subnets(budgets: Sequence[SubnetBudget], cost: CostVector) -> list[SubnetPlan]:
    """Resolve every budget and number the subnets by ascending ``tau``."""
    resolved = sorted(
        ((resolve_budget(budget, cost), index, budget) for index, budget in enumerate(budgets)),
        key=lambda item: (item[0], item[1]),
    )
    return [
        SubnetPlan(subnet=position, budget=budget, tau=tau)
        for position, (tau, _, budget) in enumerate(resolved)
    ]


def weights(scores: Tensor, temperature: float) -> Tensor:
    """Row-stochastic ``W``, differentiable with respect to ``scores``."""
    return F.softmax_rows(scores, temperature)


def expected_costs(w: np.ndarray, cost: np.ndarray) -> np.ndarray:
    return w @ cost


def select_k(w: np.ndarray, cost: np.ndarray, tau: float) -> int:
    """Longest prefix of rows whose summed expected cost is strictly below
    ``tau``.

    Parameters
    ----------
    w : np.ndarray
        Row-stochastic ``N x N`` weights
    cost : np.ndarray
        Per-group costs
    tau : float

    Returns
    -------
    int
        ``k`` in ``0..N``
    """
    prefix = np.cumsum(expected_costs(np.asarray(w, dtype=np.float64), np.asarray(cost, dtype=np.float64)))
    return int(np.searchsorted(prefix, tau, side="left"))


def assemble_mask(w: Tensor, k: int) -> Tensor:
    """Soft mask ``z = sum of the first k rows``."""
    size = w.shape[0]
    if not 0 <= k <= size:
        raise ValueError(f"k={k} outside 0..{size}")
    if k == 0:
        return Tensor(np.zeros(size, dtype=w.dtype), w.tape)
    return F.reduce_sum(F.slice_axis(w, 0, k, axis=0), axis=0)


def ortho_loss(w: Tensor, k: int) -> Tensor:
    """``sqrt`` of the squared upper triangle, diagonal included, of
    ``W[:k] W[:k]^T - I``; zero when ``k == 0``."""
    if k == 0:
        return Tensor(np.zeros((), dtype=w.dtype), w.tape)
    top = F.slice_axis(w, 0, k, axis=0)
    gram = top @ top.T
    eye = np.eye(k, dtype=w.dtype)
    upper = np.triu(np.ones((k, k), dtype=w.dtype))
    deviation = (gram - Tensor(eye, w.tape)) * Tensor(upper, w.tape)
    return F.sqrt(F.reduce_sum(F.square(deviation)))


def row_entropy(w: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) of every row of ``w``."""
    w = np.asarray(w, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(w > 0, -w * np.log(w), 0.0)
    return terms.sum(axis=1)


def round_rows(w: np.ndarray, k: int) -> list[int]:
    """Group chosen by each of the first ``k`` rows: its argmax, or on a
    collision its most probable group not taken by an earlier row."""
    taken: list[int] = []
    for row in np.asarray(w)[:k]:
        for group in np.argsort(-row, kind="stable"):
            if int(group) not in taken:
                taken.append(int(group))
                break
    return taken


def round_masks(w: np.ndarray, plans: Sequence[SubnetPlan], cost: CostVector) -> list[MaskVector]:
    """Binary mask per subnet at the end of Step 1.

    The selection is repaired by dropping the last chosen group until the
    strict budget holds; each plan's ``k`` and ``mask`` are updated.

    Raises
    ------
    BudgetInfeasible
        Not even the empty mask satisfies a budget
    """
    masks = []
    for plan in plans:
        chosen = round_rows(w, select_k(w, cost.per_group, plan.tau))
        mask = MaskVector.from_ids(len(cost.per_group), chosen)
        while not verify(mask, cost, plan.tau):
            if not chosen:
                raise BudgetInfeasible(plan.subnet, plan.tau)
            chosen.pop()
            mask = MaskVector.from_ids(len(cost.per_group), chosen)
        plan.k = len(chosen)
        plan.mask = mask
        masks.append(mask)
    return masks
