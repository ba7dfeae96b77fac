"""Comparison mask learners: straight-through top-k, hard-concrete L0 gates,
bottom blocks with an auxiliary head, and fixed evenly-thinned masks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from orthosupernet.autodiff import functional as F
from orthosupernet.autodiff.exceptions import ContractError
from orthosupernet.autodiff.tensor import Tensor
from orthosupernet.costs import CostVector, verify
from orthosupernet.encoder.groups import GroupRegistry
from orthosupernet.encoder.masks import MaskVector
from orthosupernet.exceptions import BudgetInfeasible, ConfigError


def _greedy_prefix(order: np.ndarray, cost: np.ndarray, tau: float) -> list[int]:
    chosen: list[int] = []
    total = 0.0
    for group in order:
        if total + cost[group] >= tau:
            break
        total += cost[group]
        chosen.append(int(group))
    return chosen


def ste_mask(scores: np.ndarray, cost: CostVector, tau: float) -> MaskVector:
    """Binary mask taking groups by descending score (lower id first on
    ties) while the running cost stays strictly below ``tau``."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    return MaskVector.from_ids(len(cost.per_group), _greedy_prefix(order, cost.per_group, tau))


def ste_gates(scores: Tensor, cost: CostVector, tau: float) -> Tensor:
    """``ste_mask`` in the forward pass; gradients reach ``scores``
    unchanged."""
    return F.straight_through(scores, ste_mask(scores.data, cost, tau).values)


@dataclass(frozen=True)
class HardConcrete:
    """Stretched hard-concrete distribution ``(beta, gamma, zeta)``."""

    beta: float = 2 / 3
    gamma: float = -0.1
    zeta: float = 1.1

    def __post_init__(self) -> None:
        if not self.gamma < 0 < 1 < self.zeta:
            raise ConfigError(
                f"hard-concrete stretch needs gamma < 0 < 1 < zeta, got ({self.gamma}, {self.zeta})"
            )
        if self.beta <= 0:
            raise ConfigError(f"hard-concrete temperature must be positive, got {self.beta}")

    @property
    def open_shift(self) -> float:
        return self.beta * math.log(-self.gamma / self.zeta)


def _stretch(s: Tensor, hc: HardConcrete) -> Tensor:
    return F.clip(F.scale(s, hc.zeta - hc.gamma) + hc.gamma, 0.0, 1.0)


def hc_sample(log_alpha: Tensor, u: np.ndarray, hc: HardConcrete = HardConcrete()) -> Tensor:
    """Gate ``clamp(sigmoid((ln u - ln(1-u) + log_alpha) / beta) * (zeta - gamma) + gamma, 0, 1)``.

    Parameters
    ----------
    log_alpha : Tensor
    u : np.ndarray
        Uniform draws in (0, 1), same shape as ``log_alpha``
    hc : HardConcrete, default=HardConcrete()
    """
    u = np.asarray(u, dtype=log_alpha.dtype)
    if np.any(u <= 0) or np.any(u >= 1):
        raise ContractError("hard-concrete noise must lie in the open interval (0, 1)")
    noise = Tensor(np.log(u) - np.log1p(-u), log_alpha.tape)
    s = F.sigmoid(F.scale(log_alpha + noise, 1.0 / hc.beta))
    return _stretch(s, hc)


def hc_expected_open(log_alpha: Tensor, hc: HardConcrete = HardConcrete()) -> Tensor:
    """Probability that each gate is nonzero."""
    return F.sigmoid(log_alpha - hc.open_shift)


def hc_deterministic(log_alpha: np.ndarray, hc: HardConcrete = HardConcrete()) -> np.ndarray:
    gate = 0.5 * (1.0 + np.tanh(0.5 * np.asarray(log_alpha, dtype=np.float64)))
    return np.clip(gate * (hc.zeta - hc.gamma) + hc.gamma, 0.0, 1.0)


def l0_penalty(p_open: Tensor, cost: CostVector, tau: float, multiplier: float) -> Tensor:
    """``multiplier * relu(sum(p * c) - tau) ** 2`` on costs normalized by the
    maskable total."""
    scale = float(cost.maskable)
    expected = F.reduce_sum(p_open * Tensor(cost.per_group / scale, p_open.tape))
    excess = F.relu(expected - tau / scale)
    return F.scale(F.square(excess), multiplier)


def l0_final_mask(
    log_alpha: np.ndarray, cost: CostVector, tau: float, hc: HardConcrete = HardConcrete()
) -> MaskVector:
    """Deterministic gates binarized at 0.5 (inclusive), then the kept group
    with the lowest ``log_alpha`` is dropped until the budget holds."""
    log_alpha = np.asarray(log_alpha, dtype=np.float64)
    kept = hc_deterministic(log_alpha, hc) >= 0.5
    mask = MaskVector.hard(kept.astype(np.float64))
    while not verify(mask, cost, tau):
        candidates = np.flatnonzero(kept)
        if candidates.size == 0:
            raise BudgetInfeasible(0, tau)
        kept[candidates[np.argmin(log_alpha[candidates])]] = False
        mask = MaskVector.hard(kept.astype(np.float64))
    return mask


def num_blocks_of(registry: GroupRegistry) -> int:
    return max(group.block for group in registry.groups) + 1


def aux_bottom_mask(registry: GroupRegistry, split_block: int) -> MaskVector:
    """Every group of the first ``split_block`` blocks."""
    blocks = num_blocks_of(registry)
    if not 1 <= split_block <= blocks:
        raise ContractError(f"split block {split_block} outside 1..{blocks}")
    return MaskVector.from_ids(
        registry.size, (group.id for group in registry.groups if group.block < split_block)
    )


def aux_split(registry: GroupRegistry, cost: CostVector, tau: float, subnet: int = 0) -> int:
    """Deepest split whose bottom blocks cost strictly less than ``tau``.

    Raises
    ------
    BudgetInfeasible
        Not even the first block fits
    """
    for split in range(num_blocks_of(registry), 0, -1):
        if verify(aux_bottom_mask(registry, split), cost, tau):
            return split
    raise BudgetInfeasible(subnet, tau)


def uniform_mask(registry: GroupRegistry, cost: CostVector, tau: float) -> MaskVector:
    """Evenly thinned fixed mask: the ``i``-th unit of every module is taken
    before any module's ``i+1``-th, stopping at the first group that would
    break the budget."""
    rank = {}
    for group in registry.groups:
        siblings = registry.module_groups(group.block, group.kind)
        rank[group.id] = (siblings.index(group.id) / len(siblings), group.id)
    order = np.array(sorted(rank, key=rank.__getitem__))
    return MaskVector.from_ids(registry.size, _greedy_prefix(order, cost.per_group, tau))
