"""Per-group cost vectors under the sparsity and FLOPs criteria.

FLOPs are counted as multiply-accumulates of matmuls and convolutions for
``L`` post-frontend frames; norms, biases and activations are free.
"""

from dataclasses import dataclass

import numpy as np

from orthosupernet.autodiff.tensor import Tape
from orthosupernet.encoder.groups import GroupRegistry, Kind
from orthosupernet.encoder.masks import MaskVector
from orthosupernet.encoder.model import Encoder, structural_prune
from orthosupernet.exceptions import ConfigError
from orthosupernet.schemas import CostRow, Criterion, EncoderConfig, Granularity, SubnetBudget


@dataclass(frozen=True)
class CostVector:
    """Cost of every group plus the unmaskable base.

    Attributes
    ----------
    criterion : Criterion
    per_group : np.ndarray
        Length-N positive integer costs
    base : int
    reference_frames : int or None
        ``L_ref`` of a FLOPs vector
    """

    criterion: Criterion
    per_group: np.ndarray
    base: int
    reference_frames: int | None = None

    @property
    def maskable(self) -> int:
        return int(self.per_group.sum())

    @property
    def total(self) -> int:
        return self.base + self.maskable


def param_cost(registry: GroupRegistry, config: EncoderConfig | None = None) -> CostVector:
    """Scalar parameter count owned by each group; the base holds every
    unmaskable parameter, auxiliary heads included."""
    per_group = np.zeros(registry.size, dtype=np.int64)
    for name, group in registry.parameter_group.items():
        per_group[group] += registry.parameter_sizes[name]
    base = sum(registry.parameter_sizes[name] for name in registry.base)
    return CostVector(Criterion.SPARSITY, per_group, int(base))


def group_macs(config: EncoderConfig, kind: Kind, frames: int, *, layer: bool) -> int:
    d, dh = config.d_model, config.d_head
    if kind is Kind.CONV:
        return frames * d * (3 * d + config.conv_kernel)
    if kind is Kind.MHSA:
        per_head = 4 * frames * d * dh + 2 * frames * frames * dh
        return per_head * (config.num_heads if layer else 1)
    per_chunk = 2 * frames * d * config.chunk
    return per_chunk * (config.num_chunks if layer else 1)


def base_macs(config: EncoderConfig, frames: int) -> int:
    d = config.d_model
    return frames * (3 * config.d_in * d + d * d + d * (config.vocab_size + 1))


def flops_cost(registry: GroupRegistry, config: EncoderConfig, l_ref: int) -> CostVector:
    """Analytic multiply-accumulates per group for ``l_ref`` frames.

    Raises
    ------
    ConfigError
        ``l_ref`` is below one
    """
    if l_ref < 1:
        raise ConfigError(f"l_ref must be at least 1, got {l_ref}")
    layer = registry.granularity is Granularity.LAYER
    per_group = np.array(
        [group_macs(config, group.kind, l_ref, layer=layer) for group in registry.groups],
        dtype=np.int64,
    )
    return CostVector(Criterion.FLOPS, per_group, base_macs(config, l_ref), l_ref)


def resolve_budget(budget: SubnetBudget, cost: CostVector) -> float:
    """Absolute budget ``tau`` over the maskable groups.

    Raises
    ------
    ConfigError
        Criteria differ, the fraction lies outside (0, 1], or the absolute
        value is not positive or exceeds the maskable cost
    """
    if budget.criterion is not cost.criterion:
        raise ConfigError(
            f"budget criterion {budget.criterion.value} does not match cost {cost.criterion.value}"
        )
    if budget.fraction is not None:
        if not 0 < budget.fraction <= 1:
            raise ConfigError(f"budget fraction {budget.fraction} outside (0, 1]")
        return budget.fraction * cost.maskable
    if not 0 < budget.absolute <= cost.maskable:
        raise ConfigError(
            f"absolute budget {budget.absolute} outside (0, {cost.maskable}]"
        )
    return float(budget.absolute)


def selected_cost(mask: MaskVector, cost: CostVector) -> float:
    return float(np.dot(mask.values, cost.per_group))


def mask_cost(mask: MaskVector, cost: CostVector) -> float:
    """Reported cost of a subnet: base plus its selected groups."""
    return cost.base + selected_cost(mask, cost)


def verify(mask: MaskVector, cost: CostVector, tau: float) -> bool:
    """Whether the binary ``mask`` satisfies ``sum(z * c) < tau`` strictly."""
    mask.require_binary()
    return selected_cost(mask, cost) < tau


def measured_flops(encoder: Encoder, mask: MaskVector, features: np.ndarray) -> int:
    """Multiply-accumulates executed by a structurally pruned forward."""
    tape = Tape(record=False)
    structural_prune(encoder, mask).forward(features, tape=tape)
    return tape.macs


def cost_table(registry: GroupRegistry, config: EncoderConfig, l_ref: int) -> list[CostRow]:
    params = param_cost(registry, config)
    flops = flops_cost(registry, config, l_ref)
    return [
        CostRow(
            group_id=group.id,
            block=group.block,
            kind=group.kind.value,
            sub=group.sub,
            params=int(params.per_group[group.id]),
            flops=int(flops.per_group[group.id]),
        )
        for group in registry.groups
    ]
