from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from orthosupernet.autodiff.exceptions import ContractError
from orthosupernet.schemas import EncoderConfig, Granularity


class Kind(str, Enum):
    FFN1 = "ffn1"
    MHSA = "mhsa"
    CONV = "conv"
    FFN2 = "ffn2"


KIND_ORDER = (Kind.FFN1, Kind.MHSA, Kind.CONV, Kind.FFN2)


def units_of(config: EncoderConfig, kind: Kind) -> int:
    """Number of selectable units a module of ``kind`` is split into at
    component granularity."""
    if kind is Kind.MHSA:
        return config.num_heads
    if kind is Kind.CONV:
        return 1
    return config.num_chunks


@dataclass(frozen=True)
class ParameterGroup:
    id: int
    block: int
    kind: Kind
    sub: int


@dataclass
class GroupRegistry:
    """Partition of the encoder parameters into ``N`` selectable groups plus
    the unmaskable base set.

    Attributes
    ----------
    granularity : Granularity
    groups : list[ParameterGroup]
        Ordered block-major, then FFN1, MHSA, CONV, FFN2, then ``sub``
    parameter_group : dict[str, int]
        Group id of every maskable parameter name
    base : frozenset[str]
        Names of the unmaskable parameters
    parameter_sizes : dict[str, int]
        Scalar count of every parameter
    """

    granularity: Granularity
    groups: list[ParameterGroup]
    parameter_group: dict[str, int] = field(default_factory=dict)
    base: frozenset[str] = frozenset()
    parameter_sizes: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._index = {(g.block, g.kind, g.sub): g.id for g in self.groups}

    def __len__(self) -> int:
        return len(self.groups)

    @property
    def size(self) -> int:
        return len(self.groups)

    def group_id(self, block: int, kind: Kind, sub: int = 0) -> int:
        if self.granularity is Granularity.LAYER or kind is Kind.CONV:
            sub = 0
        return self._index[(block, kind, sub)]

    def module_groups(self, block: int, kind: Kind) -> list[int]:
        return [g.id for g in self.groups if g.block == block and g.kind is kind]

    def group_of(self, name: str) -> int | None:
        """Group id owning ``name``, or ``None`` for base parameters."""
        return self.parameter_group.get(name)

    def members(self, group_id: int) -> list[str]:
        return [name for name, gid in self.parameter_group.items() if gid == group_id]

    def check_mask_length(self, length: int) -> None:
        if length != self.size:
            raise ContractError(f"mask length {length} differs from {self.size} groups")


def enumerate_groups(config: EncoderConfig) -> list[ParameterGroup]:
    groups: list[ParameterGroup] = []
    for block in range(config.num_blocks):
        for kind in KIND_ORDER:
            subs = 1 if config.granularity is Granularity.LAYER else units_of(config, kind)
            for sub in range(subs):
                groups.append(ParameterGroup(len(groups), block, kind, sub))
    return groups


def build_registry(config: EncoderConfig, shapes: dict[str, tuple[int, ...]]) -> GroupRegistry:
    """Assign every parameter name either to a group or to the base set.

    Names follow ``block{b}/{kind}/{unit}/{tensor}``; ``unit`` is a chunk or
    head index, ``0`` for the convolution module, or ``shared`` for the
    module's layer norm and output bias. Shared tensors belong to the layer
    group at layer granularity and to the base at component granularity.
    """
    groups = enumerate_groups(config)
    registry = GroupRegistry(config.granularity, groups)
    owned: dict[str, int] = {}
    base: set[str] = set()
    for name in shapes:
        parts = name.split("/")
        kind = None
        if parts[0].startswith("block") and len(parts) == 4:
            try:
                kind = Kind(parts[1])
            except ValueError:
                kind = None
        if kind is None:
            base.add(name)
            continue
        block = int(parts[0].removeprefix("block"))
        unit = parts[2]
        if unit == "shared" and config.granularity is Granularity.COMPONENT:
            base.add(name)
            continue
        sub = 0 if unit == "shared" else int(unit)
        owned[name] = registry.group_id(block, kind, sub)
    registry.parameter_group = owned
    registry.base = frozenset(base)
    registry.parameter_sizes = {name: int(np.prod(shape)) for name, shape in shapes.items()}
    return registry
