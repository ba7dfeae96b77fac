from orthosupernet.encoder.groups import (
    KIND_ORDER,
    GroupRegistry,
    Kind,
    ParameterGroup,
    build_registry,
    enumerate_groups,
    units_of,
)
from orthosupernet.encoder.masks import MaskVector
from orthosupernet.encoder.model import (
    Encoder,
    ForwardContext,
    ModuleLayout,
    build,
    structural_prune,
)


__all__ = [
    "build",
    "build_registry",
    "enumerate_groups",
    "structural_prune",
    "units_of",
    "Encoder",
    "ForwardContext",
    "GroupRegistry",
    "Kind",
    "KIND_ORDER",
    "MaskVector",
    "ModuleLayout",
    "ParameterGroup",
]
