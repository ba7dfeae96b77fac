from orthosupernet.autodiff import functional
from orthosupernet.autodiff.exceptions import (
    ContractError,
    DimensionError,
    DomainError,
    EvaluationError,
)
from orthosupernet.autodiff.gradcheck import grad_check
from orthosupernet.autodiff.rng import DropoutStream, Site, counter_generator
from orthosupernet.autodiff.tensor import Parameter, Tape, Tensor, backward


__all__ = [
    "backward",
    "counter_generator",
    "functional",
    "grad_check",
    "ContractError",
    "DimensionError",
    "DomainError",
    "DropoutStream",
    "EvaluationError",
    "Parameter",
    "Site",
    "Tape",
    "Tensor",
]
