from orthosupernet.exceptions import OrthoSupernetError


class DimensionError(OrthoSupernetError):
    def __init__(self, operation: str, *shapes: tuple[int, ...]) -> None:
        listed = ", ".join(str(tuple(shape)) for shape in shapes)
        super().__init__(f"Incompatible shapes for {operation}: {listed}")


class ContractError(OrthoSupernetError):
    def __init__(self, reason: str) -> None:
        super().__init__(f"Contract violated: {reason}")


class DomainError(OrthoSupernetError):
    def __init__(self, operation: str, argument: str, value: float) -> None:
        super().__init__(f"Argument {argument}={value} is outside the domain of {operation}")


class EvaluationError(OrthoSupernetError):
    def __init__(self, value: float) -> None:
        super().__init__(f"Function evaluated to a non-finite value: {value}")
