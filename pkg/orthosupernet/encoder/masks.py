from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

from orthosupernet.autodiff.exceptions import ContractError


@dataclass(frozen=True)
class MaskVector:
    """Per-group gate values; ``hard`` masks hold only 0 and 1."""

    values: np.ndarray
    mode: Literal["soft", "hard"] = "soft"

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ContractError(f"mask must be one-dimensional, got shape {values.shape}")
        if self.mode == "hard" and not np.isin(values, (0.0, 1.0)).all():
            raise ContractError("hard mask holds values other than 0 and 1")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def hard(cls, values: Iterable[float]) -> "MaskVector":
        return cls(np.asarray(list(values), dtype=np.float64), "hard")

    @classmethod
    def ones(cls, size: int) -> "MaskVector":
        return cls(np.ones(size), "hard")

    @classmethod
    def zeros(cls, size: int) -> "MaskVector":
        return cls(np.zeros(size), "hard")

    @classmethod
    def from_ids(cls, size: int, group_ids: Iterable[int]) -> "MaskVector":
        values = np.zeros(size)
        values[list(group_ids)] = 1.0
        return cls(values, "hard")

    @property
    def is_binary(self) -> bool:
        return bool(np.isin(self.values, (0.0, 1.0)).all())

    def selected(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.values == 1.0)]

    def issubset(self, other: "MaskVector") -> bool:
        return bool(np.all(self.values <= other.values))

    def require_binary(self) -> None:
        if not self.is_binary:
            raise ContractError("operation needs a binary mask")
