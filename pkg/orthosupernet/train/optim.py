from __future__ import annotations

from typing import Sequence

import numpy as np

from orthosupernet.autodiff.tensor import Parameter
from orthosupernet.schemas import TrainConfig


def lr_at(step: int, config: TrainConfig, peak: float | None = None) -> float:
    """Linear warmup, hold at ``peak``, then linear decay to
    ``peak * final_lr_ratio`` at the last step."""
    peak = config.peak_lr if peak is None else peak
    total = config.total_steps
    warmup = round(config.warmup_fraction * total)
    hold_end = min(total, warmup + round(config.hold_fraction * total))
    if step < warmup:
        return peak * (step + 1) / warmup
    if step < hold_end:
        return peak
    span = max(total - 1 - hold_end, 1)
    progress = min(1.0, (step - hold_end) / span)
    return peak * (1.0 - (1.0 - config.final_lr_ratio) * progress)


class Adam:
    """Adaptive-moment updates with decoupled weight decay.

    Attributes
    ----------
    parameters : list[Parameter]
    weight_decay : float
    t : int
        Number of updates applied
    """

    def __init__(
        self,
        parameters: Sequence[Parameter],
        *,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ) -> None:
        self.parameters = list(parameters)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.parameters}
        self.v = {p.name: np.zeros_like(p.value) for p in self.parameters}

    @classmethod
    def from_config(cls, parameters: Sequence[Parameter], config: TrainConfig, weight_decay: float) -> Adam:
        return cls(
            parameters,
            beta1=config.adam_beta1,
            beta2=config.adam_beta2,
            eps=config.adam_eps,
            weight_decay=weight_decay,
        )

    def add(self, parameter: Parameter) -> None:
        if parameter.name in self.m:
            return
        self.parameters.append(parameter)
        self.m[parameter.name] = np.zeros_like(parameter.value)
        self.v[parameter.name] = np.zeros_like(parameter.value)

    def step(self, lr: float) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for parameter in self.parameters:
            grad = parameter.grad
            m = self.m[parameter.name]
            v = self.v[parameter.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * parameter.value
            parameter.value -= (lr * update).astype(parameter.value.dtype)

    def zero_grad(self) -> None:
        for parameter in self.parameters:
            parameter.zero_grad()

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        arrays = {}
        for name in self.m:
            arrays[f"{prefix}/m/{name}"] = self.m[name]
            arrays[f"{prefix}/v/{name}"] = self.v[name]
        return arrays

    def load_state_arrays(self, prefix: str, arrays: dict[str, np.ndarray], t: int) -> None:
        for name in self.m:
            self.m[name] = arrays[f"{prefix}/m/{name}"].copy()
            self.v[name] = arrays[f"{prefix}/v/{name}"].copy()
        self.t = t
