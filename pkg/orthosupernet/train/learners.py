from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from orthosupernet.autodiff.rng import Site, counter_generator
from orthosupernet.autodiff.tensor import Parameter, Tape, Tensor
from orthosupernet.baselines import (
    HardConcrete,
    aux_bottom_mask,
    aux_split,
    hc_expected_open,
    hc_sample,
    l0_final_mask,
    l0_penalty,
    ste_gates,
    ste_mask,
)
from orthosupernet.costs import CostVector, selected_cost
from orthosupernet.encoder.groups import GroupRegistry
from orthosupernet.encoder.masks import MaskVector
from orthosupernet.orthomask import (
    ScoreMatrix,
    SubnetPlan,
    TemperatureSchedule,
    assemble_mask,
    expected_costs,
    ortho_loss,
    round_masks,
    select_k,
    weights,
)
from orthosupernet.schemas import LearnerKind, RunConfig


# Keeps hard-concrete noise inside the open unit interval.
NOISE_MARGIN = 1e-12


@dataclass
class SubnetGates:
    """Step 1 selection for the sampled subnet.

    Attributes
    ----------
    gates : Tensor or None
        Group gates for the encoder; ``None`` routes the subnet through the
        auxiliary head of ``split``
    regularizer : Tensor or None
        Term weighted by the beta schedule
    k : int
    expected_cost : float
    split : int or None
    """

    gates: Tensor | None
    regularizer: Tensor | None
    k: int
    expected_cost: float
    split: int | None = None


class MaskLearner(ABC):
    """Abstract class for the mechanisms that choose every subnet's groups
    during Step 1 and round them to binary masks at the transition.

    Attributes
    ----------
    registry : GroupRegistry
    cost : CostVector
    plans : list[SubnetPlan]
    config : RunConfig
    """

    def __init__(
        self,
        registry: GroupRegistry,
        cost: CostVector,
        plans: list[SubnetPlan],
        config: RunConfig,
    ) -> None:
        self.registry = registry
        self.cost = cost
        self.plans = plans
        self.config = config

    def parameters(self) -> list[Parameter]:
        return []

    def temperature(self, step: int) -> float:
        return 1.0

    @abstractmethod
    def step1_gates(self, tape: Tape, plan: SubnetPlan, step: int) -> SubnetGates:
        pass

    @abstractmethod
    def round(self, step: int) -> list[MaskVector]:
        pass


class OrthoSoftmaxLearner(MaskLearner):
    def __init__(self, registry, cost, plans, config) -> None:
        super().__init__(registry, cost, plans, config)
        train = config.train
        self.scores = ScoreMatrix(registry.size, train.score_init_noise, train.seed)
        self.schedule = TemperatureSchedule(
            floor=train.temperature_floor,
            decay=train.temperature_decay,
            anneal=train.anneal_temperature,
        )

    def parameters(self) -> list[Parameter]:
        return [self.scores.parameter]

    def temperature(self, step: int) -> float:
        return self.schedule(step)

    def step1_gates(self, tape: Tape, plan: SubnetPlan, step: int) -> SubnetGates:
        w = weights(self.scores.watch(tape), self.schedule(step))
        k = select_k(w.data, self.cost.per_group, plan.tau)
        plan.k = k
        expected = float(expected_costs(w.data, self.cost.per_group)[:k].sum())
        return SubnetGates(assemble_mask(w, k), ortho_loss(w, k), k, expected)

    def round(self, step: int) -> list[MaskVector]:
        return round_masks(self.scores.weights(self.schedule(step)), self.plans, self.cost)


class TopkSteLearner(MaskLearner):
    """One score per group shared by all subnets, so masks nest by
    construction."""

    def __init__(self, registry, cost, plans, config) -> None:
        super().__init__(registry, cost, plans, config)
        self.scores = Parameter("topk/scores", np.zeros(registry.size, dtype=np.float64))

    def parameters(self) -> list[Parameter]:
        return [self.scores]

    def step1_gates(self, tape: Tape, plan: SubnetPlan, step: int) -> SubnetGates:
        gates = ste_gates(tape.watch(self.scores), self.cost, plan.tau)
        plan.k = int(gates.data.sum())
        expected = selected_cost(MaskVector.hard(gates.data), self.cost)
        return SubnetGates(gates, None, plan.k, expected)

    def round(self, step: int) -> list[MaskVector]:
        masks = []
        for plan in self.plans:
            plan.mask = ste_mask(self.scores.value, self.cost, plan.tau)
            plan.k = len(plan.mask.selected())
            masks.append(plan.mask)
        return masks


class L0Learner(MaskLearner):
    """Independent hard-concrete gates per subnet with a quadratic penalty
    on the expected cost above budget."""

    def __init__(self, registry, cost, plans, config) -> None:
        super().__init__(registry, cost, plans, config)
        learner = config.mask_learner
        self.hc = HardConcrete(learner.l0_beta, learner.l0_gamma, learner.l0_zeta)
        self.penalty = learner.l0_penalty
        self.log_alpha = [
            Parameter(f"l0/log_alpha/{plan.subnet}", np.zeros(registry.size, dtype=np.float64))
            for plan in plans
        ]

    def parameters(self) -> list[Parameter]:
        return list(self.log_alpha)

    def step1_gates(self, tape: Tape, plan: SubnetPlan, step: int) -> SubnetGates:
        generator = counter_generator(
            self.config.train.seed, step, Site.HARD_CONCRETE, plan.subnet
        )
        u = np.clip(generator.random(self.registry.size), NOISE_MARGIN, 1 - NOISE_MARGIN)
        log_alpha = tape.watch(self.log_alpha[plan.subnet])
        gates = hc_sample(log_alpha, u, self.hc)
        p_open = hc_expected_open(log_alpha, self.hc)
        plan.k = int(np.count_nonzero(gates.data))
        return SubnetGates(
            gates,
            l0_penalty(p_open, self.cost, plan.tau, self.penalty),
            plan.k,
            float(p_open.data @ self.cost.per_group),
        )

    def round(self, step: int) -> list[MaskVector]:
        masks = []
        for plan in self.plans:
            plan.mask = l0_final_mask(self.log_alpha[plan.subnet].value, self.cost, plan.tau, self.hc)
            plan.k = len(plan.mask.selected())
            masks.append(plan.mask)
        return masks


class AuxLearner(MaskLearner):
    """Fixed bottom-block subnets read out by an auxiliary head; the split is
    the deepest one under budget."""

    def __init__(self, registry, cost, plans, config) -> None:
        super().__init__(registry, cost, plans, config)
        for plan in plans:
            plan.split = aux_split(registry, cost, plan.tau, plan.subnet)
            plan.mask = aux_bottom_mask(registry, plan.split)
            plan.k = len(plan.mask.selected())

    @property
    def splits(self) -> list[int]:
        return sorted({plan.split for plan in self.plans})

    def step1_gates(self, tape: Tape, plan: SubnetPlan, step: int) -> SubnetGates:
        return SubnetGates(None, None, plan.k, selected_cost(plan.mask, self.cost), plan.split)

    def round(self, step: int) -> list[MaskVector]:
        return [plan.mask for plan in self.plans]


LEARNERS: dict[LearnerKind, type[MaskLearner]] = {
    LearnerKind.ORTHOSOFTMAX: OrthoSoftmaxLearner,
    LearnerKind.TOPK_STE: TopkSteLearner,
    LearnerKind.L0: L0Learner,
    LearnerKind.AUX: AuxLearner,
}


def make_learner(
    registry: GroupRegistry,
    cost: CostVector,
    plans: list[SubnetPlan],
    config: RunConfig,
) -> MaskLearner:
    return LEARNERS[config.mask_learner.kind](registry, cost, plans, config)
