import math

import numpy as np
import pytest

from orthosupernet.autodiff import Parameter, Tape, Tensor, backward, grad_check
from orthosupernet.autodiff import functional as F
from orthosupernet.costs import CostVector, verify
from orthosupernet.encoder import MaskVector
from orthosupernet.exceptions import BudgetInfeasible
from orthosupernet.orthomask import (
    ScoreMatrix,
    SubnetPlan,
    TemperatureSchedule,
    assemble_mask,
    ortho_loss,
    plan_subnets,
    round_masks,
    round_rows,
    row_entropy,
    select_k,
    temperature,
    weights,
)
from orthosupernet.schemas import Criterion, SubnetBudget
from orthosupernet.train import Adam


def _cost(values) -> CostVector:
    return CostVector(Criterion.SPARSITY, np.asarray(values, dtype=np.int64), 0)


def _plans(*taus) -> list[SubnetPlan]:
    budget = SubnetBudget(criterion=Criterion.SPARSITY, absolute=1)
    return [SubnetPlan(subnet=index, budget=budget, tau=tau) for index, tau in enumerate(taus)]


def test_zero_scores_give_uniform_weights():
    scores = ScoreMatrix(5)

    assert np.allclose(scores.weights(1.0), 0.2, atol=1e-15)
    assert np.allclose(scores.weights(0.1), 0.2, atol=1e-15)


def test_lower_temperature_sharpens_rows():
    scores = ScoreMatrix(6)
    scores.values[...] = np.random.default_rng(0).standard_normal((6, 6))

    assert np.all(row_entropy(scores.weights(0.1)) < row_entropy(scores.weights(1.0)))


def test_select_k_identity():
    assert select_k(np.eye(3), np.array([1, 2, 3]), 4) == 2


def test_select_k_strict_inequality():
    w = np.full((4, 4), 0.25)

    assert select_k(w, np.array([1, 2, 3, 2]), 4) == 1
    assert select_k(w, np.array([1, 2, 3, 2]), 4.5) == 2


def test_select_k_large_budget_takes_every_row():
    assert select_k(np.eye(3), np.array([1, 2, 3]), 7) == 3
    assert select_k(np.eye(3), np.array([1, 2, 3]), 1) == 0


def test_assemble_mask():
    w = Tensor(np.eye(4))

    assert np.array_equal(assemble_mask(w, 0).data, np.zeros(4))
    assert np.array_equal(assemble_mask(w, 2).data, [1.0, 1.0, 0.0, 0.0])
    assert np.allclose(assemble_mask(Tensor(np.full((4, 4), 0.25)), 2).data, 0.5)


def test_ortho_loss_values():
    one_hot = Tensor(np.eye(4)[[3, 1, 0, 2]])
    uniform = Tensor(np.full((2, 2), 0.5))
    duplicate = Tensor(np.array([[1.0, 0.0], [1.0, 0.0]]))

    assert ortho_loss(one_hot, 3).item() == 0.0
    assert ortho_loss(uniform, 2).item() == pytest.approx(math.sqrt(0.75), abs=1e-12)
    assert ortho_loss(duplicate, 2).item() == pytest.approx(1.0, abs=1e-12)
    assert ortho_loss(uniform, 0).item() == 0.0


def test_ortho_loss_vanishes_on_distinct_one_hot_rows():
    generator = np.random.default_rng(5)
    for size in range(1, 6):
        for k in range(1, size + 1):
            top = np.eye(size)[generator.permutation(size)[:k]]
            rest = generator.dirichlet(np.ones(size), size - k)

            assert ortho_loss(Tensor(np.vstack([top, rest])), k).item() == 0.0


def test_ortho_loss_positive_unless_distinct_one_hot():
    generator = np.random.default_rng(6)
    for size in range(2, 6):
        for k in range(1, size + 1):
            for _ in range(20):
                w = np.eye(size)[generator.permutation(size)]
                row = generator.integers(k)
                mix = generator.uniform(0.01, 0.99)
                w[row] = (1 - mix) * w[row] + mix * generator.dirichlet(np.ones(size))

                assert ortho_loss(Tensor(w), k).item() > 0.0
            if k > 1:
                repeated = np.eye(size)[generator.permutation(size)]
                repeated[k - 1] = repeated[0]

                assert ortho_loss(Tensor(repeated), k).item() > 0.0


def test_ortho_loss_gradient():
    scores = Parameter("scores", np.random.default_rng(3).standard_normal((6, 6)))

    def f(tape):
        return ortho_loss(F.softmax_rows(tape.watch(scores)), 4)

    assert grad_check(f, [scores]) <= 1e-5


def test_round_rows_collision_fallback():
    assert round_rows(np.array([[0.6, 0.4], [0.7, 0.3]]), 2) == [0, 1]


def test_round_masks_permutation():
    w = np.eye(4)[[2, 0, 3, 1]]
    plans = _plans(2.5, 3.5)
    masks = round_masks(w, plans, _cost([1, 1, 1, 1]))

    assert masks[0].selected() == [0, 2]
    assert masks[1].selected() == [0, 2, 3]
    assert [plan.k for plan in plans] == [2, 3]
    assert masks[0].issubset(masks[1])


def test_round_masks_repairs_budget():
    # Row 1 expects 5.8 but rounds onto the group costing 9.
    w = np.array([[1.0, 0.0, 0.0], [0.4, 0.6, 0.0], [0.0, 0.0, 1.0]])
    cost = _cost([1, 9, 1])
    plans = _plans(7.0)
    (mask,) = round_masks(w, plans, cost)

    assert select_k(w, cost.per_group, 7.0) == 2
    assert mask.selected() == [0]
    assert verify(mask, cost, 7.0)
    assert plans[0].k == 1


def test_round_masks_always_satisfies_budget():
    generator = np.random.default_rng(5)
    for _ in range(20):
        w = F.softmax_rows(Tensor(generator.standard_normal((8, 8)) * 3)).data
        cost = _cost(generator.integers(1, 10, size=8))
        plans = _plans(*sorted(generator.uniform(1, cost.maskable, size=3)))
        masks = round_masks(w, plans, cost)

        assert all(verify(mask, cost, plan.tau) for mask, plan in zip(masks, plans))
        assert masks[0].issubset(masks[1]) and masks[1].issubset(masks[2])


def test_round_masks_infeasible():
    plans = _plans(0.0)

    with pytest.raises(BudgetInfeasible):
        round_masks(np.eye(2), plans, _cost([1, 1]))


def test_plan_subnets_sorts_by_budget():
    cost = _cost([10] * 10)
    budgets = [
        SubnetBudget(criterion=Criterion.SPARSITY, fraction=0.7),
        SubnetBudget(criterion=Criterion.SPARSITY, fraction=0.4),
    ]
    plans = plan_subnets(budgets, cost)

    assert [plan.tau for plan in plans] == pytest.approx([40.0, 70.0])
    assert [plan.subnet for plan in plans] == [0, 1]
    assert plans[0].budget.fraction == 0.4


def test_temperature_schedule():
    assert temperature(0) == 1.0
    assert temperature(100000) == pytest.approx(math.exp(-0.8), abs=1e-5)
    assert temperature(10**7) == 0.1
    assert temperature(10**8) == 0.1


def test_temperature_schedule_disabled():
    schedule = TemperatureSchedule(anneal=False)

    assert schedule(0) == schedule(10**6) == 1.0


def test_row_entropy_of_one_hot_and_uniform():
    entropy = row_entropy(np.vstack([np.eye(3)[0], np.full(3, 1 / 3)]))

    assert entropy[0] == 0.0
    assert entropy[1] == pytest.approx(math.log(3))


def test_mask_vector_from_assembled_rows():
    mask = MaskVector(assemble_mask(Tensor(np.eye(3)), 2).data)

    assert mask.is_binary
    assert mask.selected() == [0, 1]


def test_score_noise_is_seeded_and_bounded():
    first = ScoreMatrix(6, noise=0.01, seed=3).values

    assert np.array_equal(first, ScoreMatrix(6, noise=0.01, seed=3).values)
    assert not np.array_equal(first, ScoreMatrix(6, noise=0.01, seed=4).values)
    assert np.abs(first).max() <= 0.01
    assert len({row.tobytes() for row in first}) == 6
    assert not ScoreMatrix(6).values.any()


def _orthogonalize(scores: ScoreMatrix, k: int, steps: int = 2000) -> np.ndarray:
    optimizer = Adam([scores.parameter])
    for _ in range(steps):
        tape = Tape()
        loss = ortho_loss(weights(scores.watch(tape), 1.0), k)
        optimizer.zero_grad()
        backward(tape, loss)
        optimizer.step(0.05)
    return scores.weights(1.0)[:k]


def test_orthogonality_separates_rows_that_start_apart():
    stuck = _orthogonalize(ScoreMatrix(4), 3)
    top = _orthogonalize(ScoreMatrix(4, noise=0.01, seed=0), 3)
    overlaps = (top @ top.T)[np.triu_indices(3, 1)]

    assert stuck.max() < 0.5
    assert np.abs(top - np.eye(4)[top.argmax(axis=1)]).max() <= 0.05
    assert overlaps.max() <= 1e-2
