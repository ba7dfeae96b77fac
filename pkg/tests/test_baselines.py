import numpy as np
import pytest

from orthosupernet.autodiff import ContractError, Parameter, Tape, Tensor, backward, grad_check
from orthosupernet.autodiff import functional as F
from orthosupernet.baselines import (
    HardConcrete,
    aux_bottom_mask,
    aux_split,
    hc_deterministic,
    hc_expected_open,
    hc_sample,
    l0_final_mask,
    l0_penalty,
    ste_gates,
    ste_mask,
    uniform_mask,
)
from orthosupernet.costs import CostVector, param_cost, verify
from orthosupernet.exceptions import BudgetInfeasible, ConfigError
from orthosupernet.schemas import Criterion


def _cost(values) -> CostVector:
    return CostVector(Criterion.SPARSITY, np.asarray(values, dtype=np.int64), 0)


def test_ste_mask_takes_best_scores():
    mask = ste_mask(np.array([3.0, 1.0, 2.0]), _cost([1, 1, 1]), 2.5)

    assert np.array_equal(mask.values, [1.0, 0.0, 1.0])


def test_ste_mask_breaks_ties_by_group_id():
    mask = ste_mask(np.ones(3), _cost([1, 1, 1]), 2.5)

    assert mask.selected() == [0, 1]


def test_ste_mask_stops_at_first_group_over_budget():
    mask = ste_mask(np.array([3.0, 2.0, 1.0]), _cost([1, 5, 1]), 3)

    assert mask.selected() == [0]


def test_ste_mask_large_budget():
    assert ste_mask(np.zeros(4), _cost([1, 2, 3, 4]), 11).selected() == [0, 1, 2, 3]


def test_ste_gates_pass_gradient_to_every_score():
    scores = Parameter("scores", np.array([0.3, -0.2, 0.9]))
    tape = Tape()
    gates = ste_gates(tape.watch(scores), _cost([1, 1, 1]), 1.5)
    backward(tape, F.reduce_sum(F.scale(gates, 2.0)))

    assert np.array_equal(gates.data, [0.0, 0.0, 1.0])
    assert np.array_equal(scores.grad, [2.0, 2.0, 2.0])


def test_hard_concrete_sample_values():
    centre = hc_sample(Tensor(np.zeros(1)), np.array([0.5]))
    saturated = hc_sample(Tensor(np.array([10.0, -10.0])), np.array([0.5, 0.5]))

    assert centre.data[0] == pytest.approx(0.5)
    assert np.array_equal(saturated.data, [1.0, 0.0])


def test_hard_concrete_sample_rejects_closed_interval():
    with pytest.raises(ContractError):
        hc_sample(Tensor(np.zeros(2)), np.array([0.0, 0.5]))


def test_hard_concrete_sample_gradient():
    log_alpha = Parameter("log_alpha", np.array([0.1, -0.3, 0.4]))
    u = np.array([0.3, 0.6, 0.45])

    def f(tape):
        return F.reduce_sum(F.square(hc_sample(tape.watch(log_alpha), u)))

    assert grad_check(f, [log_alpha]) <= 1e-6


def test_expected_open_probability():
    hc = HardConcrete()

    assert hc_expected_open(Tensor(np.array([hc.open_shift])), hc).data[0] == pytest.approx(0.5)
    assert hc_expected_open(Tensor(np.array([20.0]))).data[0] > 0.999


def test_deterministic_gates():
    gates = hc_deterministic(np.array([0.0, 10.0, -10.0]))

    assert gates[0] == pytest.approx(0.5)
    assert gates[1] == 1.0
    assert gates[2] == 0.0


def test_hard_concrete_rejects_bad_stretch():
    with pytest.raises(ConfigError):
        HardConcrete(gamma=0.1)
    with pytest.raises(ConfigError):
        HardConcrete(beta=0.0)


def test_l0_penalty():
    cost = _cost([1, 1, 1, 1])

    assert l0_penalty(Tensor(np.ones(4)), cost, 2, 3.0).item() == pytest.approx(0.75)
    assert l0_penalty(Tensor(np.full(4, 0.25)), cost, 2, 3.0).item() == 0.0


def test_l0_final_mask_drops_lowest_log_alpha():
    mask = l0_final_mask(np.array([2.0, -2.0, 1.0, 0.5]), _cost([1, 1, 1, 1]), 2.5)

    assert mask.selected() == [0, 2]


def test_l0_final_mask_threshold_is_inclusive():
    assert l0_final_mask(np.zeros(2), _cost([1, 1]), 3).selected() == [0, 1]


def test_aux_bottom_mask(toy_encoder):
    _, registry = toy_encoder
    mask = aux_bottom_mask(registry, 1)

    assert mask.selected() == list(range(10))
    assert aux_bottom_mask(registry, 2).selected() == list(range(20))
    with pytest.raises(ContractError):
        aux_bottom_mask(registry, 0)


def test_aux_split_picks_deepest_fit(toy_encoder):
    _, registry = toy_encoder
    cost = param_cost(registry)

    assert aux_split(registry, cost, cost.maskable) == 1
    assert aux_split(registry, cost, cost.maskable + 1) == 2
    with pytest.raises(BudgetInfeasible):
        aux_split(registry, cost, 10)


def test_uniform_mask_spreads_over_modules(toy_encoder):
    _, registry = toy_encoder
    cost = param_cost(registry)
    tau = 0.5 * cost.maskable
    mask = uniform_mask(registry, cost, tau)
    first_units = {
        registry.module_groups(group.block, group.kind)[0] for group in registry.groups
    }

    assert verify(mask, cost, tau)
    assert 0 in mask.selected()
    assert set(mask.selected()) <= first_units
