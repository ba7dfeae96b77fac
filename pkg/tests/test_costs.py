import numpy as np
import pytest

from orthosupernet.autodiff import ContractError
from orthosupernet.costs import (
    CostVector,
    cost_table,
    flops_cost,
    mask_cost,
    measured_flops,
    param_cost,
    resolve_budget,
    selected_cost,
    verify,
)
from orthosupernet.encoder import Kind, MaskVector, build
from orthosupernet.exceptions import ConfigError
from orthosupernet.schemas import Criterion, EncoderConfig, SubnetBudget
from orthosupernet.tasks import generate
from tests.conftest import TOY_MODEL


def _vector(values, criterion=Criterion.SPARSITY) -> CostVector:
    return CostVector(criterion, np.asarray(values, dtype=np.int64), 0)


def test_ffn_chunk_parameters():
    config = EncoderConfig(num_blocks=1, d_model=8, chunk_size=8, d_in=4)
    _, registry = build(config)
    cost = param_cost(registry, config)

    assert cost.per_group[registry.group_id(0, Kind.FFN1, 0)] == 8 * 8 + 8 + 8 * 8


def test_attention_head_parameters():
    config = EncoderConfig(num_blocks=1, d_model=64, d_in=4)
    _, registry = build(config)
    cost = param_cost(registry, config)

    assert cost.per_group[registry.group_id(0, Kind.MHSA, 0)] == 4 * 64 * 64 + 3 * 64


def test_parameter_additivity(toy_encoder):
    encoder, registry = toy_encoder
    cost = param_cost(registry)

    assert cost.total == encoder.num_parameters()
    assert np.all(cost.per_group > 0)


def test_ffn_chunk_flops():
    config = EncoderConfig(num_blocks=1, d_model=8, chunk_size=8, d_in=4)
    _, registry = build(config)
    cost = flops_cost(registry, config, 10)

    assert cost.per_group[registry.group_id(0, Kind.FFN1, 0)] == 1280


def test_toy_flops_vector(toy_encoder, toy_model):
    _, registry = toy_encoder
    cost = flops_cost(registry, toy_model, 10)

    assert cost.base == 10 * (3 * 4 * 8 + 8 * 8 + 8 * 4)
    assert cost.per_group[registry.group_id(0, Kind.FFN1, 2)] == 2 * 10 * 8 * 4
    assert cost.per_group[registry.group_id(1, Kind.MHSA, 0)] == 4 * 10 * 8 * 8 + 2 * 100 * 8
    assert cost.per_group[registry.group_id(1, Kind.CONV)] == 10 * 8 * (3 * 8 + 3)


def test_flops_linear_in_frames():
    config = EncoderConfig(**TOY_MODEL | {"num_blocks": 1})
    _, single = build(config)
    short = flops_cost(single, config, 10)
    long = flops_cost(single, config, 20)
    conv = single.group_id(0, Kind.CONV)

    assert long.per_group[conv] == 2 * short.per_group[conv]
    assert long.per_group[single.group_id(0, Kind.FFN2, 1)] == 2 * short.per_group[single.group_id(0, Kind.FFN2, 1)]


def test_flops_rejects_empty_reference(toy_encoder, toy_model):
    _, registry = toy_encoder

    with pytest.raises(ConfigError):
        flops_cost(registry, toy_model, 0)


def test_resolve_budget():
    cost = _vector([100] * 10)

    assert resolve_budget(SubnetBudget(criterion=Criterion.SPARSITY, fraction=0.5), cost) == 500
    assert resolve_budget(SubnetBudget(criterion=Criterion.SPARSITY, fraction=1.0), cost) == 1000
    assert resolve_budget(SubnetBudget(criterion=Criterion.SPARSITY, absolute=253), cost) == 253.0


def test_resolve_budget_errors():
    cost = _vector([100] * 10)

    with pytest.raises(ConfigError):
        resolve_budget(SubnetBudget(criterion=Criterion.FLOPS, fraction=0.5), cost)
    with pytest.raises(ConfigError):
        resolve_budget(SubnetBudget(criterion=Criterion.SPARSITY, fraction=1.5), cost)
    with pytest.raises(ConfigError):
        resolve_budget(SubnetBudget(criterion=Criterion.SPARSITY, absolute=1001), cost)


def test_verify_is_strict():
    cost = _vector([1, 2, 3])

    assert verify(MaskVector.zeros(3), cost, 1e-9)
    assert verify(MaskVector.hard([1, 1, 0]), cost, 4)
    assert not verify(MaskVector.hard([1, 1, 1]), cost, 6)


def test_verify_needs_binary_mask():
    with pytest.raises(ContractError):
        verify(MaskVector(np.array([0.5, 1.0, 0.0])), _vector([1, 2, 3]), 4)


def test_mask_cost_adds_base():
    cost = CostVector(Criterion.FLOPS, np.array([5, 7], dtype=np.int64), 11, 10)
    mask = MaskVector.hard([0, 1])

    assert selected_cost(mask, cost) == 7
    assert mask_cost(mask, cost) == 18
    assert cost.maskable == 12
    assert cost.total == 23


def test_measured_flops_full_and_empty(toy_encoder, toy_model, toy_task):
    encoder, registry = toy_encoder
    features = generate(toy_task, "dev").samples[0].features
    frames = (features.shape[0] - 1) // 2 + 1
    cost = flops_cost(registry, toy_model, frames)

    assert measured_flops(encoder, MaskVector.ones(registry.size), features) == cost.total
    assert measured_flops(encoder, MaskVector.zeros(registry.size), features) == cost.base


def test_measured_flops_additivity(toy_encoder, toy_model, toy_task):
    encoder, registry = toy_encoder
    generator = np.random.default_rng(0)
    features = generate(toy_task, "dev").samples[1].features
    frames = (features.shape[0] - 1) // 2 + 1
    cost = flops_cost(registry, toy_model, frames)
    for _ in range(20):
        mask = MaskVector.hard(generator.integers(0, 2, size=registry.size))

        assert measured_flops(encoder, mask, features) == int(mask_cost(mask, cost))


def test_measured_flops_layer_granularity(toy_task):
    config = EncoderConfig(**TOY_MODEL | {"granularity": "layer"})
    encoder, registry = build(config)
    features = generate(toy_task, "dev").samples[0].features
    frames = (features.shape[0] - 1) // 2 + 1
    mask = MaskVector.hard([1, 0, 1, 1, 0, 1, 0, 1])

    assert measured_flops(encoder, mask, features) == int(mask_cost(mask, flops_cost(registry, config, frames)))


def test_cost_table_rows(toy_encoder, toy_model):
    _, registry = toy_encoder
    rows = cost_table(registry, toy_model, 10)

    assert len(rows) == registry.size
    assert rows[0].kind == "ffn1"
    assert rows[4].kind == "mhsa"
    assert rows[5].kind == "conv"
    assert sum(row.params for row in rows) == param_cost(registry).maskable
