import pytest
from pydantic_settings import BaseSettings, SettingsConfigDict

from orthosupernet.encoder import build
from orthosupernet.schemas import (
    Criterion,
    EncoderConfig,
    RunConfig,
    SubnetBudget,
    SynthConfig,
    TrainConfig,
)
from orthosupernet.tasks import generate


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="ORTHOSUPERNET_TEST_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Seeds for the slow experiments, comma separated
    SEEDS: str = "0,1,2"


settings = Settings()


TOY_MODEL = {
    "num_blocks": 2,
    "d_model": 8,
    "ffn_mult": 2,
    "conv_kernel": 3,
    "chunk_size": 4,
    "vocab_size": 3,
    "d_in": 4,
    "dropout_base": 0.1,
    "max_frames": 64,
    "dtype": "float64",
}

TOY_TASK = {
    "vocab": 3,
    "d_in": 4,
    "min_label_len": 1,
    "max_label_len": 3,
    "min_frames_per_label": 1,
    "max_frames_per_label": 3,
    "noise": 0.1,
    "train_size": 16,
    "dev_size": 6,
    "seed": 0,
}

TOY_TRAIN = {
    "total_steps": 6,
    "step1_fraction": 0.5,
    "batch_size": 2,
    "l_ref": 10,
    "log_every": 2,
    "seed": 0,
}


def toy_run(**overrides) -> RunConfig:
    """Tiny two-block run with 40% and 70% FLOPs subnets; ``overrides`` are
    merged into the named tables."""
    document = {
        "model": dict(TOY_MODEL),
        "task": dict(TOY_TASK),
        "train": dict(TOY_TRAIN),
        "subnets": [
            {"criterion": "flops", "fraction": 0.4},
            {"criterion": "flops", "fraction": 0.7},
        ],
        "mask_learner": {"kind": "orthosoftmax"},
    }
    for table, values in overrides.items():
        if isinstance(values, dict):
            document[table] = document[table] | values
        else:
            document[table] = values
    return RunConfig.model_validate(document)


TOY_TOML = """
[model]
num_blocks = 2
d_model = 8
ffn_mult = 2
conv_kernel = 3
chunk_size = 4
vocab_size = 3
d_in = 4
max_frames = 64
dtype = "float64"

[task]
vocab = 3
d_in = 4
min_label_len = 1
max_label_len = 3
max_frames_per_label = 3
noise = 0.1
train_size = 16
dev_size = 6

[train]
total_steps = 6
step1_fraction = 0.5
batch_size = 2
l_ref = 10
log_every = 2

[mask_learner]
kind = "orthosoftmax"

[[subnets]]
criterion = "flops"
fraction = 0.4

[[subnets]]
criterion = "flops"
fraction = 0.7
"""


@pytest.fixture(scope="session")
def toy_model() -> EncoderConfig:
    return EncoderConfig(**TOY_MODEL)


@pytest.fixture(scope="session")
def toy_task() -> SynthConfig:
    return SynthConfig(**TOY_TASK)


@pytest.fixture(scope="session")
def toy_train() -> TrainConfig:
    return TrainConfig(**TOY_TRAIN)


@pytest.fixture(scope="session")
def toy_config() -> RunConfig:
    return toy_run()


@pytest.fixture(scope="session")
def toy_corpus(toy_task):
    return generate(toy_task, "train")


@pytest.fixture(scope="session")
def toy_dev(toy_task):
    return generate(toy_task, "dev")


@pytest.fixture
def toy_encoder(toy_model):
    """Fresh encoder and registry; tests may mutate both."""
    return build(toy_model, seed=0)


@pytest.fixture
def flops_budgets():
    return [
        SubnetBudget(criterion=Criterion.FLOPS, fraction=0.4),
        SubnetBudget(criterion=Criterion.FLOPS, fraction=0.7),
    ]


@pytest.fixture
def toml_path(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(TOY_TOML)
    return path
