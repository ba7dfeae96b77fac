import pytest

from orthosupernet import load_config, parse_config
from orthosupernet.exceptions import ConfigError
from orthosupernet.schemas import Criterion, Granularity, LearnerKind
from tests.conftest import TOY_TOML, toy_run


def test_load_config(toml_path):
    config = load_config(toml_path)

    assert config.model_dump() == toy_run().model_dump()
    assert config.criterion is Criterion.FLOPS
    assert config.model.granularity is Granularity.COMPONENT
    assert config.mask_learner.kind is LearnerKind.ORTHOSOFTMAX


def test_config_hash_is_stable(toml_path):
    assert load_config(toml_path).digest() == toy_run().digest()
    assert toy_run(train={"seed": 1}).digest() != toy_run().digest()


def test_syntax_error_reports_line():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config("[model]\nnum_blocks = 2\nd_model = = 8\n")


def test_unknown_key():
    with pytest.raises(ConfigError, match="colour"):
        parse_config(TOY_TOML.replace("[model]\n", "[model]\ncolour = 1\n"))


def test_missing_subnets():
    with pytest.raises(ConfigError, match="subnets"):
        parse_config(TOY_TOML.split("[[subnets]]")[0])


def _without_table(table: str) -> str:
    kept, skipping = [], False
    for line in TOY_TOML.splitlines():
        if line.startswith("["):
            skipping = line == f"[{table}]"
        if not skipping:
            kept.append(line)
    return "\n".join(kept)


@pytest.mark.parametrize("table", ["model", "task", "train", "mask_learner"])
def test_missing_table(table):
    with pytest.raises(ConfigError, match=f"{table}: Field required"):
        parse_config(_without_table(table))


def test_budget_needs_exactly_one_form():
    with pytest.raises(ConfigError):
        parse_config(TOY_TOML.replace("fraction = 0.4", "fraction = 0.4\nabsolute = 10"))


def test_mixed_criteria():
    with pytest.raises(ConfigError):
        parse_config(TOY_TOML.replace('criterion = "flops"\nfraction = 0.4', 'criterion = "sparsity"\nfraction = 0.4'))


def test_vocabulary_mismatch():
    with pytest.raises(ConfigError):
        parse_config(TOY_TOML.replace("vocab = 3", "vocab = 4"))


def test_out_of_range_value():
    with pytest.raises(ConfigError, match="step1_fraction"):
        parse_config(TOY_TOML.replace("step1_fraction = 0.5", "step1_fraction = 1.5"))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")
