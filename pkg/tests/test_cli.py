import json

import pytest

from orthosupernet.cli import main
from orthosupernet.costs import param_cost
from orthosupernet.reports import HASH_COMMENT
from orthosupernet.schemas import EvalReport, MasksReport, ResolvedConfig, SynthConfig
from orthosupernet.tasks import generate, save_corpus
from orthosupernet.train import load_checkpoint, load_state, save_checkpoint
from tests.conftest import TOY_TASK, TOY_TOML, toy_run


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "run.toml"
    config.write_text(TOY_TOML)
    out = root / "run"
    assert main(["train", "--config", str(config), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(run_dir):
    return str(run_dir / "checkpoint.orsm")


def test_train_writes_artifacts(run_dir):
    echo = ResolvedConfig.model_validate_json((run_dir / "config.json").read_text())

    assert echo.config_hash == toy_run().digest()
    assert len(echo.taus) == 2 and echo.taus[0] < echo.taus[1]
    for name in ("metrics.csv", "masks.json", "checkpoint.orsm"):
        assert (run_dir / name).exists()


def test_train_rejects_incomplete_config(tmp_path):
    config = tmp_path / "run.toml"
    config.write_text(TOY_TOML.split("[[subnets]]")[0])

    assert main(["train", "--config", str(config), "--out", str(tmp_path / "out")]) == 1


def test_eval_supernet(run_dir, checkpoint):
    assert main(["eval", "--checkpoint", checkpoint]) == 0
    report = EvalReport.model_validate_json((run_dir / "eval.json").read_text())
    state = load_state(run_dir / "checkpoint.orsm")

    assert report.subnet == "super"
    assert report.num_sequences == TOY_TASK["dev_size"]
    assert report.params == param_cost(state.registry).total
    assert report.ler >= 0.0


def test_eval_subnet(checkpoint, tmp_path):
    out = tmp_path / "sub.json"
    assert main(["eval", "--checkpoint", checkpoint, "--subnet", "0", "--out", str(out)]) == 0
    assert main(["eval", "--checkpoint", checkpoint, "--out", str(tmp_path / "super.json")]) == 0
    subnet = EvalReport.model_validate_json(out.read_text())
    supernet = EvalReport.model_validate_json((tmp_path / "super.json").read_text())

    assert subnet.subnet == "0"
    assert subnet.flops < supernet.flops
    assert subnet.params < supernet.params


def test_eval_unknown_subnet(checkpoint, tmp_path):
    out = str(tmp_path / "eval.json")

    assert main(["eval", "--checkpoint", checkpoint, "--subnet", "7", "--out", out]) == 2
    assert main(["eval", "--checkpoint", checkpoint, "--subnet", "large", "--out", out]) == 2


def test_eval_corpus_hash_mismatch(checkpoint, tmp_path):
    corpus = tmp_path / "other.bin"
    save_corpus(generate(SynthConfig(**TOY_TASK | {"seed": 1}), "dev"), corpus)
    args = ["eval", "--checkpoint", checkpoint, "--corpus", str(corpus), "--out", str(tmp_path / "e.json")]

    assert main(args) == 2
    assert main(args + ["--force"]) == 0


def test_report(run_dir, checkpoint):
    assert main(["report", "--checkpoint", checkpoint]) == 0
    lines = (run_dir / "remaining_ratio.csv").read_text().splitlines()

    assert lines[0] == f"{HASH_COMMENT}{toy_run().digest()}"
    assert lines[1] == "subnet,block,kind,ratio"
    assert len(lines) == 2 + 2 * 2 * 4


def test_verify(checkpoint, capsys):
    assert main(["verify", "--checkpoint", checkpoint]) == 0
    assert "2 subnets verified" in capsys.readouterr().out


def test_verify_detects_over_budget_mask(checkpoint, tmp_path):
    tensors, metadata = load_checkpoint(checkpoint)
    metadata["subnets"][0]["group_ids"] = list(range(20))
    corrupted = tmp_path / "corrupted.orsm"
    save_checkpoint(corrupted, tensors, metadata)

    assert main(["verify", "--checkpoint", str(corrupted)]) == 3


def test_missing_checkpoint(tmp_path):
    assert main(["verify", "--checkpoint", str(tmp_path / "absent.orsm")]) == 2


def test_cost_to_stdout(toml_path, capsys):
    assert main(["cost", "--config", str(toml_path)]) == 0
    lines = capsys.readouterr().out.splitlines()

    assert lines[0] == f"{HASH_COMMENT}{toy_run().digest()}"
    assert lines[1] == "group_id,block,kind,sub,params,flops"
    assert len(lines) == 22


def test_masks(checkpoint, tmp_path):
    out = tmp_path / "masks.json"
    assert main(["masks", "--checkpoint", checkpoint, "--out", str(out)]) == 0
    report = MasksReport.model_validate_json(out.read_text())

    assert [record.subnet for record in report.masks] == [0, 1]
    assert set(report.masks[0].group_ids) <= set(report.masks[1].group_ids)
    assert json.loads(out.read_text())["config_hash"] == toy_run().digest()


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--instances", "1"]) == 0
    assert "primitive matmul" in capsys.readouterr().out
