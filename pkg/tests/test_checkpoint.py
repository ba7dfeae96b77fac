import numpy as np
import pytest

from orthosupernet.exceptions import FormatError, StateError
from orthosupernet.train import (
    create_state,
    load_checkpoint,
    load_state,
    save_checkpoint,
    save_state,
    step1_step,
)
from orthosupernet.train.checkpoint import MAGIC, PREFIX
from orthosupernet.train.trainer import state_metadata, state_tensors


@pytest.fixture
def tensors():
    return {
        "param/w": np.arange(6, dtype=np.float32).reshape(2, 3),
        "param/b": np.array([0.25, -1.5]),
        "counts": np.array([3, 1], dtype=np.int64),
    }


def test_checkpoint_keeps_tensors_and_metadata(tmp_path, tensors):
    path = tmp_path / "run" / "state.orsm"
    save_checkpoint(path, tensors, {"step": 7, "phase": "step2"})
    loaded, metadata = load_checkpoint(path)

    assert list(loaded) == list(tensors)
    assert all(loaded[name].dtype == tensors[name].dtype for name in tensors)
    assert all(np.array_equal(loaded[name], tensors[name]) for name in tensors)
    assert metadata == {"step": 7, "phase": "step2"}


def test_checkpoint_starts_with_magic(tmp_path, tensors):
    path = tmp_path / "state.orsm"
    save_checkpoint(path, tensors, {})
    magic, version, _ = PREFIX.unpack_from(path.read_bytes())

    assert magic == MAGIC
    assert version == 1


def test_checkpoint_rejects_damaged_files(tmp_path, tensors):
    path = tmp_path / "state.orsm"
    save_checkpoint(path, tensors, {})
    data = path.read_bytes()
    cases = {
        "magic": b"ORSX" + data[4:],
        "version": data[:4] + (2).to_bytes(4, "little") + data[8:],
        "truncated": data[:-3],
        "short": data[:6],
    }
    for name, damaged in cases.items():
        broken = tmp_path / f"{name}.orsm"
        broken.write_bytes(damaged)

        with pytest.raises(FormatError):
            load_checkpoint(broken)
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "missing.orsm")


def test_run_state_round_trip(toy_config, toy_corpus, tmp_path):
    state = create_state(toy_config)
    step1_step(state, toy_corpus)
    path = tmp_path / "state.orsm"
    save_state(state, path)
    restored = load_state(path)

    assert (restored.step, restored.phase) == (1, "step1")
    assert restored.optimizer.t == 1
    assert all(
        np.array_equal(restored.encoder.params[name].value, parameter.value)
        for name, parameter in state.encoder.params.items()
    )
    assert np.array_equal(
        restored.learner.parameters()[0].value, state.learner.parameters()[0].value
    )


def test_run_state_rejects_foreign_hash(toy_config, tmp_path):
    state = create_state(toy_config)
    metadata = state_metadata(state) | {"config_hash": "0" * 64}
    path = tmp_path / "state.orsm"
    save_checkpoint(path, state_tensors(state), metadata)

    with pytest.raises(StateError):
        load_state(path)
