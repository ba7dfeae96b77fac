from orthosupernet.train.checkpoint import load_checkpoint, save_checkpoint
from orthosupernet.train.learners import (
    AuxLearner,
    L0Learner,
    MaskLearner,
    OrthoSoftmaxLearner,
    TopkSteLearner,
    make_learner,
)
from orthosupernet.train.optim import Adam, lr_at
from orthosupernet.train.trainer import (
    RunState,
    create_state,
    evaluate,
    load_state,
    save_state,
    step1_step,
    step2_step,
    train,
    train_standalone,
    transition,
)


__all__ = [
    "create_state",
    "evaluate",
    "load_checkpoint",
    "load_state",
    "lr_at",
    "make_learner",
    "save_checkpoint",
    "save_state",
    "step1_step",
    "step2_step",
    "train",
    "train_standalone",
    "transition",
    "Adam",
    "AuxLearner",
    "L0Learner",
    "MaskLearner",
    "OrthoSoftmaxLearner",
    "RunState",
    "TopkSteLearner",
]
