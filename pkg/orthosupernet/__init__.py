from orthosupernet.config import load_config, parse_config
from orthosupernet.encoder import Encoder, MaskVector, build, structural_prune
from orthosupernet.schemas import RunConfig
from orthosupernet.train import RunState, evaluate, train


__all__ = [
    "build",
    "evaluate",
    "load_config",
    "parse_config",
    "structural_prune",
    "train",
    "Encoder",
    "MaskVector",
    "RunConfig",
    "RunState",
]
