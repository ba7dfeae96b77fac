import hashlib
import json
from enum import Enum
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Granularity(str, Enum):
    LAYER = "layer"
    COMPONENT = "component"


class Criterion(str, Enum):
    SPARSITY = "sparsity"
    FLOPS = "flops"


class LearnerKind(str, Enum):
    ORTHOSOFTMAX = "orthosoftmax"
    TOPK_STE = "topk_ste"
    L0 = "l0"
    AUX = "aux"


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EncoderConfig(StrictModel):
    """Conformer-lite encoder shape. ``chunk_size`` defaults to ``d_model``
    and the head count to ``max(1, d_model // 64)``."""

    num_blocks: int = Field(2, ge=1)
    d_model: int = Field(32, ge=1)
    ffn_mult: int = Field(4, ge=1)
    conv_kernel: int = Field(7, ge=1)
    chunk_size: int | None = Field(None, ge=1)
    vocab_size: int = Field(8, ge=2)
    d_in: int = Field(16, ge=1)
    dropout_base: float = Field(0.1, ge=0, lt=1)
    granularity: Granularity = Granularity.COMPONENT
    max_frames: int = Field(256, ge=1)
    dtype: Literal["float32", "float64"] = "float32"

    @property
    def num_heads(self) -> int:
        return max(1, self.d_model // 64)

    @property
    def d_head(self) -> int:
        return self.d_model // self.num_heads

    @property
    def ffn_hidden(self) -> int:
        return self.ffn_mult * self.d_model

    @property
    def chunk(self) -> int:
        return self.d_model if self.chunk_size is None else self.chunk_size

    @property
    def num_chunks(self) -> int:
        return self.ffn_hidden // self.chunk


class SynthConfig(StrictModel):
    vocab: int = Field(8, ge=2)
    d_in: int = Field(16, ge=1)
    min_label_len: int = Field(2, ge=1)
    max_label_len: int = Field(8, ge=1)
    min_frames_per_label: int = Field(1, ge=1)
    max_frames_per_label: int = Field(4, ge=1)
    noise: float = Field(0.3, ge=0)
    train_size: int = Field(2000, ge=1)
    dev_size: int = Field(500, ge=1)
    seed: int = Field(0, ge=0)

    def digest(self) -> str:
        return config_hash(self)


class TrainConfig(StrictModel):
    total_steps: int = Field(1000, ge=1)
    step1_fraction: float = Field(0.6, gt=0, lt=1)
    batch_size: int = Field(4, ge=1)
    peak_lr: float = Field(1e-3, gt=0)
    score_lr: float = Field(1e-2, gt=0)
    score_init_noise: float = Field(1e-2, ge=0)
    warmup_fraction: float = Field(0.1, ge=0, le=1)
    hold_fraction: float = Field(0.4, ge=0, le=1)
    final_lr_ratio: float = Field(0.01, ge=0, le=1)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    weight_decay: float = Field(1e-2, ge=0)
    lambda_mode: Literal["adaptive", "constant"] = "adaptive"
    lambda_value: float = Field(1.0, gt=0)
    beta_mode: Literal["linear", "constant"] = "linear"
    beta_value: float = Field(1.0, ge=0)
    beta_focal: float = Field(1.0, ge=0)
    anneal_temperature: bool = True
    temperature_decay: float = Field(0.999992, gt=0, le=1)
    temperature_floor: float = Field(0.1, gt=0)
    layer_dropout: bool = True
    layer_drop_p: float = Field(0.2, ge=0, lt=1)
    layer_dropout_on: Literal["supernet", "all"] = "supernet"
    adaptive_ffn_dropout: bool = True
    largest: Literal["supernet", "largest_subnet"] = "supernet"
    l_ref: int = Field(100, ge=1)
    log_every: int = Field(100, ge=1)
    checkpoint_every: int = Field(0, ge=0)
    seed: int = Field(0, ge=0)

    @property
    def step1_steps(self) -> int:
        return max(1, round(self.step1_fraction * self.total_steps))


class SubnetBudget(StrictModel):
    """One subnet's cost constraint: a fraction of the maskable cost or an
    absolute value in the criterion's unit."""

    criterion: Criterion = Criterion.FLOPS
    fraction: float | None = None
    absolute: float | None = None

    @model_validator(mode="after")
    def exactly_one(self) -> "SubnetBudget":
        if (self.fraction is None) == (self.absolute is None):
            raise ValueError("set exactly one of 'fraction' and 'absolute'")
        return self


class MaskLearnerConfig(StrictModel):
    kind: LearnerKind = LearnerKind.ORTHOSOFTMAX
    l0_penalty: float = Field(10.0, ge=0)
    l0_beta: float = Field(2 / 3, gt=0)
    l0_gamma: float = Field(-0.1, lt=0)
    l0_zeta: float = Field(1.1, gt=1)


class RunConfig(StrictModel):
    """A complete run; every table must be present, even when all of its
    keys keep their defaults."""

    model: EncoderConfig
    task: SynthConfig
    train: TrainConfig
    subnets: list[SubnetBudget] = Field(min_length=1)
    mask_learner: MaskLearnerConfig

    @model_validator(mode="after")
    def consistent(self) -> "RunConfig":
        if self.model.vocab_size != self.task.vocab:
            raise ValueError("model.vocab_size must equal task.vocab")
        if self.model.d_in != self.task.d_in:
            raise ValueError("model.d_in must equal task.d_in")
        criteria = {subnet.criterion for subnet in self.subnets}
        if len(criteria) > 1:
            raise ValueError("all subnets must share one selection criterion")
        return self

    @property
    def criterion(self) -> Criterion:
        return self.subnets[0].criterion

    def digest(self) -> str:
        return config_hash(self)


def config_hash(model: BaseModel) -> str:
    canonical = json.dumps(model.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


class MaskRecord(BaseModel):
    subnet: int
    tau: float
    criterion: Criterion
    k: int
    group_ids: list[int]
    verify_cost: float
    split: int | None = None


class MasksReport(BaseModel):
    config_hash: str
    masks: list[MaskRecord]


class EvalReport(BaseModel):
    config_hash: str
    corpus_hash: str
    subnet: str
    ler: float
    params: int
    flops: int
    num_sequences: int


class CostRow(BaseModel):
    group_id: int
    block: int
    kind: str
    sub: int
    params: int
    flops: int


class RatioRow(BaseModel):
    subnet: int
    block: int
    kind: str
    ratio: float


class ResolvedConfig(BaseModel):
    config_hash: str
    config: RunConfig
    taus: list[float]
