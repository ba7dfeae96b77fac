"""Two-step supernet training.

Step 1 trains the encoder jointly with the mask learner: every update pairs
the supernet loss with the loss of one randomly chosen subnet. At the
transition the masks are rounded to binary vectors and the learner freezes.
Step 2 trains the shared weights with the sandwich rule.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from orthosupernet.autodiff import functional as F
from orthosupernet.autodiff.rng import DropoutStream, Site, counter_generator
from orthosupernet.autodiff.tensor import Tape, Tensor, backward
from orthosupernet.costs import CostVector, flops_cost, param_cost, selected_cost, verify
from orthosupernet.encoder.groups import GroupRegistry, Kind
from orthosupernet.encoder.masks import MaskVector
from orthosupernet.encoder.model import Encoder, ForwardContext, build, structural_prune
from orthosupernet.exceptions import BudgetInfeasible, DivergenceError, StateError
from orthosupernet.orthomask import SubnetPlan, plan_subnets
from orthosupernet.reports import masks_report, read_csv, write_hash_line, write_json
from orthosupernet.schemas import Criterion, RunConfig, TrainConfig
from orthosupernet.tasks.ctc import ctc_loss, greedy_decode
from orthosupernet.tasks.metrics import label_error_rate
from orthosupernet.tasks.synth import Corpus, Sample, generate
from orthosupernet.train.checkpoint import load_checkpoint, save_checkpoint
from orthosupernet.train.learners import AuxLearner, MaskLearner, make_learner
from orthosupernet.train.optim import Adam, lr_at


logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.orsm"
METRICS_NAME = "metrics.csv"
MASKS_NAME = "masks.json"


@dataclass
class MetricsRow:
    step: int
    phase: str
    T: float
    beta: float
    lambda_mean: float
    m_sampled: int
    k_m: int
    expected_cost_m: float
    loss_super: float
    loss_sub: float
    loss_orthog: float
    lr: float

    def cells(self) -> list[str]:
        return [
            repr(float(value)) if isinstance(value, float) else str(value)
            for value in dataclasses.astuple(self)
        ]


METRIC_COLUMNS = [field.name for field in dataclasses.fields(MetricsRow)]


@dataclass
class RunState:
    """Everything a run needs to continue bit-exactly.

    Attributes
    ----------
    config : RunConfig
    encoder : Encoder
    registry : GroupRegistry
    cost : CostVector
        Cost vector of the run's selection criterion
    plans : list[SubnetPlan]
        Subnets ordered by ascending budget
    learner : MaskLearner
    optimizer : Adam
        Updates the encoder weights
    learner_optimizer : Adam
        Updates the learner state during Step 1
    step : int
    phase : {"step1", "step2"}
    """

    config: RunConfig
    encoder: Encoder
    registry: GroupRegistry
    cost: CostVector
    plans: list[SubnetPlan]
    learner: MaskLearner
    optimizer: Adam
    learner_optimizer: Adam
    step: int = 0
    phase: Literal["step1", "step2"] = "step1"

    @property
    def masks(self) -> list[MaskVector | None]:
        return [plan.mask for plan in self.plans]


def criterion_cost(registry: GroupRegistry, config: RunConfig) -> CostVector:
    if config.criterion is Criterion.FLOPS:
        return flops_cost(registry, config.model, config.train.l_ref)
    return param_cost(registry, config.model)


def create_state(config: RunConfig) -> RunState:
    """Fresh encoder, plans, learner and optimizers for ``config``."""
    train = config.train
    encoder, registry = build(config.model, train.seed)
    cost = criterion_cost(registry, config)
    plans = plan_subnets(config.subnets, cost)
    learner = make_learner(registry, cost, plans, config)
    if isinstance(learner, AuxLearner):
        for split in learner.splits:
            encoder.add_aux_head(split, train.seed)
        cost = criterion_cost(registry, config)
        learner.cost = cost
    return RunState(
        config=config,
        encoder=encoder,
        registry=registry,
        cost=cost,
        plans=plans,
        learner=learner,
        optimizer=Adam.from_config(encoder.parameters(), train, train.weight_decay),
        learner_optimizer=Adam.from_config(learner.parameters(), train, 0.0),
    )


def focal_scale(losses: Sequence[float] | np.ndarray, beta_focal: float = 1.0) -> np.ndarray:
    """Per-sequence weight ``(1 - p) ** beta_focal`` with ``p = exp(-loss)``."""
    losses = np.maximum(np.asarray(losses, dtype=np.float64), 0.0)
    return (-np.expm1(-losses)) ** beta_focal


def beta_at(step: int, config: TrainConfig) -> float:
    """Orthogonality weight: linear from 0 at the first step to 1 at the
    Step 1 boundary and held there, or constant."""
    if config.beta_mode == "constant":
        return config.beta_value
    return min(1.0, step / config.step1_steps)


def sample_batch(corpus: Corpus, step: int, config: TrainConfig) -> list[Sample]:
    generator = counter_generator(config.seed, step, Site.BATCH)
    size = min(config.batch_size, len(corpus))
    indices = generator.choice(len(corpus), size=size, replace=False)
    return [corpus.samples[int(index)] for index in indices]


def _mean(tensors: Sequence[Tensor]) -> Tensor:
    return F.scale(F.reduce_sum(F.stack(tensors)), 1.0 / len(tensors))


def sequence_losses(
    encoder: Encoder,
    batch: Sequence[Sample],
    tape: Tape,
    *,
    gates: MaskVector | Tensor | None = None,
    context: ForwardContext | None = None,
    split: int | None = None,
) -> list[Tensor]:
    losses = []
    for sample in batch:
        if split is None:
            log_probs = encoder.forward(sample.features, gates, context=context, tape=tape)
        else:
            log_probs = encoder.aux_head_forward(
                sample.features, split, gates, context=context, tape=tape
            )
        losses.append(ctc_loss(log_probs, sample.labels))
    return losses


def subnet_loss(losses: Sequence[Tensor], config: TrainConfig) -> tuple[Tensor, float]:
    """Batch mean of ``lambda_i * loss_i`` with ``lambda`` held constant in
    the backward pass."""
    if config.lambda_mode == "adaptive":
        scales = focal_scale([loss.item() for loss in losses], config.beta_focal)
    else:
        scales = np.full(len(losses), config.lambda_value)
    weighted = [F.scale(loss, float(scale)) for loss, scale in zip(losses, scales)]
    return _mean(weighted), float(scales.mean())


def droppable_modules(registry: GroupRegistry, mask: MaskVector) -> list[tuple[int, Kind]]:
    """Modules none of whose groups the mask keeps."""
    modules = []
    for group in registry.groups:
        module = (group.block, group.kind)
        if module in modules:
            continue
        if not mask.values[registry.module_groups(*module)].any():
            modules.append(module)
    return modules


def draw_skip(
    modules: Sequence[tuple[int, Kind]], config: TrainConfig, step: int, stream: int
) -> frozenset[tuple[int, Kind]]:
    if not modules:
        return frozenset()
    draws = counter_generator(config.seed, step, Site.LAYER_DROP, stream).random(len(modules))
    return frozenset(module for module, u in zip(modules, draws) if u < config.layer_drop_p)


def ffn_dropout_rates(
    registry: GroupRegistry, mask: MaskVector, dropout_base: float
) -> dict[tuple[int, Kind], float]:
    """``dropout_base`` scaled by the fraction of hidden channels each FFN
    keeps."""
    rates = {}
    for block in sorted({group.block for group in registry.groups}):
        for kind in (Kind.FFN1, Kind.FFN2):
            ids = registry.module_groups(block, kind)
            rates[(block, kind)] = dropout_base * float(mask.values[ids].sum()) / len(ids)
    return rates


def _check_finite(step: int, loss: Tensor, diagnostics: dict[str, float]) -> None:
    if not np.isfinite(loss.item()):
        raise DivergenceError(step, {"loss": loss.item(), **diagnostics})


def _update(state: RunState, tape: Tape, loss: Tensor, *, learner: bool) -> float:
    train = state.config.train
    state.optimizer.zero_grad()
    state.learner_optimizer.zero_grad()
    backward(tape, loss)
    lr = lr_at(state.step, train)
    state.optimizer.step(lr)
    if learner:
        state.learner_optimizer.step(lr_at(state.step, train, train.score_lr))
    return lr


def step1_step(state: RunState, corpus: Corpus) -> MetricsRow:
    """One Step 1 update of the encoder and the mask learner.

    Raises
    ------
    StateError
        The run has already left Step 1
    DivergenceError
        The loss is not finite
    """
    if state.phase != "step1":
        raise StateError("step1_step called after the transition")
    train = state.config.train
    t = state.step
    batch = sample_batch(corpus, t, train)
    m = int(counter_generator(train.seed, t, Site.SUBNET).integers(len(state.plans)))
    plan = state.plans[m]
    dropout = state.config.model.dropout_base

    tape = Tape()
    selection = state.learner.step1_gates(tape, plan, t)
    supernet = _mean(
        sequence_losses(
            state.encoder, batch, tape, context=ForwardContext(DropoutStream(train.seed, t, 0), dropout)
        )
    )
    subnet, lambda_mean = subnet_loss(
        sequence_losses(
            state.encoder,
            batch,
            tape,
            gates=selection.gates,
            context=ForwardContext(DropoutStream(train.seed, t, 1), dropout),
            split=selection.split,
        ),
        train,
    )
    beta = beta_at(t, train)
    loss = supernet + subnet
    orthogonality = 0.0
    if selection.regularizer is not None:
        orthogonality = selection.regularizer.item()
        loss = loss + F.scale(selection.regularizer, beta)
    _check_finite(
        t,
        loss,
        {"loss_super": supernet.item(), "loss_sub": subnet.item(), "loss_orthog": orthogonality},
    )
    lr = _update(state, tape, loss, learner=True)
    state.step += 1
    return MetricsRow(
        step=t,
        phase="step1",
        T=state.learner.temperature(t),
        beta=beta,
        lambda_mean=lambda_mean,
        m_sampled=plan.subnet,
        k_m=selection.k,
        expected_cost_m=selection.expected_cost,
        loss_super=supernet.item(),
        loss_sub=subnet.item(),
        loss_orthog=orthogonality,
        lr=lr,
    )


def transition(state: RunState) -> list[MaskVector]:
    """Round every subnet's mask and freeze the learner; a second call
    returns the masks unchanged.

    Raises
    ------
    BudgetInfeasible
        A rounded mask does not satisfy its budget
    """
    if state.phase == "step2":
        return state.masks
    masks = state.learner.round(state.step)
    for plan in state.plans:
        if not verify(plan.mask, state.cost, plan.tau):
            raise BudgetInfeasible(plan.subnet, plan.tau)
    state.phase = "step2"
    for plan in state.plans:
        logger.info(
            "Subnet %d rounded to %d groups, cost %s < tau %s",
            plan.subnet,
            plan.k,
            selected_cost(plan.mask, state.cost),
            plan.tau,
        )
    return masks


def sandwich(state: RunState, step: int) -> tuple[SubnetPlan, list[SubnetPlan]]:
    """Sampled subnet and the subnets forwarded next to the supernet.

    At most two subnets are forwarded, so a step runs no more than three
    forwards. The smallest subnet is always one of them; the other is drawn
    uniformly from the rest. With ``largest = "largest_subnet"`` that slot
    holds the largest subnet on even steps and a subnet drawn from the
    middle ones on odd steps.
    """
    plans = state.plans
    smallest = plans[0]
    if len(plans) == 1:
        return smallest, [smallest]
    train = state.config.train
    others = plans[1:]
    if train.largest == "largest_subnet":
        if len(plans) == 2 or step % 2 == 0:
            return plans[-1], [smallest, plans[-1]]
        others = plans[1:-1]
    draw = counter_generator(train.seed, step, Site.SANDWICH).integers(len(others))
    sampled = others[int(draw)]
    return sampled, [smallest, sampled]


def step2_step(state: RunState, corpus: Corpus) -> MetricsRow:
    """One sandwich update of the shared weights.

    Raises
    ------
    StateError
        Masks have not been rounded yet
    DivergenceError
        The loss is not finite
    """
    if state.phase != "step2":
        raise StateError("step2_step needs rounded masks; run the transition first")
    train = state.config.train
    dropout = state.config.model.dropout_base
    t = state.step
    batch = sample_batch(corpus, t, train)
    sampled, forwarded = sandwich(state, t)
    droppable = droppable_modules(state.registry, state.plans[0].mask) if train.layer_dropout else []

    tape = Tape()
    supernet = _mean(
        sequence_losses(
            state.encoder,
            batch,
            tape,
            context=ForwardContext(
                DropoutStream(train.seed, t, 0), dropout, skip=draw_skip(droppable, train, t, 0)
            ),
        )
    )
    loss = supernet
    subnet_total = 0.0
    lambdas = []
    for stream, plan in enumerate(forwarded, start=1):
        context = ForwardContext(
            DropoutStream(train.seed, t, stream),
            dropout,
            ffn_dropout=(
                ffn_dropout_rates(state.registry, plan.mask, dropout)
                if train.adaptive_ffn_dropout
                else {}
            ),
            skip=(
                draw_skip(droppable, train, t, stream)
                if train.layer_dropout_on == "all"
                else frozenset()
            ),
        )
        subnet, lambda_mean = subnet_loss(
            sequence_losses(
                state.encoder,
                batch,
                tape,
                gates=None if plan.split is not None else plan.mask,
                context=context,
                split=plan.split,
            ),
            train,
        )
        loss = loss + subnet
        subnet_total += subnet.item()
        lambdas.append(lambda_mean)
    _check_finite(t, loss, {"loss_super": supernet.item(), "loss_sub": subnet_total})
    lr = _update(state, tape, loss, learner=False)
    state.step += 1
    return MetricsRow(
        step=t,
        phase="step2",
        T=state.learner.temperature(train.step1_steps),
        beta=beta_at(train.step1_steps, train),
        lambda_mean=float(np.mean(lambdas)),
        m_sampled=sampled.subnet,
        k_m=sampled.k,
        expected_cost_m=selected_cost(sampled.mask, state.cost),
        loss_super=supernet.item(),
        loss_sub=subnet_total,
        loss_orthog=0.0,
        lr=lr,
    )


def state_tensors(state: RunState) -> dict[str, np.ndarray]:
    tensors = {f"param/{name}": p.value for name, p in state.encoder.params.items()}
    tensors |= {f"learner/{p.name}": p.value for p in state.learner.parameters()}
    tensors |= state.optimizer.state_arrays("adam/theta")
    tensors |= state.learner_optimizer.state_arrays("adam/learner")
    return tensors


def state_metadata(state: RunState) -> dict:
    return {
        "config_hash": state.config.digest(),
        "config": state.config.model_dump(mode="json"),
        "step": state.step,
        "phase": state.phase,
        "theta_updates": state.optimizer.t,
        "learner_updates": state.learner_optimizer.t,
        "subnets": [
            {
                "subnet": plan.subnet,
                "tau": plan.tau,
                "criterion": state.cost.criterion.value,
                "k": plan.k,
                "split": plan.split,
                "group_ids": None if plan.mask is None else plan.mask.selected(),
            }
            for plan in state.plans
        ],
    }


def save_state(state: RunState, path: Path) -> None:
    save_checkpoint(path, state_tensors(state), state_metadata(state))


def load_state(path: Path) -> RunState:
    """Rebuild a run from a checkpoint.

    Raises
    ------
    FormatError
        The file is not a valid checkpoint
    StateError
        The stored configuration does not match its recorded hash
    """
    tensors, metadata = load_checkpoint(path)
    config = RunConfig.model_validate(metadata["config"])
    if config.digest() != metadata["config_hash"]:
        raise StateError(f"checkpoint {path} does not match its configuration hash")
    state = create_state(config)
    for name, parameter in state.encoder.params.items():
        parameter.value[...] = tensors[f"param/{name}"]
    for parameter in state.learner.parameters():
        parameter.value[...] = tensors[f"learner/{parameter.name}"]
    state.optimizer.load_state_arrays("adam/theta", tensors, metadata["theta_updates"])
    state.learner_optimizer.load_state_arrays("adam/learner", tensors, metadata["learner_updates"])
    state.step = metadata["step"]
    state.phase = metadata["phase"]
    size = state.registry.size
    for plan, record in zip(state.plans, metadata["subnets"]):
        plan.k = record["k"]
        plan.split = record["split"]
        if record["group_ids"] is not None:
            plan.mask = MaskVector.from_ids(size, record["group_ids"])
    return state


class MetricsWriter:
    """Appends rows to metrics.csv under a ``# config_hash=`` line; on
    resume, rows at or after the resumed step are discarded first.

    Raises
    ------
    StateError
        The existing file was written by another configuration
    """

    def __init__(self, path: Path, config_hash: str, resume_step: int | None = None) -> None:
        self.path = Path(path)
        kept: list[list[str]] = []
        if resume_step is not None and self.path.exists():
            written_by, rows = read_csv(self.path)
            if written_by is not None and written_by != config_hash:
                raise StateError(f"{self.path} was written by a different configuration")
            kept = [
                [row[column] for column in METRIC_COLUMNS]
                for row in rows
                if int(row["step"]) < resume_step
            ]
        self.handle = open(self.path, "w", newline="")
        write_hash_line(self.handle, config_hash)
        self.writer = csv.writer(self.handle, lineterminator="\n")
        self.writer.writerow(METRIC_COLUMNS)
        self.writer.writerows(kept)

    def write(self, row: MetricsRow) -> None:
        self.writer.writerow(row.cells())

    def close(self) -> None:
        self.handle.close()

    def __enter__(self) -> MetricsWriter:
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def write_masks(state: RunState, path: Path) -> None:
    write_json(path, masks_report(state.config.digest(), state.plans, state.cost))


def train(
    config: RunConfig,
    out_dir: Path,
    *,
    corpus: Corpus | None = None,
    threads: int = 1,
    resume: Path | None = None,
) -> RunState:
    """Run Step 1, the transition and Step 2, writing the final checkpoint,
    metrics.csv and masks.json into ``out_dir``.

    Parameters
    ----------
    config : RunConfig
    out_dir : Path
    corpus : Corpus or None, default=None
        Training corpus; generated from ``config.task`` when omitted
    threads : int, default=1
        Corpus generation threads
    resume : Path or None, default=None
        Checkpoint to continue from

    Raises
    ------
    StateError
        The resume checkpoint belongs to another configuration
    DivergenceError
    BudgetInfeasible
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_config = config.train
    if corpus is None:
        corpus = generate(config.task, "train", threads=threads)

    if resume is not None:
        state = load_state(resume)
        if state.config.digest() != config.digest():
            raise StateError(f"checkpoint {resume} was written by a different configuration")
        logger.info("Resuming from %s at step %d", resume, state.step)
    else:
        state = create_state(config)

    boundary = train_config.step1_steps
    resume_step = state.step if resume else None
    with MetricsWriter(out_dir / METRICS_NAME, config.digest(), resume_step) as writer:
        while state.step < train_config.total_steps:
            if state.phase == "step1" and state.step >= boundary:
                transition(state)
                write_masks(state, out_dir / MASKS_NAME)
            if state.phase == "step1":
                row = step1_step(state, corpus)
            else:
                row = step2_step(state, corpus)
            writer.write(row)
            if state.step % train_config.log_every == 0 or state.step == train_config.total_steps:
                logger.info(
                    "%s step %d: super %.4f sub %.4f orthog %.4f T %.4f k %d lr %.2e",
                    row.phase,
                    row.step,
                    row.loss_super,
                    row.loss_sub,
                    row.loss_orthog,
                    row.T,
                    row.k_m,
                    row.lr,
                )
            if train_config.checkpoint_every and state.step % train_config.checkpoint_every == 0:
                save_state(state, out_dir / f"checkpoint-{state.step}.orsm")

    transition(state)
    save_state(state, out_dir / CHECKPOINT_NAME)
    write_masks(state, out_dir / MASKS_NAME)
    return state


def train_standalone(
    config: RunConfig,
    mask: MaskVector | None,
    corpus: Corpus,
    *,
    split: int | None = None,
) -> Encoder:
    """Train one fixed-mask model alone for ``total_steps`` updates with the
    plain CTC loss; the separately trained control of a subnet."""
    train_config = config.train
    encoder, registry = build(config.model, train_config.seed)
    if split is not None:
        encoder.add_aux_head(split, train_config.seed)
    optimizer = Adam.from_config(encoder.parameters(), train_config, train_config.weight_decay)
    dropout = config.model.dropout_base
    rates = (
        ffn_dropout_rates(registry, mask, dropout)
        if mask is not None and train_config.adaptive_ffn_dropout
        else {}
    )
    for t in range(train_config.total_steps):
        tape = Tape()
        loss = _mean(
            sequence_losses(
                encoder,
                sample_batch(corpus, t, train_config),
                tape,
                gates=mask if split is None else None,
                context=ForwardContext(DropoutStream(train_config.seed, t, 0), dropout, rates),
                split=split,
            )
        )
        _check_finite(t, loss, {})
        optimizer.zero_grad()
        backward(tape, loss)
        optimizer.step(lr_at(t, train_config))
    return encoder


def evaluate(
    encoder: Encoder,
    mask: MaskVector | None,
    corpus: Corpus,
    *,
    split: int | None = None,
) -> float:
    """Label error rate of greedy decoding on the structurally pruned model;
    ``mask=None`` evaluates the supernet."""
    model = encoder if mask is None else structural_prune(encoder, mask)
    hypotheses = []
    for sample in corpus.samples:
        if split is None:
            log_probs = model.forward(sample.features)
        else:
            log_probs = model.aux_head_forward(sample.features, split)
        hypotheses.append(greedy_decode(log_probs))
    return label_error_rate(hypotheses, [sample.labels for sample in corpus.samples])
