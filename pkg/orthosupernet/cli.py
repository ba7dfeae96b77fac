"""Command line entry point: ``orthosupernet <subcommand> [options]``.

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 failed
verification.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from orthosupernet.config import load_config
from orthosupernet.costs import cost_table, flops_cost, mask_cost, param_cost, selected_cost, verify
from orthosupernet.encoder.masks import MaskVector
from orthosupernet.encoder.model import build, structural_prune
from orthosupernet.exceptions import OrthoSupernetError, StateError, VerificationFailed
from orthosupernet.oracles import CheckResult, gradcheck_suite, oracle_suite
from orthosupernet.orthomask import plan_subnets
from orthosupernet.reports import (
    remaining_ratios,
    write_cost_table,
    write_json,
    write_remaining_ratio,
)
from orthosupernet.schemas import EvalReport, LearnerKind, ResolvedConfig, RunConfig
from orthosupernet.settings import Settings
from orthosupernet.tasks.synth import generate, load_corpus, make_sample, prototypes
from orthosupernet.train.trainer import (
    MASKS_NAME,
    RunState,
    criterion_cost,
    evaluate,
    load_state,
    train,
    write_masks,
)


logger = logging.getLogger(__name__)

CONFIG_ECHO_NAME = "config.json"
EVAL_NAME = "eval.json"
RATIO_NAME = "remaining_ratio.csv"


def _with_seed(config: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return config
    return config.model_copy(update={"train": config.train.model_copy(update={"seed": seed})})


def _require_masks(state: RunState, path: Path) -> None:
    if any(mask is None for mask in state.masks):
        raise StateError(f"{path} holds no rounded masks; training has not reached Step 2")


def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    config = _with_seed(load_config(args.config), args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    _, registry = build(config.model, config.train.seed)
    plans = plan_subnets(config.subnets, criterion_cost(registry, config))
    echo = ResolvedConfig(
        config_hash=config.digest(), config=config, taus=[plan.tau for plan in plans]
    )
    write_json(out_dir / CONFIG_ECHO_NAME, echo)

    threads = settings.THREADS if args.threads is None else args.threads
    state = train(config, out_dir, threads=threads, resume=args.resume)
    logger.info("Finished %d steps; artifacts in %s", state.step, out_dir)
    return 0


def cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    checkpoint = Path(args.checkpoint)
    state = load_state(checkpoint)
    config = state.config
    if args.corpus is None:
        corpus = generate(config.task, "dev", threads=settings.THREADS)
    else:
        corpus = load_corpus(args.corpus)
    expected = config.task.digest()
    if corpus.config_hash != expected and not args.force:
        raise StateError(
            f"corpus hash {corpus.config_hash[:12]} does not match the run's task {expected[:12]}; "
            "pass --force to evaluate anyway"
        )

    params = param_cost(state.registry, config.model)
    flops = flops_cost(state.registry, config.model, config.train.l_ref)
    if args.subnet == "super":
        ler = evaluate(state.encoder, None, corpus)
        full = MaskVector.ones(state.registry.size)
        param_count, flop_count = mask_cost(full, params), mask_cost(full, flops)
    else:
        valid = [plan.subnet for plan in state.plans]
        try:
            plan = state.plans[valid.index(int(args.subnet))]
        except ValueError:
            raise StateError(
                f"unknown subnet {args.subnet!r}; valid ids are super, "
                + ", ".join(str(subnet) for subnet in valid)
            ) from None
        if plan.mask is None:
            raise StateError(f"subnet {plan.subnet} has no rounded mask before the transition")
        ler = evaluate(state.encoder, plan.mask, corpus, split=plan.split)
        param_count, flop_count = mask_cost(plan.mask, params), mask_cost(plan.mask, flops)

    report = EvalReport(
        config_hash=config.digest(),
        corpus_hash=corpus.config_hash,
        subnet=str(args.subnet),
        ler=ler,
        params=int(param_count),
        flops=int(flop_count),
        num_sequences=len(corpus),
    )
    out = Path(args.out) if args.out else checkpoint.parent / EVAL_NAME
    write_json(out, report)
    print(f"subnet {report.subnet}: LER {ler:.2f}% params {report.params} FLOPs {report.flops}")
    return 0


def cmd_report(args: argparse.Namespace, settings: Settings) -> int:
    checkpoint = Path(args.checkpoint)
    state = load_state(checkpoint)
    _require_masks(state, checkpoint)
    out = Path(args.out) if args.out else checkpoint.parent / RATIO_NAME
    write_remaining_ratio(out, remaining_ratios(state.registry, state.plans), state.config.digest())
    logger.info("Wrote %s", out)
    return 0


def _equivalence_gap(state: RunState, mask: MaskVector, split: int | None) -> float:
    task = state.config.task
    features = make_sample(task, prototypes(task), "dev", 0).features
    pruned = structural_prune(state.encoder, mask)
    if split is None:
        gated = state.encoder.forward(features, mask)
        smaller = pruned.forward(features)
    else:
        gated = state.encoder.aux_head_forward(features, split, mask)
        smaller = pruned.aux_head_forward(features, split)
    return float(np.max(np.abs(gated.data.astype(np.float64) - smaller.data)))


def cmd_verify(args: argparse.Namespace, settings: Settings) -> int:
    checkpoint = Path(args.checkpoint)
    state = load_state(checkpoint)
    _require_masks(state, checkpoint)
    tolerance = 1e-5 if state.config.model.dtype == "float32" else 1e-9
    failures = []
    for plan in state.plans:
        cost = selected_cost(plan.mask, state.cost)
        if not verify(plan.mask, state.cost, plan.tau):
            failures.append(f"subnet {plan.subnet}: cost {cost} is not below tau {plan.tau}")
        gap = _equivalence_gap(state, plan.mask, plan.split)
        if gap > tolerance:
            failures.append(f"subnet {plan.subnet}: pruned forward differs from masked by {gap:.3e}")
        logger.info("Subnet %d: cost %s < tau %s, prune gap %.3e", plan.subnet, cost, plan.tau, gap)

    if state.config.mask_learner.kind is not LearnerKind.L0:
        for smaller, larger in zip(state.plans, state.plans[1:]):
            if not smaller.mask.issubset(larger.mask):
                failures.append(f"subnet {smaller.subnet} is not nested in subnet {larger.subnet}")
    if failures:
        raise VerificationFailed(failures)
    print(f"{len(state.plans)} subnets verified")
    return 0


def cmd_cost(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args.config)
    _, registry = build(config.model, config.train.seed)
    rows = cost_table(registry, config.model, config.train.l_ref)
    if args.out is None:
        write_cost_table(sys.stdout, rows, config.digest())
    else:
        with open(args.out, "w", newline="") as handle:
            write_cost_table(handle, rows, config.digest())
    return 0


def cmd_masks(args: argparse.Namespace, settings: Settings) -> int:
    checkpoint = Path(args.checkpoint)
    state = load_state(checkpoint)
    _require_masks(state, checkpoint)
    out = Path(args.out) if args.out else checkpoint.parent / MASKS_NAME
    write_masks(state, out)
    logger.info("Wrote %s", out)
    return 0


def _report_checks(results: Sequence[CheckResult]) -> int:
    for result in results:
        print(result.describe())
    failures = [result.name for result in results if not result.passed]
    if failures:
        raise VerificationFailed(failures)
    return 0


def cmd_gradcheck(args: argparse.Namespace, settings: Settings) -> int:
    return _report_checks(gradcheck_suite(instances=args.instances, seed=args.seed))


def cmd_oracle(args: argparse.Namespace, settings: Settings) -> int:
    return _report_checks(oracle_suite(seed=args.seed))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orthosupernet", description="Train and inspect budget-constrained supernets."
    )
    parser.add_argument("--log-level", help="Overrides ORTHOSUPERNET_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    command = commands.add_parser("train", help="Run both training steps")
    command.add_argument("--config", type=Path, required=True)
    command.add_argument("--out", type=Path, required=True, help="Output directory")
    command.add_argument("--seed", type=int, help="Overrides train.seed")
    command.add_argument("--threads", type=int, help="Corpus generation threads")
    command.add_argument("--resume", type=Path, help="Checkpoint to continue from")
    command.set_defaults(handler=cmd_train)

    command = commands.add_parser("eval", help="Label error rate of the supernet or a subnet")
    command.add_argument("--checkpoint", type=Path, required=True)
    command.add_argument("--corpus", type=Path, help="Corpus cache; the dev split is generated when omitted")
    command.add_argument("--subnet", default="super", help="Subnet id or 'super'")
    command.add_argument("--out", type=Path, help="Defaults to eval.json next to the checkpoint")
    command.add_argument("--force", action="store_true", help="Ignore a corpus hash mismatch")
    command.set_defaults(handler=cmd_eval)

    command = commands.add_parser("report", help="Remaining ratio per block and module kind")
    command.add_argument("--checkpoint", type=Path, required=True)
    command.add_argument("--out", type=Path)
    command.set_defaults(handler=cmd_report)

    command = commands.add_parser("verify", help="Check budgets, nesting and pruning")
    command.add_argument("--checkpoint", type=Path, required=True)
    command.set_defaults(handler=cmd_verify)

    command = commands.add_parser("cost", help="Per-group parameter and FLOPs costs as CSV")
    command.add_argument("--config", type=Path, required=True)
    command.add_argument("--out", type=Path, help="Defaults to standard output")
    command.set_defaults(handler=cmd_cost)

    command = commands.add_parser("masks", help="Write masks.json from a checkpoint")
    command.add_argument("--checkpoint", type=Path, required=True)
    command.add_argument("--out", type=Path)
    command.set_defaults(handler=cmd_masks)

    command = commands.add_parser("gradcheck", help="Finite-difference gradient suite")
    command.add_argument("--instances", type=int, default=20)
    command.add_argument("--seed", type=int, default=0)
    command.set_defaults(handler=cmd_gradcheck)

    command = commands.add_parser("oracle", help="Exact oracle suite")
    command.add_argument("--seed", type=int, default=0)
    command.set_defaults(handler=cmd_oracle)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    settings = Settings()
    logging.basicConfig(
        level=(args.log_level or settings.LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args, settings)
    except OrthoSupernetError as error:
        logger.error("%s", error)
        return error.exit_code
