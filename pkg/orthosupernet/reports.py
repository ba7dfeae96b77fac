import csv
from pathlib import Path
from typing import IO, Sequence

from pydantic import BaseModel

from orthosupernet.costs import CostVector, selected_cost
from orthosupernet.encoder.groups import KIND_ORDER, GroupRegistry
from orthosupernet.orthomask import SubnetPlan
from orthosupernet.schemas import CostRow, MaskRecord, MasksReport, RatioRow


# Leading line of every CSV artifact
HASH_COMMENT = "# config_hash="


def masks_report(config_hash: str, plans: Sequence[SubnetPlan], cost: CostVector) -> MasksReport:
    records = [
        MaskRecord(
            subnet=plan.subnet,
            tau=plan.tau,
            criterion=cost.criterion,
            k=plan.k,
            group_ids=plan.mask.selected(),
            verify_cost=selected_cost(plan.mask, cost),
            split=plan.split,
        )
        for plan in plans
        if plan.mask is not None
    ]
    return MasksReport(config_hash=config_hash, masks=records)


def remaining_ratios(registry: GroupRegistry, plans: Sequence[SubnetPlan]) -> list[RatioRow]:
    """Fraction of every block's groups of each kind kept by each subnet."""
    blocks = sorted({group.block for group in registry.groups})
    rows = []
    for plan in plans:
        values = plan.mask.values
        for block in blocks:
            for kind in KIND_ORDER:
                ids = registry.module_groups(block, kind)
                rows.append(
                    RatioRow(
                        subnet=plan.subnet,
                        block=block,
                        kind=kind.value,
                        ratio=float(values[ids].sum()) / len(ids),
                    )
                )
    return rows


def write_json(path: Path, report: BaseModel) -> None:
    Path(path).write_text(report.model_dump_json(indent=2) + "\n")


def write_hash_line(handle: IO[str], config_hash: str) -> None:
    handle.write(f"{HASH_COMMENT}{config_hash}\n")


def read_csv(path: Path) -> tuple[str | None, list[dict[str, str]]]:
    """Rows of a CSV artifact and the configuration hash from its leading
    comment line, ``None`` when the file has none."""
    with open(path, newline="") as handle:
        first = handle.readline()
        config_hash = None
        if first.startswith(HASH_COMMENT):
            config_hash = first[len(HASH_COMMENT) :].strip()
        else:
            handle.seek(0)
        return config_hash, list(csv.DictReader(handle))


def write_rows(
    handle: IO[str],
    rows: Sequence[BaseModel],
    model: type[BaseModel],
    config_hash: str | None = None,
) -> None:
    if config_hash is not None:
        write_hash_line(handle, config_hash)
    writer = csv.DictWriter(handle, fieldnames=list(model.model_fields), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row.model_dump())


def write_cost_table(handle: IO[str], rows: Sequence[CostRow], config_hash: str | None = None) -> None:
    write_rows(handle, rows, CostRow, config_hash)


def write_remaining_ratio(path: Path, rows: Sequence[RatioRow], config_hash: str) -> None:
    with open(path, "w", newline="") as handle:
        write_rows(handle, rows, RatioRow, config_hash)
