"""Post-processing: comparison tables, learning curves, budget distribution.

CSV is the output contract; floats are written with 17 significant digits
so the files parse back to the exact same numbers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .config import TopologySpec
from .ledger import transfers_per_cloud_round


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _as_dict(report) -> dict:
    return report.to_json_dict() if hasattr(report, "to_json_dict") else report


@dataclass
class ComparisonTable:
    mode_rows: list[dict]
    delta_rows: list[dict]
    curve_rows: list[dict]


def compare(reports: list) -> ComparisonTable:
    """Per-mode best metrics, pairwise accuracy deltas, and curve rows.

    All reports must share one budget. With several reports per mode (seed
    sweeps), the per-mode row keeps the best checkpoint across them.
    """
    dicts = [_as_dict(r) for r in reports]
    if not dicts:
        raise ValueError("at least one report is required")
    budgets = {d["budget_mb"] for d in dicts}
    if len(budgets) != 1:
        raise ValueError(f"reports mix budgets: {sorted(budgets)}")

    by_mode: dict[str, list[dict]] = {}
    for d in dicts:
        by_mode.setdefault(d["mode"], []).append(d)

    mode_rows = []
    best_acc: dict[str, float] = {}
    for mode in sorted(by_mode):
        group = by_mode[mode]
        bests = [g["best"] for g in group if g["best"] is not None]
        if not bests:
            raise ValueError(f"mode {mode} has no evaluated rounds")
        top = max(bests, key=lambda b: (b["accuracy"], -b["loss"], -b["round"]))
        best_acc[mode] = top["accuracy"]
        mode_rows.append({
            "mode": mode,
            "runs": len(group),
            "best_accuracy": top["accuracy"],
            "best_loss": top["loss"],
            "best_round": top["round"],
            "completed_rounds": max(g["completed_rounds"] for g in group),
            "consumed_mb": max(g["consumed_mb"] for g in group),
        })

    delta_rows = []
    modes = sorted(by_mode)
    for a in modes:
        for b in modes:
            if a != b:
                delta_rows.append({
                    "mode": a,
                    "versus": b,
                    "accuracy_delta_pp": (best_acc[a] - best_acc[b]) * 100.0,
                })

    curve_rows = []
    for d in dicts:
        for rec in d["metrics"]:
            curve_rows.append({
                "mode": d["mode"],
                "seed": d["seed"],
                "round": rec["round"],
                "consumed_mb": rec["consumed_mb"],
                "loss": rec["loss"],
                "accuracy": rec["accuracy"],
            })
    return ComparisonTable(mode_rows, delta_rows, curve_rows)


def resource_distribution(plans: list, budget_mb: float, sample_size_mb: float,
                          model_size_mb: float, topology: TopologySpec) -> list[dict]:
    """Budget share of each stage for every hierarchical plan.

    Stage I is the pretraining data upload; within the per-round model
    traffic, vehicle-edge pairs count as stage II and edge-cloud pairs as
    stage III. Shares sum to at most 1 (release overhead and slack are not
    attributed to a stage). Single-hop plans have no edge tier and do not
    belong in this table.
    """
    rows = []
    total_vehicles = topology.total_vehicles
    for plan in plans:
        p = plan.to_dict() if hasattr(plan, "to_dict") else plan
        t = p["cloud_rounds"]
        ic = p["cloud_interval"]
        stage1 = p["pretrain_batch"] * sample_size_mb / budget_mb
        stage2 = 2.0 * model_size_mb * ic * total_vehicles * t / budget_mb
        stage3 = 2.0 * model_size_mb * topology.num_towns * t / budget_mb
        rows.append({
            "edge_interval": p["edge_interval"],
            "cloud_interval": ic,
            "cloud_rounds": t,
            "pretrain_batch": p["pretrain_batch"],
            "stage1_share": stage1,
            "stage2_share": stage2,
            "stage3_share": stage3,
        })
    return rows


def _write_csv(path: Path, rows: list[dict], fieldnames: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def write_metrics_csv(path: Path, report) -> None:
    d = _as_dict(report)
    _write_csv(Path(path), d["metrics"], ["round", "consumed_mb", "loss", "accuracy"])


def write_events_csv(path: Path, report) -> None:
    d = _as_dict(report)
    _write_csv(Path(path), d["events"],
               ["index", "stage", "round", "kind", "link", "size_mb", "consumed_after_mb"])


def write_comparison_outputs(outdir: Path, table: ComparisonTable) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    mode_cols = ["mode", "runs", "best_accuracy", "best_loss", "best_round",
                 "completed_rounds", "consumed_mb"]
    delta_cols = ["mode", "versus", "accuracy_delta_pp"]
    rows = [dict(row, kind="mode") for row in table.mode_rows]
    rows += [dict({c: "" for c in mode_cols}, kind="delta", **row)
             for row in table.delta_rows]
    _write_csv(outdir / "comparison.csv", rows,
               ["kind"] + mode_cols + ["versus", "accuracy_delta_pp"])
    curve_cols = ["mode", "seed", "round", "consumed_mb", "loss", "accuracy"]
    _write_csv(outdir / "curves_by_round.csv", table.curve_rows, curve_cols)
    by_mb = sorted(table.curve_rows, key=lambda r: (r["mode"], r["seed"], r["consumed_mb"]))
    _write_csv(outdir / "curves_by_mb.csv", by_mb,
               ["mode", "seed", "consumed_mb", "round", "loss", "accuracy"])


def write_distribution_csv(outdir: Path, rows: list[dict]) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_csv(outdir / "distribution.csv", rows,
               ["edge_interval", "cloud_interval", "cloud_rounds", "pretrain_batch",
                "stage1_share", "stage2_share", "stage3_share"])
