"""Command-line interface: optimize, simulate, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .allocator import InfeasibleAllocation, brute_force_oracle, inputs_from_config, solve_allocation
from .config import ConfigError, TopologySpec, parse_config
from .federation import run_mode
from .report import (compare, resource_distribution, write_comparison_outputs,
                     write_distribution_csv, write_events_csv, write_metrics_csv)


def _cmd_optimize(args) -> int:
    config = parse_config(args.config)
    inputs = inputs_from_config(config)
    solver = brute_force_oracle if args.oracle else solve_allocation
    try:
        plan = solver(inputs)
    except InfeasibleAllocation as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(plan.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_simulate(args) -> int:
    config = parse_config(args.config)
    report = run_mode(config, args.mode)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.json").write_text(report.to_json(), encoding="utf-8")
    write_metrics_csv(outdir / "metrics.csv", report)
    write_events_csv(outdir / "events.csv", report)
    if report.best_params is not None:
        (outdir / "best_model.bin").write_bytes(report.best_params.to_bytes())
    print(f"{report.mode}: {report.completed_rounds} cloud rounds, "
          f"{report.ledger.consumed_mb:.17g}/{config.budget_mb:.17g} MB consumed, "
          f"stop={report.stop_reason}")
    if report.best is not None:
        print(f"best: accuracy={report.best.accuracy:.4f} loss={report.best.loss:.4f} "
              f"at round {report.best.round}")
    return 0


def _cmd_report(args) -> int:
    reports = []
    for indir in args.indirs:
        path = Path(indir) / "report.json"
        if not path.exists():
            print(f"missing {path}", file=sys.stderr)
            return 1
        reports.append(json.loads(path.read_text(encoding="utf-8")))
    outdir = Path(args.out)
    table = compare(reports)
    write_comparison_outputs(outdir, table)

    first = reports[0]
    topology = TopologySpec(
        num_towns=first["topology"]["num_towns"],
        vehicles_per_town=tuple(first["topology"]["vehicles_per_town"]),
        train_sizes=tuple(first["topology"]["train_sizes"]),
        test_sizes=tuple(first["topology"]["test_sizes"]),
    )
    # The stage split only applies to runs with an edge tier.
    hier_plans = [r["plan"] for r in reports if r["mode"] != "SFL"]
    rows = resource_distribution(hier_plans, first["budget_mb"],
                                 first["sample_size_mb"], first["model_size_mb"],
                                 topology)
    write_distribution_csv(outdir, rows)
    print(f"wrote comparison.csv, curves_by_round.csv, curves_by_mb.csv, "
          f"distribution.csv to {outdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crchfl",
        description="Budget-constrained hierarchical federated learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_opt = sub.add_parser("optimize", help="solve the budget allocation and print the plan")
    p_opt.add_argument("--config", required=True, help="path to the run config (INI)")
    p_opt.add_argument("--oracle", action="store_true",
                       help="use the exhaustive enumeration instead of the solver")
    p_opt.set_defaults(func=_cmd_optimize)

    p_sim = sub.add_parser("simulate", help="run one training mode under the budget")
    p_sim.add_argument("--config", required=True, help="path to the run config (INI)")
    p_sim.add_argument("--mode", required=True, choices=["crchfl", "hfl", "sfl"])
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.set_defaults(func=_cmd_simulate)

    p_rep = sub.add_parser("report", help="aggregate simulate outputs into CSV tables")
    p_rep.add_argument("--in", dest="indirs", required=True, nargs="+",
                       help="directories containing report.json files")
    p_rep.add_argument("--out", required=True, help="output directory")
    p_rep.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
