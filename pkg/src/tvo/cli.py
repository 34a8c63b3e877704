"""Command-line entry point: verify, schedule-study, train, integrand."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness, snis


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with ExperimentConfig fields")
    parser.add_argument("--model-spec", dest="model_spec", help="path to a model JSON document")
    parser.add_argument("--objective", choices=("tvo", "iwae", "elbo"))
    parser.add_argument(
        "--schedule-strategy",
        dest="schedule_strategy",
        choices=("linear", "log_uniform", "moments", "coarse_grained"),
    )
    parser.add_argument("--K", type=int)
    parser.add_argument("--S", type=int)
    parser.add_argument("--beta1", type=float)
    parser.add_argument("--J", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--refresh-every", dest="refresh_every", type=int)
    parser.add_argument("--output-dir", dest="output_dir")


def _build_config(args: argparse.Namespace) -> harness.ExperimentConfig:
    fields = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            fields.update(json.load(fh))
    for name in harness.ExperimentConfig.__dataclass_fields__:
        value = getattr(args, name, None)
        if value is not None:
            fields[name] = value
    return harness.ExperimentConfig(**fields)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tvo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("verify", "schedule-study", "train", "integrand"):
        p = sub.add_parser(name)
        _add_config_flags(p)
        if name == "integrand":
            p.add_argument("--grid-csv", help="log-weight grid CSV instead of a model spec")
    args = parser.parse_args(argv)
    config = _build_config(args)
    os.makedirs(config.output_dir, exist_ok=True)

    if args.command == "verify":
        report = harness.run_verify(config)
        out = os.path.join(config.output_dir, "report.json")
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
        for check in report["checks"]:
            status = "PASS" if check["passed"] else "FAIL"
            print(f"{status}  {check['name']}: residual={check['residual']:.3e} tol={check['tolerance']:.3e}")
        print(("all checks passed" if report["passed"] else "FAILURES detected"))
        return 0 if report["passed"] else 1

    if args.command == "schedule-study":
        rows = harness.run_schedule_study(config)
        harness.write_study_csv(rows, os.path.join(config.output_dir, "study.csv"))
        for row in rows:
            print(f"{row['strategy']:16s} K={row['K']:<3d} gap_lower={row['gap_lower']:.6g} gap_upper={row['gap_upper']:.6g}")
        return 0

    if args.command == "train":
        log, _ = harness.train(config)
        log.write_csv(os.path.join(config.output_dir, "trainlog.csv"))
        first, last = log.rows[0], log.rows[-1]
        print(f"epochs={len(log.rows)} initial_kl={log.initial_kl:.6g} final_kl={log.final_kl:.6g}")
        print(f"tvo_lower: {first.tvo_lower:.6g} -> {last.tvo_lower:.6g} (log_px {last.log_px:.6g})")
        print(f"schedule: {json.dumps(list(first.schedule))} -> {json.dumps(list(last.schedule))}")
        return 0

    if args.command == "integrand":
        grid = None
        if getattr(args, "grid_csv", None):
            grid = snis.LogWeightGrid.from_csv(args.grid_csv)
        rows = harness.emit_integrand(config, grid=grid)
        harness.write_integrand_csv(rows, os.path.join(config.output_dir, "integrand.csv"))
        print(f"wrote {len(rows)} rows")
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
