"""Command-line driver.

    hdfed run <config.toml>
    hdfed sweep <config.toml> --axis epsilon --values 1,0.1,0.01
    hdfed noise-table <config.toml> [--ledger run/ledger.csv]
    hdfed partition-dump <config.toml>

Exit status: 0 success, 2 bad configuration, 3 data load failure, 4 runtime
invariant violation. Failures print one line ``hdfed: error kind=<kind>: <msg>``
on stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import accountant as acc
from . import experiments as ex
from .errors import HDFedError, InvariantError


def _output_dir(cfg: ex.ExperimentConfig, fallback: str) -> Path:
    return Path(cfg.output_dir or fallback)


def cmd_run(args) -> int:
    cfg = ex.ExperimentConfig.from_file(args.config)
    if cfg.output_dir is None:
        cfg = cfg.replace(output_dir="runs/" + Path(args.config).stem)
    results, summary = ex.run_replicates(cfg)
    for r in results:
        print(f"seed={r.config.seed} final_accuracy={r.final_accuracy:.4f} "
              f"cumulative_variance={r.state.ledger.cumulative_variance:.6g}"
              + ("" if r.state.private else " NON-PRIVATE (noise disabled)"))
    if len(results) > 1:
        print(f"mean_final_accuracy={summary.mean_accuracy:.4f} std={summary.std_accuracy:.4f}")
    print(f"wrote {cfg.output_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = ex.ExperimentConfig.from_file(args.config)
    if cfg.output_dir is None:
        cfg = cfg.replace(output_dir=f"runs/{Path(args.config).stem}-{args.axis}")
    values = [v for v in args.values.split(",") if v.strip()]
    for s in ex.run_sweep(cfg, args.axis, values):
        print(f"{args.axis}={s.value!r} final_accuracy={s.mean_accuracy:.4f} "
              f"std={s.std_accuracy:.4f} cumulative_variance={s.final_cumulative_variance:.6g}")
    print(f"wrote {Path(cfg.output_dir) / 'summary.csv'}")
    return 0


def cmd_noise_table(args) -> int:
    cfg = ex.ExperimentConfig.from_file(args.config)
    params = ex.noise_table_params(cfg)
    rows = ex.noise_table(params)
    text = ex.noise_table_csv(rows)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if args.ledger:
        problems = ex.cross_validate_ledger(acc.read_ledger(args.ledger), rows, params)
        if problems:
            raise InvariantError(f"ledger {args.ledger} failed cross-validation: {problems[0]}"
                                 + (f" (+{len(problems) - 1} more)" if len(problems) > 1 else ""))
        print(f"ledger {args.ledger}: {len(rows)} entries match the analytic schedule", file=sys.stderr)
    return 0


def cmd_partition_dump(args) -> int:
    cfg = ex.ExperimentConfig.from_file(args.config)
    plan = ex.partition_dump(cfg)
    out = Path(args.output) if args.output else _output_dir(cfg, "runs/" + Path(args.config).stem) / "partition.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    plan.write(out)
    print(f"wrote {out} ({plan.clients} clients, {plan.samples_per_client} samples per client)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdfed", description="Private HD classifiers trained over a client ring.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment (or its seed replicates)")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="repeat an experiment over values of one parameter")
    p.add_argument("config")
    p.add_argument("--axis", required=True, help=", ".join(ex.SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("noise-table", help="analytic noise schedule, optionally checked against a run ledger")
    p.add_argument("config")
    p.add_argument("--ledger", help="ledger.csv of a run to cross-validate")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_noise_table)

    p = sub.add_parser("partition-dump", help="write the client partition as client,sample_index rows")
    p.add_argument("config")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_partition_dump)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except HDFedError as exc:
        msg = " ".join(str(exc).split())
        print(f"hdfed: error kind={exc.kind}: {msg}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
