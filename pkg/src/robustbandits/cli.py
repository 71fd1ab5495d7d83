"""Command line front end for the benchmark harness."""

from __future__ import annotations

import argparse
import sys

from robustbandits import bench


def _cmd_run(args) -> int:
    try:
        config = bench.load_config(args.config)
    except (bench.ConfigError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    def progress(status, cid):
        if not args.quiet:
            print(f"[{status}] {cid}")

    result = bench.run_matrix(config, output_dir=args.output_dir, progress=progress)
    print(f"cells: {len(result.rows) + len(result.failures)}  failures: {len(result.failures)}")
    print(f"summary: {result.summary_path}")
    if result.failures:
        for row in result.failures:
            print(f"  FAIL {row['alg']}/{row['env']} level={row['level']} seed={row['seed']}: {row['error']}", file=sys.stderr)
        return 1
    return 0


def _cmd_fit(args) -> int:
    try:
        rows = bench.read_summary(args.summary)
        keys = tuple(k.strip() for k in args.group.split(",") if k.strip())
        fits = bench.fit_scaling(rows, group_keys=keys)
    except (bench.FitError, OSError, KeyError, ValueError) as e:
        print(f"fit error: {e}", file=sys.stderr)
        return 1
    print("group\tslope\tintercept\tmax_residual")
    for key, fit in fits.items():
        label = "/".join(str(k) for k in key)
        print(f"{label}\t{fit.slope!r}\t{fit.intercept!r}\t{fit.max_residual!r}")
    return 0


def _cmd_replay(args) -> int:
    try:
        record, original = bench.replay_record(args.record)
    except (OSError, KeyError, ValueError) as e:
        print(f"replay error: {e}", file=sys.stderr)
        return 1
    text = record.to_csv()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    print(f"rounds: {record.horizon}  final_regret: {record.final_regret!r}")
    if original is None:
        print("no stored trajectory next to the replay file; nothing to compare")
        return 0
    if text == original:
        print("replay matches the stored trajectory byte for byte")
        return 0
    print("replay DIVERGES from the stored trajectory", file=sys.stderr)
    return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bench", description="corruption-robust bandit benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment matrix")
    p_run.add_argument("config", help="path to a TOML experiment file")
    p_run.add_argument("--output-dir", default=None, help="override the configured output directory")
    p_run.add_argument("--quiet", action="store_true", help="suppress per-cell progress lines")
    p_run.set_defaults(func=_cmd_run)

    p_fit = sub.add_parser("fit", help="fit regret-vs-level slopes from a summary.csv")
    p_fit.add_argument("summary", help="path to summary.csv")
    p_fit.add_argument("--group", default="alg,env,d", help="comma separated grouping columns")
    p_fit.set_defaults(func=_cmd_fit)

    p_rep = sub.add_parser("replay", help="re-run a stored cell and compare trajectories")
    p_rep.add_argument("record", help="path to a records/<cell>.json replay file")
    p_rep.add_argument("--out", default=None, help="write the replayed trajectory CSV here")
    p_rep.set_defaults(func=_cmd_replay)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
