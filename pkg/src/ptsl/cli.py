"""Command-line interface: run, report, count-params, gradcheck, oracle.

Exit codes: 0 on success, 2 for configuration errors, 3 when training
aborted on a non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, InfeasibleError, PtslError, TrainingDiverged

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _add_common(parser):
    parser.add_argument("--config", help="path to a flat key = value config file")
    parser.add_argument("--preset", help="preset name (overrides the config's preset)")
    parser.add_argument("--seeds", help="comma-separated seed list, e.g. 0,1,2,3")
    parser.add_argument("--steps", type=int, help="steps per task")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--suite", help="environment suite id")
    parser.add_argument("--workers", type=int, help="parallel seed workers (0 = auto)")


def _resolve_config(args):
    from . import harness

    overrides = {}
    if args.preset:
        overrides["preset"] = args.preset
    if args.seeds:
        overrides["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
    if args.steps is not None:
        overrides["steps_per_task"] = args.steps
    if args.out:
        overrides["out_dir"] = args.out
    if args.suite:
        overrides["suite"] = args.suite
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.config:
        return harness.load_config(args.config).with_overrides(**overrides)
    if "preset" not in overrides:
        raise ConfigError("either --config or --preset is required")
    preset = overrides.pop("preset")
    return harness.default_config(preset, **overrides)


def cmd_run(args):
    from . import harness

    config = _resolve_config(args)
    record = harness.run(config)
    print(f"run {record.config_hash} ({record.preset}) -> {record.directory}")
    diverged = False
    for arm in record.arms:
        for seed_rec in arm["seeds"]:
            if seed_rec["status"] != "complete":
                diverged = diverged or seed_rec["status"] == "diverged"
                print(f"  incomplete: {arm['name']} seed {seed_rec['seed']} "
                      f"({seed_rec['status']})")
    if record.complete:
        summary = harness.report(record)
        print(summary.to_text(), end="")
        return EXIT_OK
    return EXIT_DIVERGED if diverged else EXIT_OK


def cmd_report(args):
    from . import harness

    if args.dir:
        record = harness.RunRecord.load(args.dir)
    else:
        config = _resolve_config(args)
        import os

        record = harness.RunRecord.load(
            os.path.join(config.out_dir, harness.config_hash(config))
        )
    summary = harness.report(record, threshold=args.threshold)
    print(summary.to_text(), end="")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(summary.to_csv_text())
        print(f"wrote {args.csv}")
    return EXIT_OK


def cmd_count_params(args):
    from . import harness

    config = _resolve_config(args)
    arms = harness.build_arms(config)
    print(f"preset {config.preset} on {config.suite}")
    for arm in arms:
        target = f" target={arm.budget_target}" if arm.budget_target else ""
        matched = " (matched)" if arm.matched else ""
        print(f"  {arm.name:<24} params={arm.param_count}{target}{matched}")
        h = arm.hyper
        print(f"    backbone={h.backbone} hidden_dim={h.hidden_dim} task_dim={h.task_dim} "
              f"num_hidden={h.num_hidden} projection={h.projection_mode} "
              f"residual={h.residual_mode} encoder={h.encoder.kind}")
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import run_gradient_suite

    results, elapsed = run_gradient_suite(step=args.step, tol=args.tol)
    failures = 0
    for name, err, ok in results:
        print(f"{name:<45} max_rel_err={err:.3e} {'ok' if ok else 'FAIL'}")
        failures += 0 if ok else 1
    print(f"{len(results)} checks in {elapsed:.1f}s, {failures} failures")
    return EXIT_OK if failures == 0 else 1


def cmd_oracle(args):
    from .oracles import run_all_oracles

    results = run_all_oracles()
    failures = 0
    for result in results:
        status = "ok" if result["passed"] else "FAIL"
        detail = {k: v for k, v in result.items() if k not in ("name", "passed")}
        print(f"{result['name']:<35} {status} {json.dumps(detail)}")
        failures += 0 if result["passed"] else 1
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2)
        print(f"wrote {args.out}")
    return EXIT_OK if failures == 0 else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ptsl",
        description="Multi-task SAC experiments with projected task-specific layers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a preset experiment")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_report = sub.add_parser("report", help="summarize a finished run")
    _add_common(p_report)
    p_report.add_argument("--dir", help="run directory (out_dir/<hash>)")
    p_report.add_argument("--threshold", type=float, default=0.5)
    p_report.add_argument("--csv", help="also write the summary table as CSV")
    p_report.set_defaults(func=cmd_report)

    p_count = sub.add_parser("count-params", help="print per-arm parameter budgets")
    _add_common(p_count)
    p_count.set_defaults(func=cmd_count_params)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p_grad.add_argument("--step", type=float, default=1e-5)
    p_grad.add_argument("--tol", type=float, default=1e-4)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_oracle = sub.add_parser("oracle", help="run the independent verification oracles")
    p_oracle.add_argument("--out", help="write oracle results to a JSON file")
    p_oracle.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InfeasibleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except PtslError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
