"""Command line entry point: run experiments, re-score traces, export
coverage, emit reports, and serve the operator gateway.

Exit codes: 0 success, 1 configuration error, 2 run failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from agentloop import harness
from agentloop.gateway import GatewayConfig, serve
from agentloop.llm import model_from_spec
from agentloop.session import load_trace
from agentloop.simworld import ScenarioError, load_scenario
from agentloop.tasks import builtin_tasks, with_variant


class ConfigError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agentloop")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a task repeatedly and record results")
    run.add_argument("--task", required=True, help="task id (e.g. delivery)")
    run.add_argument("--agent", required=True, choices=harness.AGENT_KINDS)
    run.add_argument("--reps", type=int, default=1, metavar="N")
    run.add_argument(
        "--model",
        required=True,
        help="scripted:<path>, scripted:builtin:<name>, or http (env-configured)",
    )
    run.add_argument("--out", required=True, help="output directory for records and traces")
    run.add_argument(
        "--variant",
        default=None,
        choices=["zero_shot", "one_shot", "cot", "one_shot_cot"],
        help="prompt technique (default: the task's own)",
    )

    score = sub.add_parser("score", help="re-score a persisted trace")
    score.add_argument("--trace", required=True)
    score.add_argument("--rubric", required=True, help="task id whose rubric to apply")

    coverage = sub.add_parser("coverage", help="export the coverage grid for a UAV trace")
    coverage.add_argument("--trace", required=True)
    coverage.add_argument("--scenario", required=True)
    coverage.add_argument("--out", required=True)
    coverage.add_argument("--cell-size", type=float, default=1.0)

    report = sub.add_parser("report", help="aggregate recorded runs into a table")
    report.add_argument("--in", dest="in_dir", required=True, help="directory with records.jsonl")
    report.add_argument("--format", required=True, choices=["csv", "markdown"])
    report.add_argument("--out", default=None, help="output file (default: report.<ext> in --in)")
    report.add_argument(
        "--prompt-table",
        action="store_true",
        help="emit the prompt-technique table (room/city groups) instead",
    )

    gw = sub.add_parser("serve", help="start the operator gateway")
    gw.add_argument("--port", type=int, default=8765)
    gw.add_argument("--host", default="127.0.0.1")
    gw.add_argument("--static", default=None, help="directory with the console bundle")
    gw.add_argument("--snapshot-hz", type=float, default=2.0)

    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    tasks = builtin_tasks()
    task = tasks.get(args.task)
    if task is None:
        raise ConfigError(f"unknown task {args.task!r} (have: {', '.join(sorted(tasks))})")
    if args.reps < 1:
        raise ConfigError("--reps must be >= 1")
    if args.variant:
        task = with_variant(task, args.variant)
    try:
        model_from_spec(args.model)  # validate the spec before any run
    except (ValueError, OSError) as exc:
        raise ConfigError(f"bad --model: {exc}") from exc

    records, row = harness.run_experiment(
        task,
        args.agent,
        args.reps,
        model_factory=lambda: model_from_spec(args.model),
        out_dir=args.out,
    )
    for record in records:
        print(
            f"rep {record.rep}: score {record.score:g}/{record.max_points} "
            f"status {record.status} tokens {record.total_tokens} "
            f"time {record.time_s:.3f}s"
        )
    success_time = (
        f"{row.mean_success_time:.3f}" if row.mean_success_time is not None else harness.UNDEFINED_TIME
    )
    print(
        f"{row.task_id}/{row.agent_kind}: mean score {row.mean_score:.3f}, "
        f"mean tokens {row.mean_tokens:.0f}, mean time {row.mean_time:.3f}s, "
        f"success time {success_time}, perfect rate {row.perfect_rate:.2f}%"
    )
    return 0


def _cmd_score(args: argparse.Namespace) -> int:
    tasks = builtin_tasks()
    task = tasks.get(args.rubric)
    if task is None:
        raise ConfigError(f"unknown rubric {args.rubric!r} (have: {', '.join(sorted(tasks))})")
    trace = load_trace(args.trace)
    initial = load_scenario(task.scenario_path)
    final = harness.replay_world(task.scenario_path, trace)
    score, breakdown = harness.score_run(task.rubric, initial, trace, final)
    print(json.dumps({"score": score, "max_points": task.rubric.max_points,
                      "breakdown": breakdown}, indent=2))
    return 0


def _cmd_coverage(args: argparse.Namespace) -> int:
    trace = load_trace(args.trace)
    csv_path, json_path = harness.export_coverage(
        trace, args.scenario, args.out, cell_size=args.cell_size
    )
    print(f"wrote {csv_path} and {json_path}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    records_path = Path(args.in_dir) / "records.jsonl"
    if not records_path.is_file():
        raise ConfigError(f"no records.jsonl in {args.in_dir!r}")
    records = harness.load_records(records_path)
    ext = "md" if args.format == "markdown" else "csv"
    out = Path(args.out) if args.out else Path(args.in_dir) / f"report.{ext}"
    if args.prompt_table:
        path = harness.emit_prompt_report(records, args.format, out)
    else:
        path = harness.emit_report(harness.aggregate(records), args.format, out)
    print(f"wrote {path}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    config = GatewayConfig(
        host=args.host,
        port=args.port,
        snapshot_hz=args.snapshot_hz,
        static_dir=args.static,
    )
    server = serve(config)
    print(f"gateway listening on {server.url}", flush=True)
    if args.static:
        print(
            f"console served from {args.static} at http://{args.host}:{server.port}/",
            flush=True,
        )
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.stop()
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "run": _cmd_run,
        "score": _cmd_score,
        "coverage": _cmd_coverage,
        "report": _cmd_report,
        "serve": _cmd_serve,
    }[args.command]
    try:
        return handler(args)
    except (ConfigError, ScenarioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - run failures must map to exit 2
        print(f"run failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
