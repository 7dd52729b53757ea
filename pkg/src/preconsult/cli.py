"""Command-line entry points: simulate, compare-strategies, evaluate, serve."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import PreconsultError
from .evaluation import aggregate_reports, evaluate_session, load_rubric
from .gateway import BackendConfig, LlmGateway
from .orchestrator import SessionConfig, build_engine
from .records import record_from_dict, transcript_from_dict
from .simulation import (
    compare_strategies,
    default_dataset_path,
    format_comparison_table,
    load_dataset,
    run_batch,
    write_curve_csv,
    write_report_json,
)
from .triage import format_triage_table


def _load_backend(path: str) -> BackendConfig:
    return BackendConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _add_backend_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--backend",
        required=True,
        help="path to a backend config JSON (kind, base_url or script_dir, ...)",
    )
    parser.add_argument(
        "--template-dir", default=None, help="override the packaged prompt templates"
    )


def _add_session_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--max-rounds", type=int, default=30)
    parser.add_argument("--threshold", type=float, default=0.85)
    parser.add_argument("--triage-step-cap", type=int, default=4)
    parser.add_argument("--repair-retries", type=int, default=1)


def _session_config(args, strategy: str | None = None) -> SessionConfig:
    return SessionConfig(
        max_rounds=args.max_rounds,
        threshold=args.threshold,
        controller_strategy=strategy or getattr(args, "strategy", "agent_driven"),
        triage_step_cap=args.triage_step_cap,
        repair_retries=args.repair_retries,
    )


def _print_batch(report) -> None:
    print(
        f"cases={report.n_cases} completed={report.completed} "
        f"failures={report.failures} avg_rounds={report.avg_rounds:.2f}"
    )
    if report.errors:
        for case_id, message in report.errors.items():
            print(f"  error {case_id}: {message}")
    if report.triage_eval is not None:
        print(format_triage_table(report.triage_eval))
    if report.score_summary is not None:
        for dim in report.score_summary.dimensions:
            print(f"  {dim.code}: mean={dim.mean:.2f} stdev={dim.stdev:.2f}")
        print(f"  overall mean: {report.score_summary.overall_mean:.2f}")


def cmd_simulate(args) -> int:
    engine = build_engine(
        _load_backend(args.backend),
        _session_config(args),
        template_dir=args.template_dir,
    )
    dataset = load_dataset(args.dataset)
    report = run_batch(
        engine,
        dataset,
        parallelism=args.parallelism,
        evaluate=args.evaluate,
        template_dir=args.template_dir,
    )
    _print_batch(report)
    if args.out:
        write_report_json(report, args.out)
        print(f"report written to {args.out}")
    if args.curve_csv and report.completion_curve:
        write_curve_csv({"completion": report.completion_curve}, args.curve_csv)
        print(f"completion curve written to {args.curve_csv}")
    return 0


def cmd_compare(args) -> int:
    backend_config = _load_backend(args.backend)
    comparison = compare_strategies(
        lambda config: build_engine(
            backend_config, config, template_dir=args.template_dir
        ),
        load_dataset(args.dataset),
        _session_config(args),
        parallelism=args.parallelism,
        template_dir=args.template_dir,
    )
    print(format_comparison_table(comparison))
    if args.out:
        write_report_json(comparison, args.out)
        print(f"comparison written to {args.out}")
    if args.curve_csv:
        curves = {
            name: report.completion_curve
            for name, report in comparison.reports.items()
            if report.completion_curve
        }
        if curves:
            write_curve_csv(curves, args.curve_csv)
            print(f"curves written to {args.curve_csv}")
    return 0


def cmd_evaluate(args) -> int:
    gateway = LlmGateway.from_config(_load_backend(args.backend))
    rubric = load_rubric()
    references = {ehr.case_id: ehr for ehr in load_dataset(args.dataset)}
    report_data = json.loads(Path(args.report).read_text(encoding="utf-8"))
    reports = []
    skipped = []
    for summary in report_data["summaries"]:
        outcome = summary.get("outcome")
        case_id = summary["case_id"]
        if outcome is None:
            skipped.append((case_id, "no outcome"))
            continue
        reference = references.get(case_id)
        if reference is None:
            skipped.append((case_id, "not in dataset"))
            continue
        reports.append(
            evaluate_session(
                gateway,
                session_id=case_id,
                transcript=transcript_from_dict(outcome["transcript"]),
                record=record_from_dict(outcome["record"]),
                reference=reference,
                rubric=rubric,
                template_dir=args.template_dir,
            )
        )
    for case_id, why in skipped:
        print(f"skipped {case_id}: {why}")
    if not reports:
        print("nothing to evaluate", file=sys.stderr)
        return 1
    summary = aggregate_reports(reports)
    for dim in summary.dimensions:
        print(f"{dim.code}: mean={dim.mean:.2f} stdev={dim.stdev:.2f} n={dim.count}")
    print(f"overall mean: {summary.overall_mean:.2f}")
    if args.out:
        payload = {
            "summary": summary.to_dict(),
            "reports": [r.to_dict() for r in reports],
        }
        Path(args.out).write_text(
            json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        print(f"evaluation written to {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .service import FileStore, create_app, serve

    engine = build_engine(
        _load_backend(args.backend),
        _session_config(args),
        template_dir=args.template_dir,
    )
    store = FileStore(args.checkpoint_dir) if args.checkpoint_dir else None
    token = None
    if args.auth_token_env:
        import os

        token = os.environ.get(args.auth_token_env)
        if not token:
            print(f"{args.auth_token_env} is unset", file=sys.stderr)
            return 1
    app = create_app(engine, store=store, auth_token=token)
    serve(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="preconsult",
        description="Multi-agent pre-consultation: simulate, compare, judge, serve.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="run EHR cases through full consultations")
    _add_backend_args(simulate)
    _add_session_args(simulate)
    simulate.add_argument("--dataset", default=str(default_dataset_path()))
    simulate.add_argument(
        "--strategy", choices=("agent_driven", "default_order"), default="agent_driven"
    )
    simulate.add_argument("--parallelism", type=int, default=1)
    simulate.add_argument("--evaluate", action="store_true", help="judge each finished session")
    simulate.add_argument("--out", default=None, help="write the batch report JSON here")
    simulate.add_argument("--curve-csv", default=None)
    simulate.set_defaults(func=cmd_simulate)

    compare = sub.add_parser(
        "compare-strategies", help="same cases under agent-driven vs default-order control"
    )
    _add_backend_args(compare)
    _add_session_args(compare)
    compare.add_argument("--dataset", default=str(default_dataset_path()))
    compare.add_argument("--parallelism", type=int, default=1)
    compare.add_argument("--out", default=None)
    compare.add_argument("--curve-csv", default=None)
    compare.set_defaults(func=cmd_compare)

    evaluate = sub.add_parser("evaluate", help="judge sessions from a saved batch report")
    _add_backend_args(evaluate)
    evaluate.add_argument("--report", required=True, help="batch report JSON from simulate")
    evaluate.add_argument("--dataset", default=str(default_dataset_path()))
    evaluate.add_argument("--out", default=None)
    evaluate.set_defaults(func=cmd_evaluate)

    serve_cmd = sub.add_parser("serve", help="expose the engine over HTTP")
    _add_backend_args(serve_cmd)
    _add_session_args(serve_cmd)
    serve_cmd.add_argument(
        "--strategy", choices=("agent_driven", "default_order"), default="agent_driven"
    )
    serve_cmd.add_argument("--host", default="127.0.0.1")
    serve_cmd.add_argument("--port", type=int, default=8000)
    serve_cmd.add_argument("--checkpoint-dir", default=None)
    serve_cmd.add_argument("--auth-token-env", default=None)
    serve_cmd.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except PreconsultError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
