"""Command line entry points.

diagnose   run the pipeline over telemetry files and write a report
simulate   generate synthetic scenario directories
evaluate   diagnose a directory of scenarios and print accuracy metrics
kb         manage the knowledge base (add-case, list)

Exit codes: 0 success, 1 error, 2 diagnosis not started because no alarm fired.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import DetectorConfig, load_detector_config
from .knowledge import KnowledgeBase
from .mcts import DiagnosisReport, MctsConfig
from .oracle import OracleAdapter, OracleConfig
from .pipeline import DEFAULT_EVIDENCE_BUDGET, case_from_report, run_diagnosis
from .simharness import (
    Scenario,
    baseline_evaluate,
    chain_suite,
    default_suite,
    evaluate,
    quiet_root_suite,
)
from .telemetry import TimeWindow, format_ts

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_ALARM = 2


def _oracle_from_args(args: argparse.Namespace) -> OracleAdapter:
    if args.oracle == "deterministic":
        return OracleAdapter(OracleConfig())
    api_key = os.environ.get(args.oracle_api_key_env) if args.oracle_api_key_env else None
    return OracleAdapter(OracleConfig(
        mode="external", endpoint=args.oracle_endpoint, model=args.oracle_model,
        timeout=args.oracle_timeout, max_input_chars=args.oracle_max_input_chars,
        api_key=api_key, response_path=args.oracle_response_path))


def _add_oracle_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--oracle", choices=("deterministic", "external"),
                        default="deterministic")
    parser.add_argument("--oracle-endpoint", default=None,
                        help="chat-completions URL for --oracle external")
    parser.add_argument("--oracle-model", default=None)
    parser.add_argument("--oracle-timeout", type=float, default=30.0)
    parser.add_argument("--oracle-max-input-chars", type=int, default=32768)
    parser.add_argument("--oracle-api-key-env", default=None,
                        help="environment variable holding the API key")
    parser.add_argument("--oracle-response-path", default="choices.0.message.content")


def render_report_markdown(report: DiagnosisReport) -> str:
    lines = ["# Diagnosis report", ""]
    lines.append(f"- Root cause service: **{report.root_cause_service}**")
    lines.append(f"- Fault path: {' -> '.join(report.fault_path)}")
    gran = report.granularity
    where = f"{gran.level}" + (f" ({gran.pod})" if gran.pod else "")
    if gran.note:
        where += f" - {gran.note}"
    lines.append(f"- Granularity: {where}")
    if report.kb_case:
        lines.append(f"- Matched stored case: {report.kb_case.case_id}")
        if report.kb_case.solution:
            lines.append(f"- Suggested solution: {report.kb_case.solution}")
    if report.window:
        lines.append(f"- Window: [{format_ts(report.window['start'])}, "
                     f"{format_ts(report.window['end'])})")
    lines += ["", "## Fault types", "", "| rank | type | findings | rationale |",
              "| --- | --- | --- | --- |"]
    for i, entry in enumerate(report.fault_types, 1):
        lines.append(f"| {i} | {entry.label} | {entry.count} | {entry.rationale} |")
    if report.alarms:
        lines += ["", "## Alarmed services", ""]
        for svc, count in sorted(report.alarms.items()):
            lines.append(f"- {svc}: {count} alarm signal(s)")
    lines += ["", "## Search trace", "",
              "| iteration | simulated | state score | reward | note |",
              "| --- | --- | --- | --- | --- |"]
    for entry in report.trace:
        note = ""
        if entry.early_stop:
            note = f"matched case {entry.kb_case}"
        elif entry.expanded:
            note = f"expanded {entry.expanded}"
        lines.append(f"| {entry.iteration} | {entry.simulated} | "
                     f"{entry.state_score} | {entry.reward:.1f} | {note} |")
    if report.degraded:
        lines += ["", "## Degraded inputs", ""]
        lines += [f"- {msg}" for msg in report.degraded]
    stats = report.stats
    if stats:
        lines += ["", "## Run statistics", ""]
        lines.append(f"- Iterations used: {stats.get('iterations_used')}")
        lines.append(f"- Elapsed seconds: {stats.get('elapsed_seconds', 0.0):.3f}")
        lines.append(f"- Services inspected: {stats.get('services_mined')}")
        lines.append(f"- Oracle calls: {stats.get('oracle_calls')}")
        lines.append(f"- Largest oracle input (chars): {stats.get('max_oracle_input_chars')}")
    return "\n".join(lines) + "\n"


def _cmd_diagnose(args: argparse.Namespace) -> int:
    if args.scenario:
        scenario = Scenario.load(args.scenario)
        metrics, logs = scenario.metrics_path, scenario.logs_path
        spans, topology = scenario.spans_path, scenario.topology_path
        window = scenario.manifest.window()
        config = scenario.detector_config()
    else:
        missing = [name for name, value in (("--metrics", args.metrics),
                                            ("--logs", args.logs),
                                            ("--spans", args.spans),
                                            ("--window-start", args.window_start),
                                            ("--window-end", args.window_end))
                   if value is None]
        if missing:
            print(f"error: {', '.join(missing)} required without --scenario",
                  file=sys.stderr)
            return EXIT_ERROR
        metrics, logs, spans = args.metrics, args.logs, args.spans
        topology = args.topology
        window = TimeWindow(args.window_start, args.window_end)
        config = DetectorConfig()
    if args.config:
        config = load_detector_config(args.config)
    kb = KnowledgeBase.load(args.kb) if args.kb else None
    oracle = _oracle_from_args(args)
    result = run_diagnosis(
        metrics, logs, spans, window, config=config, kb=kb, oracle=oracle,
        topology_path=topology,
        mcts_config=MctsConfig(iterations=args.iterations,
                               exploration=args.exploration),
        evidence_budget=args.evidence_budget)
    if not result.triggered:
        print("no alarms; RCA not started")
        return EXIT_NO_ALARM

    report = result.report
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "report.md", "w", encoding="utf-8") as fh:
        fh.write(render_report_markdown(report))
    top = report.fault_types[0].label if report.fault_types else "Unknown"
    print(f"root cause: {report.root_cause_service}")
    print(f"fault path: {' -> '.join(report.fault_path)}")
    print(f"fault type: {top}")
    gran = report.granularity
    print(f"granularity: {gran.level}" + (f" ({gran.pod})" if gran.pod else ""))
    if report.kb_case:
        print(f"matched case: {report.kb_case.case_id}")
    print(f"report written to {out / 'report.json'}")
    return EXIT_OK


def _cmd_simulate(args: argparse.Namespace) -> int:
    if args.suite == "default":
        scenarios = default_suite(args.out, count=args.count, seed=args.seed)
    elif args.suite == "quiet-root":
        scenarios = quiet_root_suite(args.out, count=args.count, seed=args.seed)
    else:
        scenarios = []
        for length in (int(x) for x in args.lengths.split(",")):
            scenarios += chain_suite(args.out, length, count=args.per_length,
                                     seed=args.seed)
    print(f"wrote {len(scenarios)} scenario(s) under {args.out}")
    return EXIT_OK


def _scan_scenarios(root: str | Path) -> list[Scenario]:
    dirs = sorted(p.parent for p in Path(root).glob("*/manifest.json"))
    if not dirs:
        raise FileNotFoundError(f"no scenario manifests under {root}")
    return [Scenario.load(d) for d in dirs]


def _cmd_evaluate(args: argparse.Namespace) -> int:
    scenarios = _scan_scenarios(args.scenarios)
    kb = KnowledgeBase.load(args.kb) if args.kb else None
    result = evaluate(scenarios, kb=kb, iterations=args.iterations,
                      evidence_budget=args.evidence_budget)
    print(f"scenarios: {result.count}")
    print(f"FL@1: {result.fl_at_1:.3f}")
    for k in (1, 2, 3):
        print(f"FT@{k}: {result.ft_at(k):.3f}")
    print(f"ATC: {result.atc_seconds:.3f}s per diagnosis")
    print(f"MTC: {result.mtc_chars} chars (~{result.mtc_token_estimate} tokens)")
    payload = result.to_dict()
    if args.baseline:
        outcomes = baseline_evaluate(scenarios, evidence_budget=args.evidence_budget)
        fl = sum(o.correct_service for o in outcomes) / len(outcomes)
        mtc = max(o.max_input_chars for o in outcomes)
        print(f"baseline FL@1: {fl:.3f}")
        print(f"baseline MTC: {mtc} chars")
        payload["baseline"] = {"fl_at_1": fl, "mtc_chars": mtc}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"results written to {args.out}")
    return EXIT_OK


def _cmd_kb_add_case(args: argparse.Namespace) -> int:
    kb = KnowledgeBase.load(args.kb) if Path(args.kb).exists() else KnowledgeBase()
    with open(args.report, encoding="utf-8") as fh:
        report = DiagnosisReport.from_dict(json.load(fh))
    case_id = args.case_id or kb.next_case_id()
    case = case_from_report(report, case_id, solution=args.solution,
                            confirmed=not args.unconfirmed)
    kb.add_case(case)
    kb.save(args.kb)
    print(f"stored {case.case_id}: root cause {case.root_cause_service}, "
          f"fault type {case.fault_type}")
    return EXIT_OK


def _cmd_kb_list(args: argparse.Namespace) -> int:
    kb = KnowledgeBase.load(args.kb)
    if not kb.cases:
        print("knowledge base holds no cases")
        return EXIT_OK
    for case in kb.cases:
        print(f"{case.case_id}: root={case.root_cause_service} "
              f"type={case.fault_type} granularity={case.granularity} "
              f"services={len(case.per_service)} "
              f"confirmed={'yes' if case.confirmed else 'no'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faultminer",
        description="Root cause analysis for microservice incidents")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diagnose", help="diagnose one incident window")
    p.add_argument("--scenario", default=None,
                   help="scenario directory (replaces the explicit paths below)")
    p.add_argument("--metrics", default=None)
    p.add_argument("--logs", default=None)
    p.add_argument("--spans", default=None)
    p.add_argument("--topology", default=None,
                   help="explicit call graph JSON; derived from spans if omitted")
    p.add_argument("--window-start", type=float, default=None)
    p.add_argument("--window-end", type=float, default=None)
    p.add_argument("--config", default=None, help="detector config JSON")
    p.add_argument("--kb", default=None, help="knowledge base JSON")
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--exploration", type=float, default=1.414)
    p.add_argument("--evidence-budget", type=int, default=DEFAULT_EVIDENCE_BUDGET)
    p.add_argument("--out", default=".")
    _add_oracle_args(p)
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("simulate", help="generate synthetic scenarios")
    p.add_argument("--out", required=True)
    p.add_argument("--suite", choices=("default", "chains", "quiet-root"),
                   default="default")
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--lengths", default="10,20,40",
                   help="chain lengths for --suite chains")
    p.add_argument("--per-length", type=int, default=3)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("evaluate", help="score diagnoses over a scenario directory")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--kb", default=None)
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--evidence-budget", type=int, default=DEFAULT_EVIDENCE_BUDGET)
    p.add_argument("--baseline", action="store_true",
                   help="also score the single-prompt baseline")
    p.add_argument("--out", default=None, help="write metrics JSON here")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("kb", help="knowledge base maintenance")
    kb_sub = p.add_subparsers(dest="kb_command", required=True)
    p = kb_sub.add_parser("add-case", help="store a finished diagnosis as a case")
    p.add_argument("--kb", required=True)
    p.add_argument("--report", required=True, help="report.json from diagnose")
    p.add_argument("--solution", default="")
    p.add_argument("--case-id", default=None)
    p.add_argument("--unconfirmed", action="store_true")
    p.set_defaults(func=_cmd_kb_add_case)
    p = kb_sub.add_parser("list", help="list stored cases")
    p.add_argument("--kb", required=True)
    p.set_defaults(func=_cmd_kb_list)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface a one-line error, not a stack trace
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
