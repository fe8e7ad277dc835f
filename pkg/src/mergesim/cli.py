"""Command-line entry point: ``mergesim run|validate|kpi|init``.

Exit codes: 0 success, 1 runtime fault, 2 invalid input, 3 KPI verdict failed.
"""
from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from mergesim import __version__
from mergesim import kpi
from mergesim.scenario import ScenarioError, load_scenario, parse_scenario, read_document, reference_text
from mergesim.simulation import Simulation

EXIT_OK = 0
EXIT_FAULT = 1
EXIT_INVALID = 2
EXIT_VERDICT = 3


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def cmd_run(scenario_path: str, out_dir: str, overrides: list[str]) -> int:
    try:
        scenario = load_scenario(scenario_path, overrides)
    except ScenarioError as exc:
        _err(str(exc))
        return EXIT_INVALID
    out = Path(out_dir)
    try:
        report = Simulation(scenario).run(out)
    except Exception:
        traceback.print_exc()
        return EXIT_FAULT
    (out / "scenario.json").write_text(json.dumps(scenario.document, indent=2) + "\n", encoding="utf-8")
    manifest = {
        "scenario": str(scenario_path),
        "scenario_sha256": scenario.digest(),
        "seed": scenario.simulation.random_seed,
        "overrides": list(overrides),
        "version": __version__,
        "report": report.as_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    r = report
    print(
        f"ran {scenario.simulation.id} to {r.end_ns / 1e9:g} s: "
        f"{sum(r.vehicles_spawned.values())} vehicles, {r.messages_sent} messages sent, "
        f"{r.messages_delivered} delivered, {r.messages_dropped} dropped -> {out}"
    )
    return EXIT_OK


def cmd_validate(scenario_path: str) -> int:
    try:
        scenario = parse_scenario(read_document(scenario_path))
    except ScenarioError as exc:
        _err(str(exc))
        return EXIT_INVALID
    print(f"{scenario_path}: valid ({len(scenario.network.routes)} routes, {len(scenario.flows)} flows)")
    return EXIT_OK


def cmd_kpi(run_dir: str, requirement_name: str) -> int:
    try:
        req = kpi.requirement(requirement_name)
    except KeyError as exc:
        _err(exc.args[0])
        return EXIT_INVALID
    root = Path(run_dir)
    traces = root / "traces"
    scenario_file = root / "scenario.json"
    try:
        scenario = parse_scenario(read_document(scenario_file))
        msgs = kpi.read_messages(traces / "messages.csv")
        positions = kpi.read_positions(traces / "positions.csv")
    except (ScenarioError, kpi.TraceFormatError, OSError) as exc:
        _err(str(exc))
        return EXIT_INVALID
    ctx = kpi.TraceContext.from_scenario(scenario)
    report = kpi.analyze(msgs, positions, req, scenario.merge_zone, context=ctx)
    kpi.write_report(report, req, root / "kpi", msgs, positions, scenario.merge_zone, ctx.route_labels)
    print(kpi.render_text(report, req), end="")
    return EXIT_OK if report.passed else EXIT_VERDICT


def cmd_init(out_path: str) -> int:
    path = Path(out_path)
    try:
        if path.parent != Path(""):
            path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(reference_text(), encoding="utf-8")
    except OSError as exc:
        _err(str(exc))
        return EXIT_FAULT
    print(f"wrote reference scenario to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mergesim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write logs, traces and a manifest")
    run.add_argument("scenario")
    run.add_argument("-o", "--out", default="out")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override a scenario field by dotted path, e.g. radio.loss_prob=0.1")

    val = sub.add_parser("validate", help="check a scenario without running it")
    val.add_argument("scenario")

    k = sub.add_parser("kpi", help="score a run directory against a use-case requirement")
    k.add_argument("run_dir")
    k.add_argument("--requirement", required=True)

    init = sub.add_parser("init", help="write the bundled reference scenario")
    init.add_argument("path")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.scenario, args.out, args.overrides)
    if args.command == "validate":
        return cmd_validate(args.scenario)
    if args.command == "kpi":
        return cmd_kpi(args.run_dir, args.requirement)
    return cmd_init(args.path)


if __name__ == "__main__":
    sys.exit(main())
