"""Run the bundled reference scenario and score it against Urban Intersection.

    python3 scripts/run_reference.py --out out/reference
"""
import argparse
import time
from pathlib import Path

from mergesim import kpi
from mergesim.scenario import apply_overrides, parse_scenario, reference_document
from mergesim.simulation import Simulation


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("out/reference"))
    ap.add_argument("--requirement", default="Urban Intersection")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()

    scenario = parse_scenario(apply_overrides(reference_document(), args.overrides))
    t0 = time.perf_counter()
    Simulation(scenario).run(args.out)
    print(f"simulated {scenario.simulation.end_ns / 1e9:g} s in {time.perf_counter() - t0:.1f} s")

    req = kpi.requirement(args.requirement)
    ctx = kpi.TraceContext.from_scenario(scenario)
    msgs = kpi.read_messages(args.out / "traces" / "messages.csv")
    positions = kpi.read_positions(args.out / "traces" / "positions.csv")
    report = kpi.analyze(msgs, positions, req, scenario.merge_zone, context=ctx)
    kpi.write_report(report, req, args.out / "kpi", msgs, positions, scenario.merge_zone, ctx.route_labels)

    route_of = {r.entity: r.route_id for r in positions[["entity", "route_id"]].drop_duplicates().itertuples()}
    records = kpi.release_records(msgs, route_of, ctx.route_labels, 5_000_000_000)
    delays = [r.delay_ns for r in records if r.delay_ns is not None]
    print(kpi.render_text(report, req), end="")
    if delays:
        print(f"stop episodes        {len(records)}, worst release delay {max(delays) / 1e9:.4f} s")


if __name__ == "__main__":
    main()
