"""Sweep the radio range and report reliability, Stop commands and conflicts.

    python3 scripts/range_sweep.py --ranges 50 100 200 300 --end 600
"""
import argparse
import tempfile
from pathlib import Path

from mergesim import kpi
from mergesim.scenario import apply_overrides, parse_scenario, reference_document
from mergesim.simulation import Simulation


def score(overrides: list[str], requirement: kpi.UseCaseRequirement) -> kpi.KpiReport:
    scenario = parse_scenario(apply_overrides(reference_document(), overrides))
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp)
        Simulation(scenario).run(out)
        ctx = kpi.TraceContext.from_scenario(scenario)
        return kpi.analyze(out / "traces" / "messages.csv", out / "traces" / "positions.csv",
                           requirement, scenario.merge_zone, context=ctx)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ranges", type=float, nargs="+", default=[50, 100, 150, 200, 300, 400])
    ap.add_argument("--end", type=float, default=600, help="simulated seconds per run")
    ap.add_argument("--requirement", default="Urban Intersection")
    args = ap.parse_args()

    req = kpi.requirement(args.requirement)
    print("range_m,sends,delivered,reliability_pct,stop_commands,zone_conflicts,unguarded,verdict")
    for r in args.ranges:
        rep = score([f"radio.range_m={r}", f"simulation.end_time_s={args.end}"], req)
        print(f"{r:g},{rep.messages_sent},{rep.delivered},{rep.reliability_pct:.3f},{rep.stop_commands},"
              f"{rep.zone_conflicts},{rep.unguarded_conflicts},{rep.verdict}", flush=True)


if __name__ == "__main__":
    main()
