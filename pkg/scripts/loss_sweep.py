"""Sweep the radio loss probability and compare measured reliability with 1 - loss.

    python3 scripts/loss_sweep.py --losses 0 0.05 0.1 0.2 --end 400
"""
import argparse

from mergesim import kpi

from range_sweep import score


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--losses", type=float, nargs="+", default=[0.0, 0.02, 0.05, 0.1, 0.2])
    ap.add_argument("--end", type=float, default=400, help="simulated seconds per run")
    ap.add_argument("--requirement", default="Urban Intersection")
    args = ap.parse_args()

    req = kpi.requirement(args.requirement)
    print("loss_prob,sends,expected,delivered,reliability_pct,target_pct,zone_conflicts,verdict")
    for p in args.losses:
        rep = score([f"radio.loss_prob={p}", f"simulation.end_time_s={args.end}"], req)
        print(f"{p:g},{rep.messages_sent},{rep.expected},{rep.delivered},{rep.reliability_pct:.3f},"
              f"{100 * (1 - p):.1f},{rep.zone_conflicts},{rep.verdict}", flush=True)


if __name__ == "__main__":
    main()
