"""Run every registered property suite at its default trial count and write one JSON line per suite."""
import argparse
import sys
from pathlib import Path

from grassnorm import verify as vf


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/reports.jsonl")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--scale", type=float, default=1.0, help="multiply every default trial count")
    args = ap.parse_args()

    reports = []
    for sid, s in vf.SUITES.items():
        trials = max(1, round(s.default_trials * args.scale))
        rep = vf.run_suite(sid, trials=trials, seed=args.seed, workers=args.workers)
        reports.append(rep)
        print(f"{sid:28s} {'ok ' if rep.passed else 'FAIL'} {rep.trials - rep.violations:5d}/{rep.trials:<5d} "
              f"{rep.runtime:7.2f}s", flush=True)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    vf.write_reports(reports, out)
    return 0 if all(r.passed for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
