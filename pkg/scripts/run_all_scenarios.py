"""Run every scenario file under scenarios/ and collect the summary rows.

Writes one report directory per scenario (events.log, metrics_summary.csv,
agreement_timeseries.csv, node_resources.csv) plus a combined all_runs.csv
at the output root.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from chainsim.netsim import run_scenario, summary_row, write_reports
from chainsim.scenario import ScenarioError, load_scenario

COLUMNS = ["scenario", "seed", "orphans", "max_reorg_depth",
           "mean_confirmation_latency", "fork_split", "wall_seconds"]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenarios", default=None,
                    help="directory of .cfg files (default: repo scenarios/)")
    ap.add_argument("--out", default="results/all_scenarios",
                    help="output root for per-scenario reports")
    ap.add_argument("--only", default=None,
                    help="substring filter on scenario file names")
    args = ap.parse_args()

    scen_dir = Path(args.scenarios) if args.scenarios else \
        Path(__file__).resolve().parent.parent / "scenarios"
    paths = sorted(scen_dir.glob("*.cfg"))
    if args.only:
        paths = [p for p in paths if args.only in p.name]
    if not paths:
        print(f"no scenario files under {scen_dir}", file=sys.stderr)
        return 1

    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in paths:
        name = path.stem
        try:
            config = load_scenario(str(path))
        except ScenarioError as exc:
            print(f"{name}: invalid scenario: {exc}", file=sys.stderr)
            return 1
        start = time.perf_counter()
        result = run_scenario(config)
        wall = time.perf_counter() - start
        write_reports(result, str(out_root / name))
        row = {"scenario": name, **summary_row(result),
               "wall_seconds": f"{wall:.2f}"}
        rows.append(row)
        print("  ".join(f"{k}={row[k]}" for k in COLUMNS))

    with open(out_root / "all_runs.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    print(f"\n{len(rows)} scenarios -> {out_root / 'all_runs.csv'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
