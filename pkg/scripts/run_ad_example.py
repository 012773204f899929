#!/usr/bin/env python3
"""End-to-end Alzheimer's disease worked example.

Drives every CLI subcommand against the bundled fixtures and leaves the
outputs under out_ad/: the co-primary design summary, the evaluation table,
power curves, a zero-benefit simulation with and without blinded re-estimation,
and the assembled credibility report.
"""

from __future__ import annotations

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from procova.cli import parse_args, run

DATA = ROOT / "tests" / "data"
OUT = ROOT / "out_ad"


def main() -> int:
    jobs = [
        ["design", "--config", DATA / "ad_design.toml", "--out", OUT / "design"],
        ["evaluate", "--config", DATA / "ad_report.toml", "--out", OUT / "evaluation"],
        [
            "curves", "--config", DATA / "ad_design.toml", "--out", OUT / "curves",
            "--vr", "0,0.15", "--n", "500:1500:10",
            "--fractions", "0.5:1.0:0.01", "--design-powers", "0.80,0.90",
        ],
        [
            "simulate", "--config", DATA / "scenario_ad_floor.toml",
            "--seed", "701", "--out", OUT / "sim_floor", "--reps", "5000",
        ],
        [
            "simulate", "--config", DATA / "scenario_ssr.toml",
            "--seed", "702", "--out", OUT / "sim_ssr", "--reps", "5000",
        ],
        ["report", "--config", DATA / "ad_report.toml", "--out", OUT / "report"],
    ]
    for argv in jobs:
        argv = [str(a) for a in argv]
        print("procova " + " ".join(argv))
        code = run(parse_args(argv))
        if code != 0:
            print(f"  -> exit {code}", file=sys.stderr)
            return code
    print(f"\nall outputs under {OUT}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
