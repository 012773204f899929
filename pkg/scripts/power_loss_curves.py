#!/usr/bin/env python3
"""Tabulate the two headline tradeoff curves for a 1000-participant design.

Writes two CSVs to stdout-adjacent files in out_curves/:

  power_vs_n.csv        power against completer total, unadjusted vs 15% VR
  power_vs_fraction.csv power against realized information fraction for
                        80% and 90% design powers

Both are plain data files; plot with whatever you like.
"""

from __future__ import annotations

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from procova.design import (
    TrialDesign,
    calibrated_effect_size,
    power_curve,
    power_vs_effective_fraction,
)

OUT = ROOT / "out_curves"


def main() -> None:
    OUT.mkdir(exist_ok=True)
    design = TrialDesign(
        alpha=0.05,
        target_power=0.90,
        effect_size=calibrated_effect_size(1000),
        endpoint_sd=1.0,
        endpoint_label="endpoint",
    )

    curve = power_curve(design, [0.0, 0.15], range(500, 1501, 10))
    lines = ["n,power_unadjusted,power_vr_15"]
    for j, total in enumerate(curve.totals):
        lines.append(f"{total},{curve.powers[0][j]:.6f},{curve.powers[1][j]:.6f}")
    (OUT / "power_vs_n.csv").write_text("\n".join(lines) + "\n")

    lines = ["fraction,power_design_80,power_design_90"]
    for i in range(51):
        fraction = 0.5 + 0.01 * i
        p80 = power_vs_effective_fraction(fraction, 0.80, 0.05)
        p90 = power_vs_effective_fraction(fraction, 0.90, 0.05)
        lines.append(f"{fraction:.2f},{p80:.6f},{p90:.6f}")
    (OUT / "power_vs_fraction.csv").write_text("\n".join(lines) + "\n")

    print(f"wrote {OUT / 'power_vs_n.csv'}")
    print(f"wrote {OUT / 'power_vs_fraction.csv'}")


if __name__ == "__main__":
    main()
