#!/usr/bin/env python3
"""Closed-loop demo on the validation geometries.

Hatches the sharp-cornered star (or the necked wave, which scans in
separate sections joined by jumps), simulates the uncontrolled layer at a
constant 200 W, solves the feedforward power profile, simulates the
controlled layer, and writes the comparison report plus spatial-map SVGs.

Usage: python scripts/run_star_control.py [--part star|wave] [--out DIR]
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from meltctl import cli
from meltctl.coax import write_signal_csv
from meltctl.ffcontrol import apply_profile, optimize_powers, predict_c1, problem_from_scan
from meltctl.meltmodel import paper_default, trend_sigma, write_model_json
from meltctl.scanpath import Point2, Polygon, hatch_polygon, write_scanfile
from meltctl.simulate import NoiseConfig, simulate_layer

NOMINAL_POWER_W = 200.0
SPEED_MM_S = 800.0
HATCH_SPACING_MM = 0.09
SIGMA_C1 = 175.0


def star_polygon(outer: float = 12.0, inner: float = 5.0 / math.sqrt(2.0)) -> Polygon:
    pts = [
        (outer, 0.0), (inner, inner), (0.0, outer), (-inner, inner),
        (-outer, 0.0), (-inner, -inner), (0.0, -outer), (inner, -inner),
    ]
    return Polygon(tuple(Point2(x, y) for x, y in pts))


def wave_polygon() -> Polygon:
    pts = [
        (-10, -3), (-2, -3), (-2, -0.8), (2, -0.8), (2, -3), (10, -3),
        (10, 3), (2, 3), (2, 0.8), (-2, 0.8), (-2, 3), (-10, 3),
    ]
    return Polygon(tuple(Point2(x, y) for x, y in pts))


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--part", choices=("star", "wave"), default="star")
    ap.add_argument("--out", default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--angle", type=float, default=0.0)
    args = ap.parse_args()
    out = Path(args.out if args.out else f"out/{args.part}_control")
    out.mkdir(parents=True, exist_ok=True)

    model = paper_default()
    write_model_json(model, out / "model.json")

    poly = star_polygon() if args.part == "star" else wave_polygon()
    scan = hatch_polygon(poly, args.angle, HATCH_SPACING_MM,
                         NOMINAL_POWER_W, SPEED_MM_S)
    (out / f"{args.part}_baseline.scan").write_bytes(write_scanfile(scan))
    jumps = int(scan.jump_flags()[1:].sum())
    print(f"{args.part} hatched: {len(scan.lines)} lines at "
          f"{args.angle:g} deg, {jumps} jumps")

    problem = problem_from_scan(scan, model)
    profile = optimize_powers(problem)
    predicted = predict_c1(problem, profile.powers)
    cli.write_profile_csv(profile, predicted, out / "profile.csv")
    controlled = apply_profile(scan, profile)
    (out / f"{args.part}_controlled.scan").write_bytes(write_scanfile(controlled))
    print(f"profile solved in {profile.iterations} iterations, "
          f"cost {profile.cost:.1f}, powers "
          f"[{min(profile.powers):.1f}, {max(profile.powers):.1f}] W")

    base = simulate_layer(scan, model, NoiseConfig(sigma_c1=SIGMA_C1, seed=args.seed))
    ctrl = simulate_layer(controlled, model,
                          NoiseConfig(sigma_c1=SIGMA_C1, seed=args.seed + 1))
    write_signal_csv(base.samples, out / "baseline.csv")
    write_signal_csv(ctrl.samples, out / "controlled.csv")

    sigma_b = trend_sigma([s.c1 for s in base.samples if s.valid])
    sigma_c = trend_sigma([s.c1 for s in ctrl.samples if s.valid])
    print(f"trend sigma: baseline {sigma_b:.1f}, controlled {sigma_c:.1f}, "
          f"ratio {sigma_c / sigma_b:.3f}")

    rc = cli.main([
        "evaluate", str(out / "baseline.csv"), str(out / "controlled.csv"),
        "--out", str(out / "eval"),
    ])
    print(f"report and SVG maps in {out / 'eval'}")
    return rc


if __name__ == "__main__":
    raise SystemExit(main())
