#!/usr/bin/env python3
"""Identification experiment on simulated cubes of varying laser power.

Simulates chunked cube layers at 150/175/200/225 W with calibrated noise,
runs the per-chunk exponential fits and the coefficient regressions through
the identify command, and reports the recovered polynomials against the
generating ones.

Usage: python scripts/identify_from_cubes.py [--out OUT_DIR] [--chunks N]
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from meltctl import cli
from meltctl.coax import write_signal_csv
from meltctl.meltmodel import paper_default, read_model_json
from meltctl.scanpath import Point2, Polygon, hatch_polygon
from meltctl.simulate import NoiseConfig, simulate_layer

POWERS_W = (150.0, 175.0, 200.0, 225.0)
ANGLES_DEG = (30.0, 135.0, 60.0, 135.0)
CUBE_SIDE_MM = 10.0
LAYERS_PER_CHUNK = 5
SIGMA_C1 = 175.0


def concat_layers(outputs):
    merged = []
    line_base = 0
    t_base = 0.0
    for out in outputs:
        max_line = 0
        t_last = 0.0
        for s in out.samples:
            line = None if s.line_index is None else s.line_index + line_base
            merged.append(replace(s, t=s.t + t_base, line_index=line))
            if s.line_index is not None:
                max_line = max(max_line, s.line_index)
            t_last = max(t_last, s.t)
        line_base += max_line + 1
        t_base += t_last + 0.01
    return merged


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/identify")
    ap.add_argument("--chunks", type=int, default=12, help="chunks per power")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    truth = paper_default()
    cube = Polygon((
        Point2(0, 0), Point2(CUBE_SIDE_MM, 0),
        Point2(CUBE_SIDE_MM, CUBE_SIDE_MM), Point2(0, CUBE_SIDE_MM),
    ))
    scans = {
        (p, a): hatch_polygon(cube, a, 0.09, p, 800.0)
        for p in POWERS_W for a in set(ANGLES_DEG)
    }

    seed = args.seed
    inputs = []
    for p in POWERS_W:
        for chunk in range(args.chunks):
            outs = []
            for layer in range(LAYERS_PER_CHUNK):
                angle = ANGLES_DEG[(chunk * LAYERS_PER_CHUNK + layer) % 4]
                outs.append(simulate_layer(
                    scans[(p, angle)], truth,
                    NoiseConfig(sigma_c1=SIGMA_C1, seed=seed),
                ))
                seed += 1
            path = out / f"chunk_{p:.0f}_{chunk:02d}.csv"
            write_signal_csv(concat_layers(outs), path)
            inputs.append(f"{p:g}={path}")
    print(f"simulated {len(inputs)} chunks "
          f"({LAYERS_PER_CHUNK} layers each) at {len(POWERS_W)} powers")

    model_path = out / "identified.json"
    rc = cli.main(["identify", *inputs, "--out", str(model_path)])
    if rc != 0:
        return rc

    m = read_model_json(model_path)
    print("\nrecovered vs generating coefficients:")
    for key in ("c_inf_slope", "c_inf_intercept", "dc_quad", "dc_lin",
                "dc_intercept", "r_slope"):
        got, want = getattr(m, key), getattr(truth, key)
        print(f"  {key:16s} {got:12.4f} vs {want:12.4f} "
              f"(rel err {abs(got - want) / abs(want):.4f})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
