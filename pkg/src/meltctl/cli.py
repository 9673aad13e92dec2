"""Command-line pipeline: hatch -> simulate -> identify -> optimize -> evaluate.

Every command is a pure function of its input files, flags, and seed, and
writes byte-identical output across runs. Exit codes: 0 success, 2 input or
geometry error, 3 identification error, 4 optimization non-convergence.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import coax, ffcontrol, meltmodel, scanpath, simulate
from .meltmodel import IdentificationError

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_IDENTIFY = 3
EXIT_NONCONVERGED = 4


@dataclass(frozen=True)
class PipelineConfig:
    """Process defaults; values match the monitored machine setup."""

    sample_rate: float = 2000.0  # Hz, camera rate
    hatch_spacing: float = 0.09  # mm
    speed: float = 800.0  # mm/s scanning velocity
    p_min: float = 150.0  # W
    p_max: float = 225.0  # W
    c_ref: float = 1500.0  # counts, regulation target
    filter_window: int = 150  # samples, trend median filter
    seed: int = 0


DEFAULTS = PipelineConfig()


def read_polygon_file(path) -> scanpath.Polygon:
    """Polygon text format: one ``x y`` vertex per line, mm; # comments."""
    vertices = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != 2:
            raise ValueError(
                f"{path}: line {lineno}: expected 'x y', got {len(fields)} fields"
            )
        try:
            x, y = float(fields[0]), float(fields[1])
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: non-numeric vertex") from None
        vertices.append(scanpath.Point2(x, y))
    return scanpath.Polygon(tuple(vertices))


def write_profile_csv(profile, predicted, dest) -> None:
    """Profile CSV: line,power_w,predicted_c1."""
    with open(dest, "w", newline="") as fh:
        fh.write("line,power_w,predicted_c1\n")
        for n, (p, c) in enumerate(zip(profile.powers, predicted)):
            fh.write(f"{n},{p:.6f},{c:.6f}\n")


def read_profile_csv(src) -> ffcontrol.PowerProfile:
    """Load a written profile for apply_profile; solver diagnostics (cost,
    iterations) are not stored in the CSV and come back as placeholders."""
    rows = Path(src).read_text().splitlines()
    if not rows or rows[0] != "line,power_w,predicted_c1":
        raise ValueError(f"bad profile CSV header in {src}")
    powers = [float(r.split(",")[1]) for r in rows[1:] if r]
    return ffcontrol.PowerProfile(
        powers=tuple(powers), cost=float("nan"), iterations=0, converged=True
    )


# ------------------------------------------------------------------ plotting

_COLOR_STOPS = ((48, 18, 59), (33, 144, 141), (253, 231, 37))


def _color(t: float) -> str:
    t = min(max(t, 0.0), 1.0)
    if t < 0.5:
        a, b, u = _COLOR_STOPS[0], _COLOR_STOPS[1], t * 2.0
    else:
        a, b, u = _COLOR_STOPS[1], _COLOR_STOPS[2], t * 2.0 - 1.0
    rgb = tuple(round(x + (y - x) * u) for x, y in zip(a, b))
    return f"#{rgb[0]:02x}{rgb[1]:02x}{rgb[2]:02x}"


def render_spatial_svg(samples, title: str) -> str:
    """Spatial map of the C1 signal: one marker per sample, linear color
    scale with the min/max stated in the legend; no smoothing."""
    size, margin = 640.0, 40.0
    xs = [s.pos.x for s in samples]
    ys = [s.pos.y for s in samples]
    values = [s.c1 for s in samples]
    if not samples:
        xs = ys = [0.0]
        values = [0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    vmin, vmax = min(values), max(values)
    span = max(x1 - x0, y1 - y0, 1e-9)
    scale = (size - 2 * margin) / span

    def sx(x: float) -> float:
        return margin + (x - x0) * scale

    def sy(y: float) -> float:
        return size - margin - (y - y0) * scale  # SVG y axis points down

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0f}" '
        f'height="{size:.0f}" viewBox="0 0 {size:.0f} {size:.0f}">',
        f'<rect width="{size:.0f}" height="{size:.0f}" fill="white"/>',
        f'<text x="{margin:.0f}" y="20" font-size="14" font-family="sans-serif">'
        f"{title}</text>",
        f'<text x="{margin:.0f}" y="{size - 8:.0f}" font-size="12" '
        f'font-family="sans-serif">C1 linear color scale: min={vmin} '
        f"max={vmax}</text>",
    ]
    vspan = max(vmax - vmin, 1)
    for s in samples:
        t = (s.c1 - vmin) / vspan
        radius = 2.0 if s.valid else 1.0
        parts.append(
            f'<circle cx="{sx(s.pos.x):.2f}" cy="{sy(s.pos.y):.2f}" '
            f'r="{radius:.1f}" fill="{_color(t)}"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ------------------------------------------------------------------ commands


def cmd_hatch(args) -> int:
    poly = read_polygon_file(args.polygon)
    scan = scanpath.hatch_polygon(
        poly, args.angle, args.spacing, args.power, args.speed
    )
    Path(args.out).write_bytes(scanpath.write_scanfile(scan))
    print(f"hatched {len(scan.lines)} lines -> {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    scan = scanpath.parse_scanfile(Path(args.scan).read_bytes())
    model = meltmodel.read_model_json(args.model)
    noise = simulate.NoiseConfig(sigma_c1=args.sigma, seed=args.seed)
    out = simulate.simulate_layer(scan, model, noise, sample_rate=args.rate)
    coax.write_signal_csv(out.samples, args.out)
    print(f"simulated {len(out.samples)} samples -> {args.out}")
    return EXIT_OK


def _parse_labeled_inputs(entries) -> list[tuple[float, str]]:
    out = []
    for entry in entries:
        power, sep, path = entry.partition("=")
        if not sep or not path:
            raise ValueError(
                f"expected POWER=SIGNAL.csv, got {entry!r}"
            )
        out.append((float(power), path))
    return out


def cmd_identify(args) -> int:
    labeled = _parse_labeled_inputs(args.inputs)
    fits = []
    for power, path in labeled:
        samples = coax.read_signal_csv(path)
        lengths = coax.estimate_line_lengths(samples)
        data = meltmodel.fit_samples_from_signal(samples, lengths)
        fit = meltmodel.fit_exponential(data)
        fits.append(replace(fit, power=power))
    result = meltmodel.fit_power_model(fits)
    meltmodel.write_model_json(result.model, args.out)

    m = result.model
    powers = sorted({p for p, _ in labeled})
    report = [
        f"chunks: {len(fits)} at {len(powers)} power levels {powers}",
        f"c_inf:   slope={m.c_inf_slope:.6f} intercept={m.c_inf_intercept:.6f} "
        f"R2={result.c_inf.r2:.4f} rejected={list(result.c_inf.rejected)}",
        f"delta_c: quad={m.dc_quad:.6f} lin={m.dc_lin:.6f} "
        f"intercept={m.dc_intercept:.6f} R2={result.delta_c.r2:.4f} "
        f"rejected={list(result.delta_c.rejected)}",
        f"r:       slope={m.r_slope:.6f} R2={result.r.r2:.4f} "
        f"rejected={list(result.r.rejected)}",
        f"model -> {args.out}",
    ]
    print("\n".join(report))
    return EXIT_OK


def cmd_optimize(args) -> int:
    scan = scanpath.parse_scanfile(Path(args.scan).read_bytes())
    model = meltmodel.read_model_json(args.model)
    problem = ffcontrol.problem_from_scan(
        scan, model, c_ref=args.cref, p_min=args.pmin, p_max=args.pmax
    )
    profile = ffcontrol.optimize_powers(problem)
    predicted = ffcontrol.predict_c1(problem, np.array(profile.powers))
    write_profile_csv(profile, predicted, args.out)
    controlled = ffcontrol.apply_profile(scan, profile)
    Path(args.out_scan).write_bytes(scanpath.write_scanfile(controlled))

    worst = float(np.max(np.abs(predicted - args.cref)))
    if worst > 0.05 * args.cref:
        print(
            f"warning: reference {args.cref:g} not attainable within power "
            f"bounds (max |C1 - cref| = {worst:.1f})",
            file=sys.stderr,
        )
    print(
        f"optimized {problem.n_lines} lines (cost {profile.cost:.3f}, "
        f"{profile.iterations} iterations) -> {args.out}, {args.out_scan}"
    )
    if not profile.converged:
        print("warning: optimizer hit the iteration cap", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_evaluate(args) -> int:
    runs = {}
    for label, path in (("baseline", args.baseline), ("controlled", args.controlled)):
        samples = coax.read_signal_csv(path)
        series = [s.c1 for s in samples if s.valid]
        runs[label] = (samples, meltmodel.trend_sigma(series, args.window))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sigma_b = runs["baseline"][1]
    sigma_c = runs["controlled"][1]
    ratio = sigma_c / sigma_b if sigma_b > 0 else float("inf")
    report = [
        f"baseline:   trend_sigma={sigma_b:.6f} samples={len(runs['baseline'][0])}",
        f"controlled: trend_sigma={sigma_c:.6f} samples={len(runs['controlled'][0])}",
        f"ratio: {ratio:.6f}",
        f"filter window: {args.window}",
    ]
    (out_dir / "report.txt").write_text("\n".join(report) + "\n")
    for label in ("baseline", "controlled"):
        svg = render_spatial_svg(runs[label][0], f"C1 spatial map ({label})")
        (out_dir / f"{label}.svg").write_text(svg)
    print("\n".join(report))
    return EXIT_OK


# ---------------------------------------------------------------- interface


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meltctl",
        description="Melt-pool model identification and feedforward "
        "laser-power control, with a synthetic process simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("hatch", help="meander-hatch a polygon into a scan file")
    p.add_argument("polygon", help="polygon file: one 'x y' vertex per line, mm")
    p.add_argument("--angle", type=float, default=0.0, help="hatch angle, degrees")
    p.add_argument("--spacing", type=float, default=DEFAULTS.hatch_spacing)
    p.add_argument("--power", type=float, default=200.0, help="laser power, W")
    p.add_argument("--speed", type=float, default=DEFAULTS.speed)
    p.add_argument("--out", required=True, help="scan file to write")
    p.set_defaults(func=cmd_hatch)

    p = sub.add_parser("simulate", help="emit the synthetic coaxial signal CSV")
    p.add_argument("scan", help="scan file")
    p.add_argument("model", help="model JSON file")
    p.add_argument("--sigma", type=float, default=simulate.DEFAULT_SIGMA_C1)
    p.add_argument("--seed", type=int, default=DEFAULTS.seed)
    p.add_argument("--rate", type=float, default=DEFAULTS.sample_rate)
    p.add_argument("--out", required=True, help="signal CSV to write")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "identify", help="fit the power-parameterized model from signal CSVs"
    )
    p.add_argument(
        "inputs", nargs="+", metavar="POWER=SIGNAL.csv",
        help="per-chunk signal CSVs labeled with their laser power",
    )
    p.add_argument("--out", required=True, help="model JSON to write")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("optimize", help="solve the per-line power profile")
    p.add_argument("scan", help="scan file")
    p.add_argument("model", help="model JSON file")
    p.add_argument("--cref", type=float, default=DEFAULTS.c_ref)
    p.add_argument("--pmin", type=float, default=DEFAULTS.p_min)
    p.add_argument("--pmax", type=float, default=DEFAULTS.p_max)
    p.add_argument("--out", required=True, help="profile CSV to write")
    p.add_argument(
        "--out-scan", required=True, help="power-adjusted scan file to write"
    )
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser(
        "evaluate", help="compare baseline and controlled signal CSVs"
    )
    p.add_argument("baseline", help="baseline signal CSV")
    p.add_argument("controlled", help="controlled signal CSV")
    p.add_argument("--window", type=int, default=DEFAULTS.filter_window)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IdentificationError as exc:
        print(f"identification error: {exc}", file=sys.stderr)
        return EXIT_IDENTIFY
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
