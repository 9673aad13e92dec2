"""End-to-end command behavior: file formats, determinism, exit codes."""

from __future__ import annotations

import numpy as np
import pytest

from fixtures_geometry import (
    square_polygon,
    star_polygon,
    wave_polygon,
    write_polygon_file,
)
from meltctl import cli
from meltctl.coax import read_signal_csv
from meltctl.ffcontrol import PowerProfile
from meltctl.meltmodel import paper_default, write_model_json
from meltctl.scanpath import line_lengths, parse_scanfile

STEADY_STATE_W = (1500.0 + 880.0) / 10.6


@pytest.fixture
def model_file(tmp_path):
    path = tmp_path / "model.json"
    write_model_json(paper_default(), path)
    return str(path)


def hatch(tmp_path, poly, out_name, *flags) -> str:
    poly_file = tmp_path / f"{out_name}.poly"
    write_polygon_file(poly, poly_file)
    out = tmp_path / f"{out_name}.scan"
    rc = cli.main(["hatch", str(poly_file), "--out", str(out), *flags])
    assert rc == 0
    return str(out)


# -------------------------------------------------------------------- hatch


def test_hatch_square_56_lines(tmp_path):
    out = hatch(tmp_path, square_polygon(5.0), "sq", "--angle", "0")
    scan = parse_scanfile(open(out, "rb").read())
    assert len(scan.lines) == 56


def test_hatch_star_symmetry(tmp_path):
    h = hatch(tmp_path, star_polygon(), "star0", "--angle", "0")
    v = hatch(tmp_path, star_polygon(), "star90", "--angle", "90")
    lh = sorted(line_lengths(parse_scanfile(open(h, "rb").read())))
    lv = sorted(line_lengths(parse_scanfile(open(v, "rb").read())))
    assert len(lh) == len(lv)
    assert np.allclose(lh, lv, atol=1e-9)


def test_hatch_wave_45_has_jump(tmp_path):
    out = hatch(tmp_path, wave_polygon(), "wave", "--angle", "45")
    scan = parse_scanfile(open(out, "rb").read())
    assert np.any(scan.jump_flags()[1:])


def test_hatch_geometry_error_exit_2(tmp_path):
    poly_file = tmp_path / "bad.poly"
    poly_file.write_text("0 0\n1 0\n2 0\n")  # collinear: zero area
    rc = cli.main(["hatch", str(poly_file), "--out", str(tmp_path / "x.scan")])
    assert rc == 2


def test_polygon_file_field_error(tmp_path):
    poly_file = tmp_path / "bad.poly"
    poly_file.write_text("0 0 0\n1 0\n0 1\n")
    rc = cli.main(["hatch", str(poly_file), "--out", str(tmp_path / "x.scan")])
    assert rc == 2


# ----------------------------------------------------------------- simulate


def test_simulate_deterministic_and_counted(tmp_path, model_file):
    scan_file = hatch(tmp_path, square_polygon(5.0), "sq")
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    for out in (out1, out2):
        rc = cli.main(
            ["simulate", scan_file, model_file, "--seed", "5", "--out", str(out)]
        )
        assert rc == 0
    assert out1.read_bytes() == out2.read_bytes()
    # 56 lines x 5 mm at 800 mm/s = 0.35 s -> 700 samples at 2 kHz
    samples = read_signal_csv(out1)
    assert abs(len(samples) - 0.35 * 2000) <= 1


def test_simulate_sigma_zero_constant_lines(tmp_path, model_file):
    scan_file = hatch(tmp_path, square_polygon(5.0), "sq", "--power", "200")
    out = tmp_path / "quiet.csv"
    rc = cli.main(
        ["simulate", scan_file, model_file, "--sigma", "0", "--out", str(out)]
    )
    assert rc == 0
    by_line = {}
    for s in read_signal_csv(out):
        if s.valid:
            by_line.setdefault(s.line_index, set()).add(s.c1)
    assert all(len(vals) == 1 for vals in by_line.values())


def test_simulate_bad_scanfile_exit_2(tmp_path, model_file):
    bad = tmp_path / "bad.scan"
    bad.write_text("definitely not a scan file\n")
    rc = cli.main(["simulate", str(bad), model_file, "--out", str(tmp_path / "o.csv")])
    assert rc == 2


# ----------------------------------------------------------------- identify


def simulate_chunk(tmp_path, model_file, power, seed, name) -> str:
    scan_file = hatch(
        tmp_path, square_polygon(10.0), name, "--angle", "30",
        "--power", str(power),
    )
    out = tmp_path / f"{name}.csv"
    rc = cli.main(
        [
            "simulate", scan_file, model_file,
            "--sigma", "60", "--seed", str(seed), "--out", str(out),
        ]
    )
    assert rc == 0
    return str(out)


def test_identify_roundtrip_and_report(tmp_path, model_file, capsys):
    inputs = []
    for i, power in enumerate((150, 175, 200, 225)):
        for rep in range(2):
            path = simulate_chunk(
                tmp_path, model_file, power, seed=i * 10 + rep,
                name=f"chunk{power}_{rep}",
            )
            inputs.append(f"{power}={path}")
    out_model = tmp_path / "identified.json"
    rc = cli.main(["identify", *inputs, "--out", str(out_model)])
    assert rc == 0
    report = capsys.readouterr().out
    for token in ("c_inf:", "delta_c:", "r:", "R2="):
        assert token in report
    # the footprint asymptote must regress cleanly linear in power
    c_inf_line = next(l for l in report.splitlines() if l.startswith("c_inf:"))
    r2 = float(c_inf_line.split("R2=")[1].split()[0])
    assert r2 >= 0.8
    from meltctl.meltmodel import read_model_json

    m = read_model_json(out_model)
    truth = paper_default()
    assert m.c_inf_slope == pytest.approx(truth.c_inf_slope, rel=0.10)
    assert m.c_inf_intercept == pytest.approx(truth.c_inf_intercept, rel=0.10)
    assert m.dc_quad == pytest.approx(truth.dc_quad, rel=0.10)
    assert m.dc_lin == pytest.approx(truth.dc_lin, rel=0.10)
    assert m.dc_intercept == pytest.approx(truth.dc_intercept, rel=0.10)
    assert m.r_slope == pytest.approx(truth.r_slope, rel=0.10)


def test_identify_too_few_powers_exit_3(tmp_path, model_file):
    a = simulate_chunk(tmp_path, model_file, 175, seed=1, name="a")
    b = simulate_chunk(tmp_path, model_file, 200, seed=2, name="b")
    rc = cli.main(["identify", f"175={a}", f"200={b}", "--out", str(tmp_path / "m.json")])
    assert rc == 3


def test_identify_bad_label_exit_2(tmp_path, model_file):
    rc = cli.main(["identify", "nolabel.csv", "--out", str(tmp_path / "m.json")])
    assert rc == 2


# ----------------------------------------------------------------- optimize


def long_line_scanfile(tmp_path) -> str:
    # ten isolated long diagonals: no heat carry-over anywhere
    line = "-24 -24 24 24 200 800"
    path = tmp_path / "long.scan"
    path.write_text("\n".join([line] * 10) + "\n")
    return str(path)


def test_optimize_flat_profile_on_long_lines(tmp_path, model_file):
    scan_file = long_line_scanfile(tmp_path)
    out = tmp_path / "profile.csv"
    out_scan = tmp_path / "controlled.scan"
    rc = cli.main(
        [
            "optimize", scan_file, model_file,
            "--out", str(out), "--out-scan", str(out_scan),
        ]
    )
    assert rc == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "line,power_w,predicted_c1"
    powers = [float(r.split(",")[1]) for r in rows[1:]]
    assert np.allclose(powers, STEADY_STATE_W, atol=0.01)
    controlled = parse_scanfile(open(out_scan, "rb").read())
    original = parse_scanfile(open(scan_file, "rb").read())
    for a, b in zip(original.lines, controlled.lines):
        assert (a.start, a.end, a.speed) == (b.start, b.end, b.speed)
        assert b.power == pytest.approx(STEADY_STATE_W, abs=0.01)


def test_optimize_star_profile_dips_at_corners(tmp_path, model_file):
    scan_file = hatch(tmp_path, star_polygon(), "star", "--angle", "0")
    out = tmp_path / "profile.csv"
    rc = cli.main(
        [
            "optimize", scan_file, model_file,
            "--out", str(out), "--out-scan", str(tmp_path / "c.scan"),
        ]
    )
    assert rc == 0
    powers = np.array([float(r.split(",")[1]) for r in out.read_text().splitlines()[1:]])
    scan = parse_scanfile(open(scan_file, "rb").read())
    lengths = line_lengths(scan)
    # the shortest-line neighborhoods (star tips) demand the lowest powers
    tip_region = lengths < 2.0
    assert powers[1:][tip_region[:-1]].mean() < powers.mean() - 3.0


def test_optimize_unattainable_reference_saturates(tmp_path, model_file, capsys):
    scan_file = long_line_scanfile(tmp_path)
    out = tmp_path / "profile.csv"
    rc = cli.main(
        [
            "optimize", scan_file, model_file, "--cref", "5000",
            "--out", str(out), "--out-scan", str(tmp_path / "c.scan"),
        ]
    )
    assert rc == 0
    err = capsys.readouterr().err
    assert "not attainable" in err
    powers = [float(r.split(",")[1]) for r in out.read_text().splitlines()[1:]]
    assert np.allclose(powers, 225.0, atol=1e-9)


def test_optimize_nonconvergence_exit_4(tmp_path, model_file, monkeypatch):
    scan_file = long_line_scanfile(tmp_path)

    def stub(problem, **kwargs):
        return PowerProfile(
            powers=(200.0,) * problem.n_lines, cost=1.0, iterations=10_000,
            converged=False,
        )

    monkeypatch.setattr(cli.ffcontrol, "optimize_powers", stub)
    rc = cli.main(
        [
            "optimize", scan_file, model_file,
            "--out", str(tmp_path / "p.csv"), "--out-scan", str(tmp_path / "c.scan"),
        ]
    )
    assert rc == 4
    assert (tmp_path / "p.csv").exists()  # result still written, never silent


def test_profile_csv_feeds_apply_profile(tmp_path, model_file):
    from meltctl.ffcontrol import apply_profile

    scan_file = long_line_scanfile(tmp_path)
    out = tmp_path / "profile.csv"
    rc = cli.main(
        [
            "optimize", scan_file, model_file,
            "--out", str(out), "--out-scan", str(tmp_path / "c.scan"),
        ]
    )
    assert rc == 0
    profile = cli.read_profile_csv(out)
    scan = parse_scanfile(open(scan_file, "rb").read())
    controlled = apply_profile(scan, profile)
    reference = parse_scanfile(open(tmp_path / "c.scan", "rb").read())
    for a, b in zip(controlled.lines, reference.lines):
        assert a.power == pytest.approx(b.power, abs=1e-6)


def test_optimize_byte_identical_runs(tmp_path, model_file):
    scan_file = hatch(tmp_path, star_polygon(), "star", "--angle", "0")
    outs = []
    for tag in ("x", "y"):
        out = tmp_path / f"profile_{tag}.csv"
        rc = cli.main(
            [
                "optimize", scan_file, model_file,
                "--out", str(out), "--out-scan", str(tmp_path / f"c{tag}.scan"),
            ]
        )
        assert rc == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


# ----------------------------------------------------------------- evaluate


def test_evaluate_identical_inputs_ratio_one(tmp_path, model_file, capsys):
    scan_file = hatch(tmp_path, square_polygon(10.0), "sq", "--angle", "30")
    csv_path = tmp_path / "sig.csv"
    rc = cli.main(
        ["simulate", scan_file, model_file, "--seed", "3", "--out", str(csv_path)]
    )
    assert rc == 0
    out_dir = tmp_path / "eval"
    rc = cli.main(["evaluate", str(csv_path), str(csv_path), "--out", str(out_dir)])
    assert rc == 0
    report = (out_dir / "report.txt").read_text()
    assert "ratio: 1.000000" in report
    for name in ("baseline.svg", "controlled.svg"):
        svg = (out_dir / name).read_text()
        assert svg.count("<circle") == len(read_signal_csv(csv_path))
        assert "min=" in svg and "max=" in svg


def test_evaluate_byte_identical(tmp_path, model_file):
    scan_file = hatch(tmp_path, square_polygon(10.0), "sq", "--angle", "30")
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    cli.main(["simulate", scan_file, model_file, "--seed", "3", "--out", str(a)])
    cli.main(["simulate", scan_file, model_file, "--seed", "4", "--out", str(b)])
    blobs = []
    for d in ("e1", "e2"):
        out_dir = tmp_path / d
        rc = cli.main(["evaluate", str(a), str(b), "--out", str(out_dir)])
        assert rc == 0
        blobs.append(
            (out_dir / "report.txt").read_bytes()
            + (out_dir / "baseline.svg").read_bytes()
            + (out_dir / "controlled.svg").read_bytes()
        )
    assert blobs[0] == blobs[1]
