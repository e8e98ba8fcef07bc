import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from ptsym import cli
from ptsym.classical import analytic_period


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def table(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


def footer(text):
    return dict(ln[2:].split("=", 1) for ln in text.splitlines()
                if ln.startswith("# ") and "=" in ln and not ln.startswith("# turn_event"))


# ---------------------------------------------------------------- parsing

@pytest.mark.parametrize("text, expected", [
    ("0:1:0.25", [0.0, 0.25, 0.5, 0.75, 1.0]),
    ("0.05:0.95:0.05", [round(0.05 * k, 12) for k in range(1, 20)]),
    ("0:1:0.3", [0.0, 0.3, 0.6, 0.9]),
    ("0:1.04:0.25", [0.0, 0.25, 0.5, 0.75, 1.0]),
    ("0.5,1,2", [0.5, 1.0, 2.0]),
])
def test_grid_syntax(text, expected):
    assert cli.parse_grid(text) == expected


@pytest.mark.parametrize("text", ["0:1", "0:1:0", "1:0:0.1", "1,1", ""])
def test_bad_grids(text):
    with pytest.raises(cli.UsageError):
        cli.parse_grid(text)


def test_k_ranges():
    assert cli.parse_k_range("0..3") == [0, 1, 2, 3]
    assert cli.parse_k_range("-2..-1") == [-2, -1]
    assert cli.parse_k_range("4") == [4]
    assert cli.parse_k_range("1,5") == [1, 5]
    for bad in ("3..1", "a", "1..b"):
        with pytest.raises(cli.UsageError):
            cli.parse_k_range(bad)


# --------------------------------------------------------------- geometry

def test_wedge_centres_at_eps_zero(capsys):
    code, out, _ = run(capsys, "wedges", "--k", "0..3", "--epsilon", "0")
    assert code == 0
    centres = [float(r["theta_center"]) for r in table(out)]
    np.testing.assert_allclose(centres, [0, math.pi, 2 * math.pi, 3 * math.pi], atol=1e-15)


@pytest.mark.parametrize("eps, centre", [("4", 3 * math.pi / 4), ("8", math.pi / 3)])
def test_wedge_two_centre(capsys, eps, centre):
    code, out, _ = run(capsys, "wedges", "--k", "2", "--epsilon", eps)
    assert code == 0 and float(table(out)[0]["theta_center"]) == pytest.approx(centre, abs=1e-14)


def test_negative_k_needs_equals_sign(capsys):
    code, out, _ = run(capsys, "turning-points", "--k=-1..0", "--epsilon", "0")
    assert code == 0
    assert [float(r["re_x"]) for r in table(out)] == pytest.approx([-1.0, 1.0])


def test_transition_table(capsys):
    code, out, _ = run(capsys, "transitions", "--k", "2")
    rows = table(out)
    assert code == 0
    assert [(r["kind"], r["exact"]) for r in rows] == [("exit", "1/2"), ("entry", "3/2"),
                                                       ("exit", "5"), ("entry", "7")]


# ---------------------------------------------------------------- orbits

def test_harmonic_orbit(capsys):
    code, out, _ = run(capsys, "orbit", "--k", "0", "--epsilon", "0", "--every", "50")
    info = footer(out)
    assert code == 0
    assert float(info["period"]) == pytest.approx(math.pi, rel=1e-10)
    assert info["pt_symmetric"] == "true" and info["status"] == "closed"
    rows = table(out)
    assert list(rows[0]) == cli.ORBIT_COLUMNS
    assert float(rows[0]["re_x"]) == pytest.approx(1.0)


def test_cubic_orbit(capsys):
    code, out, _ = run(capsys, "orbit", "--k", "0", "--epsilon", "1", "--every", "100")
    assert code == 0 and float(footer(out)["period"]) == pytest.approx(2.4286, abs=1e-4)


def test_region_two_orbit_reports_a_consistent_classification(capsys):
    code, out, _ = run(capsys, "orbit", "--k", "1", "--epsilon", "2", "--t-max", "1e4", "--every", "1000")
    info = footer(out)
    assert code == 0
    assert info["status"] in {"closed", "open", "escaped"}
    if info["closed"] == "true":
        assert float(info["period"]) > 0
    assert not (info["pt_symmetric"] == "true" and info["reached_conjugate"] == "true")


def test_open_orbit_is_not_an_error(capsys):
    code, out, _ = run(capsys, "orbit", "--k", "1", "--epsilon", "0.5", "--t-max", "0.5")
    info = footer(out)
    assert code == 0 and info["closed"] == "false" and info["period"] == ""


def test_orbit_json_carries_summary(capsys):
    code, out, _ = run(capsys, "orbit", "--k", "0", "--epsilon", "0", "--format", "json", "--every", "200")
    env = json.loads(out)
    assert code == 0 and env["summary"]["closed"] is True
    assert env["summary"]["turn_events"]


# --------------------------------------------------------------- periods

def test_wedge_zero_periods_match_closed_form(capsys):
    code, out, _ = run(capsys, "period-scan", "--k", "0", "--grid", "0:4:0.5")
    rows = table(out)
    assert code == 0 and list(rows[0]) == cli.PERIOD_COLUMNS
    for r in rows:
        assert float(r["period"]) == pytest.approx(analytic_period(float(r["epsilon"])), rel=1e-6)
        assert float(r["analytic_period"]) == pytest.approx(float(r["period"]), rel=1e-6)
        assert r["wall_time"] == ""


@pytest.mark.slow
@pytest.mark.parametrize("K, grid", [(1, "0.05:0.95:0.1"), (2, "0.05:0.45:0.05")])
def test_region_one_periods_fall(capsys, K, grid):
    code, out, _ = run(capsys, "period-scan", "--k", str(K), "--grid", grid)
    periods = [float(r["period"]) for r in table(out)]
    assert code == 0 and len(periods) == len(cli.parse_grid(grid))
    assert all(b < a for a, b in zip(periods, periods[1:]))


def test_period_failures_stay_in_rows(capsys):
    code, out, _ = run(capsys, "period-scan", "--k", "1", "--grid", "0.5,0.6", "--t-max", "0.5")
    rows = table(out)
    assert code == 0 and [r["status"] for r in rows] == ["open", "open"]


def test_timing_fills_wall_time(capsys):
    code, out, _ = run(capsys, "period-scan", "--k", "0", "--grid", "0,1", "--timing")
    assert code == 0 and all(float(r["wall_time"]) > 0 for r in table(out))


# -------------------------------------------------------------- spectra

def test_harmonic_spectrum(capsys):
    code, out, _ = run(capsys, "spectrum", "--epsilon", "0", "--k-pair", "0", "--emax", "16")
    rows = table(out)
    assert code == 0 and list(rows[0]) == cli.SPECTRUM_COLUMNS
    np.testing.assert_allclose([float(r["re_E"]) for r in rows], [1, 3, 5, 7, 9, 11, 13, 15], atol=1e-6)
    assert all(r["is_real"] == "true" for r in rows)


def test_empty_spectrum_is_header_only(capsys):
    code, out, _ = run(capsys, "spectrum", "--epsilon", "2", "--k-pair", "1", "--emax", "30")
    assert code == 0
    assert out == ",".join(cli.SPECTRUM_COLUMNS) + "\n"


def test_reflected_pair_spectrum(capsys):
    _, a, _ = run(capsys, "spectrum", "--epsilon", "4", "--k-pair", "1", "--emax", "30")
    _, b, _ = run(capsys, "spectrum", "--epsilon", "4", "--k-pair", "0", "--emax", "30")
    ea = [float(r["re_E"]) for r in table(a)]
    eb = [float(r["re_E"]) for r in table(b)]
    assert len(ea) == len(eb) == 3
    np.testing.assert_allclose(ea, eb, atol=1e-4)


def test_spectrum_with_complex_box(capsys):
    code, out, _ = run(capsys, "spectrum", "--epsilon", "0.6", "--k-pair", "1", "--emax", "12", "--im-max", "10")
    rows = table(out)
    assert code == 0
    E = [complex(float(r["re_E"]), float(r["im_E"])) for r in rows]
    assert [int(r["branch_label"]) for r in rows] == list(range(len(rows)))
    assert sum(r["is_real"] == "true" for r in rows) == 1
    complex_ones = [z for z in E if abs(z.imag) > 1e-6]
    assert len(complex_ones) == 4
    for z in complex_ones:
        assert min(abs(w - z.conjugate()) for w in E) < 1e-6


def test_numerical_failure_exit_code(capsys):
    code, _, err = run(capsys, "spectrum", "--epsilon", "0", "--emax", "2", "--tol", "1e-30")
    assert code == cli.EXIT_NUMERIC and "numerical failure" in err


@pytest.mark.parametrize("argv", [
    ["spectrum", "--epsilon", "1", "--emin", "5", "--emax", "2"],
    ["spectrum", "--epsilon", "-1"],
    ["spectrum", "--epsilon", "1", "--im-max", "0.001"],
    ["period-scan", "--k", "0", "--grid", "1,0.5"],
    ["period-scan", "--k", "0", "--grid", "0:1:0.5", "--workers", "0"],
    ["orbit", "--k", "0..1", "--epsilon", "0"],
    ["orbit", "--k", "0", "--epsilon", "0", "--every", "0"],
    ["spectrum-scan", "--grid=-1:0:0.5"],
    ["verify", "--only", "x"],
])
def test_usage_errors_exit_one(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == cli.EXIT_USAGE and "error" in err


def test_argparse_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["wedges"])
    assert info.value.code == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        cli.main(["no-such-command"])
    assert info.value.code == cli.EXIT_USAGE


# ---------------------------------------------------------------- scans

@pytest.mark.slow
def test_scan_on_wedge_zero_is_all_real(capsys):
    code, out, _ = run(capsys, "spectrum-scan", "--k-pair", "0", "--grid", "0:4:0.5",
                       "--emax", "20", "--e-step", "0.1")
    rows = table(out)
    assert code == 0 and list(rows[0]) == cli.SCAN_COLUMNS
    assert all(r["is_real"] == "true" and r["status"] == "ok" for r in rows)
    assert sorted({float(r["epsilon"]) for r in rows}) == cli.parse_grid("0:4:0.5")


def test_scan_real_count_column(capsys):
    code, out, _ = run(capsys, "spectrum-scan", "--k-pair", "1", "--grid", "0,0.5,2",
                       "--emax", "10", "--e-step", "0.1")
    rows = table(out)
    counts = {float(r["epsilon"]): int(r["real_count"]) for r in rows}
    assert code == 0 and counts[0.0] == 5 and counts[2.0] == 0
    for e, n in counts.items():
        assert n == sum(1 for r in rows if float(r["epsilon"]) == e and r["is_real"] == "true")
    assert [r["status"] for r in rows if float(r["epsilon"]) == 2.0] == ["degenerate"]


SCAN_ARGS = ["spectrum-scan", "--k-pair", "0", "--emax", "8", "--e-step", "0.1"]


def test_json_envelope_round_trip(capsys, tmp_path):
    path = tmp_path / "scan.json"
    code, _, _ = run(capsys, *SCAN_ARGS, "--grid", "0:0.6:0.3", "--format", "json", "--out", str(path))
    env = json.loads(path.read_text())
    assert code == 0 and set(env) == {"version", "config", "wall_time_s", "rows"}
    assert env["wall_time_s"] is None and env["config"]["command"] == "spectrum-scan"
    argv = cli.config_to_argv(env["config"])
    again = tmp_path / "again.json"
    code, _, _ = run(capsys, *argv, "--format", "json", "--out", str(again))
    assert code == 0 and again.read_bytes() == path.read_bytes()


def test_resume_continues_a_scan(capsys, tmp_path):
    first = tmp_path / "first.json"
    run(capsys, *SCAN_ARGS, "--grid", "0:0.4:0.2", "--format", "json", "--out", str(first))
    code, out, _ = run(capsys, *SCAN_ARGS, "--grid", "0:0.8:0.2", "--resume", str(first))
    resumed = table(out)
    _, direct_out, _ = run(capsys, *SCAN_ARGS, "--grid", "0:0.8:0.2")
    direct = table(direct_out)
    assert code == 0
    assert [(r["epsilon"], r["branch_label"]) for r in resumed] == \
        [(r["epsilon"], r["branch_label"]) for r in direct]
    np.testing.assert_allclose([float(r["re_E"]) for r in resumed], [float(r["re_E"]) for r in direct],
                               atol=1e-9)


def test_resume_rejects_corrupt_files(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, _, err = run(capsys, *SCAN_ARGS, "--grid", "0:1:0.5", "--resume", str(bad))
    assert code == cli.EXIT_USAGE and "cannot read resume file" in err

    bad.write_text(json.dumps({"rows": []}))
    code, _, err = run(capsys, *SCAN_ARGS, "--grid", "0:1:0.5", "--resume", str(bad))
    assert code == cli.EXIT_USAGE and "not a result envelope" in err

    missing = tmp_path / "missing.json"
    code, _, err = run(capsys, *SCAN_ARGS, "--grid", "0:1:0.5", "--resume", str(missing))
    assert code == cli.EXIT_USAGE


def test_resume_rejects_mismatched_runs(capsys, tmp_path):
    first = tmp_path / "first.json"
    run(capsys, *SCAN_ARGS, "--grid", "0:0.2:0.2", "--format", "json", "--out", str(first))
    code, _, err = run(capsys, "spectrum-scan", "--k-pair", "1", "--emax", "8", "--e-step", "0.1",
                       "--grid", "0:1:0.5", "--resume", str(first))
    assert code == cli.EXIT_USAGE and "k_pair" in err

    env = json.loads(first.read_text())
    env["rows"][0]["re_E"] = "abc"
    first.write_text(json.dumps(env))
    code, _, err = run(capsys, *SCAN_ARGS, "--grid", "0:1:0.5", "--resume", str(first))
    assert code == cli.EXIT_USAGE and "malformed" in err

    env["config"]["command"] = "spectrum"
    first.write_text(json.dumps(env))
    code, _, err = run(capsys, *SCAN_ARGS, "--grid", "0:1:0.5", "--resume", str(first))
    assert code == cli.EXIT_USAGE and "not spectrum-scan" in err


def test_worker_count_does_not_change_bytes(capsys):
    args = ["period-scan", "--k", "1", "--grid", "0.2,0.4,0.6"]
    _, one, _ = run(capsys, *args, "--workers", "1", "--format", "json")
    _, three, _ = run(capsys, *args, "--workers", "3", "--format", "json")
    assert one == three


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ptsym.cli", "wedges", "--k", "1", "--epsilon", "0"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert table(proc.stdout)[0]["theta_center"] == repr(math.pi)


def test_verify_single_criterion(capsys):
    code, out, _ = run(capsys, "verify", "--only", "4")
    assert code == 0
    lines = [ln for ln in out.splitlines() if ln.strip()]
    assert len(lines) == 1 and "pass" in lines[0].lower()
