"""Command-line workflow: synth -> calibrate -> simulate -> validate."""

import json
import os

import pytest

from qrlob.cli import main

HOURS = "0.05"  # three simulated minutes keeps the workflow fast


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def stream_dir(tmp_path_factory):
    d = str(tmp_path_factory.mktemp("synth"))
    assert run(["synth", "--preset", "paperlike", "--hours", "0.5", "--seed", "5", "--out", d]) == 0
    return d


def test_synth_writes_stream_and_manifest(stream_dir):
    assert os.path.exists(os.path.join(stream_dir, "stream.csv"))
    manifest = json.load(open(os.path.join(stream_dir, "manifest.json")))
    assert manifest["command"] == "synth"
    assert "stream.csv" in manifest["artifacts"]


def test_synth_deterministic(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    run(["synth", "--preset", "paperlike", "--hours", HOURS, "--seed", "9", "--out", a])
    run(["synth", "--preset", "paperlike", "--hours", HOURS, "--seed", "9", "--out", b])
    assert open(os.path.join(a, "stream.csv"), "rb").read() == open(os.path.join(b, "stream.csv"), "rb").read()


def test_synth_zero_duration_header_only(tmp_path):
    d = str(tmp_path / "z")
    run(["synth", "--preset", "paperlike", "--hours", "0", "--seed", "1", "--out", d])
    lines = open(os.path.join(d, "stream.csv")).readlines()
    assert len(lines) == 1 and lines[0].startswith("ts_ns,")


def test_calibrate_from_stream(stream_dir, tmp_path, capsys):
    out = str(tmp_path / "cal")
    code = run(["calibrate", "--input", os.path.join(stream_dir, "stream.csv"), "--out", out])
    assert code == 0
    assert os.path.exists(os.path.join(out, "bundle.json"))
    text = capsys.readouterr().out
    assert "transitions" in text and "populated states" in text


def test_calibrate_empty_file_exit_code(tmp_path, capsys):
    path = str(tmp_path / "empty.csv")
    from qrlob.ingest import HEADER

    open(path, "w").write(HEADER + "\n")
    code = run(["calibrate", "--input", path, "--out", str(tmp_path / "out")])
    assert code == 3
    err = capsys.readouterr().err
    assert "qrlob-error" in err and "EmptyDataset" in err


def test_calibrate_gmm_on_tiny_data_falls_back(stream_dir, tmp_path, capsys):
    out = str(tmp_path / "gmm")
    code = run(["calibrate", "--input", os.path.join(stream_dir, "stream.csv"), "--timing", "gmm", "--out", out])
    assert code == 0
    text = capsys.readouterr().out
    # a half-hour stream cannot populate every (state, event) cell at k=5
    assert "timing cells[" in text
    import re

    counts = {m.group(1): int(m.group(2)) for m in re.finditer(r"timing cells\[(\w+)\]: (\d+)", text)}
    assert sum(v for k, v in counts.items() if k != "cell") > 0


def test_simulate_deterministic_and_log_format(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    for d in (a, b):
        assert run(["simulate", "--preset", "paperlike", "--hours", HOURS, "--seed", "3", "--out", d]) == 0
    la = open(os.path.join(a, "events.csv"), "rb").read()
    lb = open(os.path.join(b, "events.csv"), "rb").read()
    assert la == lb
    header = la.decode().splitlines()[0]
    assert header == "t_ns,kind,side,level,volume_units,imb_bin,spread_class,mid_half_ticks,phi,origin"


def test_simulate_impact_flag_changes_log(tmp_path):
    a, b = str(tmp_path / "off"), str(tmp_path / "on")
    run(["simulate", "--preset", "paperlike", "--hours", "0.2", "--seed", "3", "--out", a])
    run(["simulate", "--preset", "paperlike", "--hours", "0.2", "--seed", "3", "--impact", "on", "--out", b])
    assert open(os.path.join(a, "events.csv"), "rb").read() != open(os.path.join(b, "events.csv"), "rb").read()


def test_validate_produces_reports(tmp_path):
    sim = str(tmp_path / "sim")
    run(["simulate", "--preset", "paperlike", "--hours", "0.5", "--seed", "4", "--out", sim])
    rep = str(tmp_path / "rep")
    code = run(["validate", "--log", os.path.join(sim, "events.csv"), "--delta-ns", "29512", "--out", rep])
    assert code == 0
    files = os.listdir(rep)
    assert "event_types.csv" in files
    assert "manifest.json" in files


def test_backtest_hft_sweep(tmp_path):
    d = str(tmp_path / "bt")
    code = run(
        [
            "backtest", "--preset", "paperlike", "--strategy", "hft",
            "--minutes", "2", "--seeds", "2", "--inventories", "2,4",
            "--qmax", "1", "--out", d,
        ]
    )
    assert code == 0
    from qrlob.stats import read_stat_csv

    meta, header, rows = read_stat_csv(os.path.join(d, "sweep.csv"))
    assert len(rows) == 2 * 2 * 1 * 2  # regimes x inventories x qmax x seeds
    assert "pnl_ticks" in header


def test_backtest_midfreq_unreachable_theta(tmp_path):
    d = str(tmp_path / "mf")
    code = run(
        [
            "backtest", "--preset", "paperlike", "--strategy", "midfreq",
            "--minutes", "2", "--seeds", "1", "--inventories", "3",
            "--qmax", "2", "--thetas", "1e18", "--out", d,
        ]
    )
    assert code == 0
    from qrlob.stats import read_stat_csv

    _, header, rows = read_stat_csv(os.path.join(d, "sweep.csv"))
    pnl_col = header.index("pnl_ticks")
    assert all(float(r[pnl_col]) == 0.0 for r in rows)


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        run(["impact-calibrate"])  # missing required --mode
    assert exc.value.code == 2


def test_config_file_overrides(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[synth]\nhours = 0\nseed = 4\n")
    d = str(tmp_path / "out")
    assert run(["--config", str(cfg), "synth", "--preset", "paperlike", "--out", d]) == 0
    lines = open(os.path.join(d, "stream.csv")).readlines()
    assert len(lines) == 1  # hours=0 came from the config file
