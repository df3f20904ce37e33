"""Report subcommand: delimited output plus rendered figures."""

import csv
import json

from rewind.cli import main
from rewind.report import overhead_report, race_search_report


def test_race_search_report_writes_csv_and_figure(tmp_path):
    summary = race_search_report(trials=5, out_dir=tmp_path, seed=3)
    assert summary["trials"] == 5
    csv_path = tmp_path / "race_search.csv"
    fig_path = tmp_path / "race_search_attempts.png"
    assert csv_path.exists() and fig_path.exists()
    assert fig_path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    rows = list(csv.DictReader(csv_path.open()))
    assert len(rows) == 5
    assert set(rows[0]) == {"trial", "manifested", "attempts", "outcome"}


def test_overhead_report_writes_csv_and_figure(tmp_path):
    summary = overhead_report(runs=2, out_dir=tmp_path, iters=30)
    assert summary["runs"] == 2
    assert (tmp_path / "overhead.csv").exists()
    png = tmp_path / "overhead.png"
    assert png.exists() and png.read_bytes()[:4] == b"\x89PNG"
    assert summary["ratio"] > 0


def test_report_subcommand_cli(tmp_path, capsys):
    code = main(["report", "race-search", "--trials", "3",
                 "--out", str(tmp_path), "--seed", "1"])
    out = capsys.readouterr().out.strip().splitlines()
    assert code == 0
    parsed = json.loads(out[-1])
    assert parsed["trials"] == 3
    assert (tmp_path / "race_search_attempts.png").exists()
