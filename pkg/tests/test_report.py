import re

import pytest

from subtask_induction.harness import TrialRecord
from subtask_induction.report import CSV_COLUMNS, summarize, svg_chart, table, to_csv, write_report


def rec(mode, n, seed, acc, status="ok"):
    return TrialRecord({}, "h", mode, n, seed, status=status, test_acc=acc)


def grid(modes=("induction", "scratch"), sizes=(0, 10, 100), seeds=(0, 1, 2)):
    return [rec(m, n, s, 0.1 * (i + 1) + 0.01 * s) for i, m in enumerate(modes)
            for n in sizes for s in seeds]


def test_summary_statistics():
    rows = summarize(grid())
    r = next(r for r in rows if r["mode"] == "scratch" and r["n_disambig"] == 10)
    assert r["n_seeds"] == 3
    assert r["mean_acc"] == pytest.approx(0.21)
    assert r["std_acc"] == pytest.approx(0.01)  # sample std of 0.20, 0.21, 0.22
    assert summarize([rec("induction", 5, 0, 0.5)])[0]["std_acc"] == 0.0


def test_failed_trials_excluded():
    rows = summarize([rec("scratch", 0, 0, 0.4), rec("scratch", 0, 1, None, status="failed")])
    assert rows[0]["n_seeds"] == 1


def test_csv_schema():
    text = to_csv(summarize(grid()))
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert len(text.splitlines()) == 1 + 6


def test_svg_curves_and_ticks():
    sizes = (0, 10, 30, 100, 300, 1000, 3000, 10000)
    svg = svg_chart(summarize(grid(("induction", "full-transfer", "random-subnet", "scratch"), sizes)))
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert len(re.findall(r'<path d="M[^"]*" fill="none" stroke="#', svg)) == 4
    assert svg.count("<circle") == 32
    for k in range(1, 5):
        assert f">10^{k}<" in svg


def test_svg_log_spacing():
    svg = svg_chart(summarize(grid(sizes=(10, 100, 1000), seeds=(0,))))
    xs = sorted({float(x) for x in re.findall(r'<circle cx="([\d.]+)"', svg)})
    assert xs[1] - xs[0] == pytest.approx(xs[2] - xs[1], abs=0.2)


def test_svg_deterministic(tmp_path):
    a = write_report(grid(), tmp_path / "a")
    b = write_report(grid(), tmp_path / "b")
    assert a["svg"].read_bytes() == b["svg"].read_bytes()
    assert a["csv"].read_bytes() == b["csv"].read_bytes()


def test_table_and_empty():
    t = table(summarize(grid()))
    assert t.splitlines()[0].split() == ["mode", "0", "10", "100"]
    with pytest.raises(ValueError):
        write_report([], "/tmp/never-written")
