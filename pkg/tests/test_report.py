import json
import xml.etree.ElementTree as ET

import pytest

from qdecay import Schedule
from qdecay.experiments import Table, run_experiment
from qdecay.qlearning import RunConfig, run_chain
from qdecay.report import (
    OutputError,
    emit_outputs,
    load_report,
    render_svg,
    table_from_csv,
    table_to_csv,
    trajectory_table,
)

from conftest import small_config

SVG = "{http://www.w3.org/2000/svg}"


def test_csv_round_trip():
    t = Table(["name", "x", "k", "flag", "none"], [["a,b", 0.1 + 0.2, 3, True, None], ["c", -1e-300, -7, False, None]])
    text = table_to_csv(t)
    assert text.splitlines()[0] == "name,x,k,flag,none"
    back = table_from_csv(text)
    assert back.rows == t.rows and back.columns == t.columns


def test_emit_outputs(tmp_path):
    rep = run_experiment(small_config("compare_schedules"))
    written = emit_outputs(rep, tmp_path / "out")
    names = sorted(p.name for p in written)
    assert names == ["error_series.csv", "error_series.svg", "final_error.csv", "report.json"]
    assert load_report(tmp_path / "out").to_json() == rep.to_json()
    assert json.loads((tmp_path / "out" / "report.json").read_text())["kind"] == "compare_schedules"
    only = emit_outputs(rep, tmp_path / "json", "json")
    assert [p.name for p in only] == ["report.json"]
    with pytest.raises(ValueError):
        emit_outputs(rep, tmp_path, "pdf")


def test_emit_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        emit_outputs(run_experiment(small_config("pr_vs_tailpr")), tmp_path / d)
    for name in ("report.json", "pr_compare.csv", "pr_series.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_output_errors(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    rep = run_experiment(small_config("pr_vs_tailpr"))
    with pytest.raises(OutputError):
        emit_outputs(rep, blocker / "sub")
    with pytest.raises(OutputError):
        load_report(tmp_path / "missing")


@pytest.mark.parametrize("kind", ["compare_schedules", "qq_invariance", "clt_qq", "reward_sweep", "bounds_check"])
def test_svg_is_well_formed(kind):
    rep = run_experiment(small_config(kind))
    for fig in rep.figures:
        root = ET.fromstring(render_svg(rep.tables[fig["table"]], fig).encode())
        assert root.tag == f"{SVG}svg" and root.get("viewBox") == "0 0 640 420"
        marks = root.findall(f"{SVG}polyline") + root.findall(f"{SVG}circle")
        assert marks


def test_svg_log_axes_skip_nonpositive():
    t = Table(["x", "y"], [[0, 1.0], [1, 0.0], [10, 2.0], [100, 3.0]])
    fig = {"name": "f", "type": "line", "x": "x", "y": "y", "logx": True, "logy": True}
    root = ET.fromstring(render_svg(t, fig).encode())
    (line,) = root.findall(f"{SVG}polyline")
    assert len(line.get("points").split()) == 2


def test_svg_escapes_labels():
    t = Table(["x", "y", "g"], [[1, 1.0, "a<b"], [2, 2.0, "a<b"]])
    fig = {"name": "f", "title": "x & y", "type": "scatter", "x": "x", "y": "y", "group": "g"}
    ET.fromstring(render_svg(t, fig).encode())


def test_trajectory_table(grid, grid_q):
    traj = run_chain(RunConfig(grid, Schedule("pd2z", 0.05, nu=1.0), 50, record="error_series"), grid_q)
    t = trajectory_table(traj)
    assert t.columns == ["t", "eta", "sup_error"] and len(t.rows) == 50
    assert t.rows[-1][1] == 0.0
    full = run_chain(RunConfig(grid, Schedule("pd2z", 0.05, nu=1.0), 50, record="tail_iterates", tail=5), grid_q)
    comp = trajectory_table(full, components=True)
    assert len(comp.rows) == 5 and comp.rows[0][0] == 46 and len(comp.columns) == 2 + 64
    with pytest.raises(ValueError):
        trajectory_table(traj, components=True)
