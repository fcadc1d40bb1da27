import numpy as np
import pytest

from qdecay.errors import ConfigError, NumericFailureError
from qdecay.experiments import (
    KINDS,
    ExperimentConfig,
    ExperimentReport,
    Table,
    default_config,
    load_config,
    misspecified_steps,
    run_experiment,
)

from conftest import SMALL, small_config


def test_every_kind_has_a_small_config():
    assert set(SMALL) == set(KINDS)


@pytest.mark.parametrize("kind", KINDS)
def test_small_runs_are_reproducible(kind):
    a = run_experiment(small_config(kind))
    b = run_experiment(small_config(kind), threads=4)
    assert a.to_json() == b.to_json()
    assert a.kind == kind and a.checks and a.tables
    for fig in a.figures:
        assert fig["table"] in a.tables


@pytest.mark.parametrize("kind", KINDS)
def test_report_json_round_trip(kind):
    rep = run_experiment(small_config(kind))
    again = ExperimentReport.from_json(rep.to_json())
    assert again.to_json() == rep.to_json()
    assert again.passed == rep.passed


def test_seed_changes_results():
    a = run_experiment(small_config("compare_schedules"))
    b = run_experiment(small_config("compare_schedules", seed=8))
    assert a.tables["final_error"].rows != b.tables["final_error"].rows


def test_single_replicate_has_zero_sd():
    rep = run_experiment(small_config("compare_schedules", B=1))
    assert all(sd == 0.0 for sd in rep.tables["final_error"].column("sd_final"))


def test_compare_schedules_orders_schedules():
    rep = run_experiment(small_config("compare_schedules"))
    finals = {r["schedule"]: r["mean_final"] for r in rep.tables["final_error"].where()}
    assert finals["pd2z:0.05,1"] < finals["const:0.05"]
    ts = [r["t"] for r in rep.tables["error_series"].where(schedule="const:0.05")]
    assert ts[0] == 0 and ts[-1] == 300 and all(b - a <= 10 for a, b in zip(ts, ts[1:]))


def test_final_error_slopes_table():
    rep = run_experiment(small_config("final_error_vs_n"))
    slopes = {r["schedule"]: r for r in rep.tables["slopes"].where()}
    assert slopes["pd2z:0.05,1"]["theory"] == -0.25
    assert slopes["pd2z:0.05,1"]["slope"] < slopes["const:0.05"]["slope"]


def test_final_error_needs_three_horizons():
    with pytest.raises(ConfigError):
        run_experiment(small_config("final_error_vs_n", n_grid=[100, 200]))


def test_minimum_sample_sizes():
    with pytest.raises(ConfigError):
        run_experiment(small_config("qq_invariance", B=50))
    with pytest.raises(ConfigError):
        run_experiment(small_config("clt_qq", B=100))


def test_pr_compare_records_window():
    rep = run_experiment(small_config("pr_vs_tailpr"))
    rows = rep.tables["pr_compare"].where(n=400)
    assert rows[0]["window"] == 20 and rows[0]["steps"] == 400


def test_misspecified_horizon():
    assert misspecified_steps(5000, 0.5) == 5000 - 35
    assert misspecified_steps(100, 0.0) == 100
    with pytest.raises(ConfigError):
        misspecified_steps(100, -1.0)
    rep = run_experiment(small_config("pr_vs_tailpr", options={"misspec": 0.5}))
    assert rep.tables["pr_compare"].where(n=400)[0]["steps"] == 390


def test_bounds_check_scalars():
    rep = run_experiment(small_config("bounds_check"))
    assert rep.scalars["lemma_violations"] == 0
    assert rep.scalars["c3"] == pytest.approx(0.87925)
    assert rep.check("lemma violations").passed


def test_reward_sweep_flags_inadmissible_eta():
    rep = run_experiment(small_config("reward_sweep"))
    bound = rep.scalars["admissible_eta_bound"]
    for r in rep.tables["reward_sweep"].where():
        assert r["admissible"] == (r["eta"] < bound)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="nope")
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="clt_qq", B=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="clt_qq", n_grid=[200, 100])
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "clt_qq", "colour": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="clt_qq", mdp={"other": 1})
    bad = tmp_path / "bad.yaml"
    bad.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    with pytest.raises(ConfigError):
        run_experiment(small_config("compare_schedules", schedules=["pd2z:0.05"]))


def test_config_round_trip(tmp_path):
    import yaml

    cfg = small_config("bootstrap_coverage")
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(cfg.to_dict()))
    assert load_config(path) == cfg


def test_repository_configs_load():
    from pathlib import Path

    paths = sorted((Path(__file__).parent.parent / "configs").glob("*.yaml"))
    assert len(paths) >= 9
    for p in paths:
        assert load_config(p).kind in KINDS


@pytest.mark.parametrize("kind", KINDS)
def test_defaults_are_valid(kind):
    assert default_config(kind).kind == kind


def test_mdp_from_file(tmp_path, grid):
    from qdecay.experiments import build_mdp
    from qdecay.mdp import save_mdp

    path = save_mdp(grid, tmp_path / "m.json")
    cfg = small_config("pr_vs_tailpr", mdp={"file": str(path)})
    m = build_mdp(cfg)
    assert np.array_equal(m.transition, grid.transition)
    with pytest.raises(ConfigError):
        build_mdp(small_config("pr_vs_tailpr", mdp={"file": str(tmp_path / "none.json")}))


def test_validate_rejects_non_finite():
    rep = ExperimentReport("clt_qq", {}, tables={"t": Table(["x"], [[float("nan")]])})
    with pytest.raises(NumericFailureError):
        rep.validate()


def test_table_helpers():
    t = Table(["a", "b"])
    t.add(np.int64(1), np.float64(2.5))
    t.add(2, True)
    assert t.rows[0] == [1, 2.5] and type(t.rows[0][0]) is int
    assert t.column("b") == [2.5, True]
    assert t.where(a=2) == [{"a": 2, "b": True}]
    with pytest.raises(ValueError):
        t.add(1)
