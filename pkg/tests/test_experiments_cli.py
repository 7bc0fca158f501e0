import dataclasses
import json

import pytest

from focallab import cli
from focallab.config import ConfigError, ExperimentConfig, dump_config, parse_config, with_overrides
from focallab.experiments import aggregate_lookup, cmd_run, cmd_sweep, read_table
from focallab.losses import LossKind
from focallab.plotting import svg_bar_total
from focallab.trainer import BiasSource

from conftest import small_config


def test_config_round_trip(tmp_path):
    cfg = small_config(tmp_path)
    assert parse_config(dump_config(cfg)) == cfg
    assert parse_config(dump_config(ExperimentConfig())) == ExperimentConfig()


def test_config_unknown_key():
    with pytest.raises(ConfigError, match=r"\[train\] gama: unknown key"):
        parse_config("[train]\ngama = 2\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[nope]\n")


def test_config_bad_value():
    with pytest.raises(ConfigError, match=r"\[gen\]"):
        parse_config("[gen]\nbias_rate = 2.0\n")


def test_overrides_set_bias_source():
    cfg = with_overrides(ExperimentConfig(), loss="dfl")
    assert cfg.train.loss.kind is LossKind.DEBIASED_FOCAL
    assert cfg.train.bias_model_source is BiasSource.TRAIN_SHORTCUT_ONLY_FIRST
    back = with_overrides(cfg, loss="focal", early_stopping=False)
    assert back.train.bias_model_source is BiasSource.NONE and not back.train.early_stopping


def test_run_artifacts(small_experiment):
    res = cmd_run(small_experiment, 2.0, 40, 1)
    assert res.status == "ok"
    run_dir = small_experiment.experiment_dir / "runs" / "g2_i40_s1"
    for name in ("history.csv", "eval.csv", "params.ckpt", "prob_hist.csv", "loss_hist.csv", "manifest.json"):
        assert (run_dir / name).exists(), name
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["baseline"] is False


def test_run_without_corpus(tmp_path):
    with pytest.raises(FileNotFoundError, match="manifest.json"):
        cmd_run(small_config(tmp_path), 0.0, 0, 0)


@pytest.fixture(scope="module")
def swept(small_experiment):
    results = cmd_sweep(small_experiment)
    return small_experiment, results


def test_sweep_tables(swept):
    cfg, results = swept
    assert len(results) == 8 and all(r.status == "ok" for r in results)
    runs, aggs = read_table(cfg.experiment_dir / "table2.csv")
    assert len(runs) == 8
    assert len(aggs) == 4 * 3
    runs1, aggs1 = read_table(cfg.experiment_dir / "table1.csv")
    assert len(runs1) == 4 and len(aggs1) == 2 * 3
    _, aggs4 = read_table(cfg.experiment_dir / "table4.csv")
    assert len(aggs4) == 4 * 6
    assert all(int(a["n_runs"]) == 2 for a in aggs)


def test_sweep_deterministic(swept, tmp_path):
    cfg, _ = swept
    first = {n: (cfg.experiment_dir / n).read_bytes() for n in ("results.csv", "table1.csv", "table2.csv", "table4.csv")}
    cmd_sweep(cfg)
    for n, data in first.items():
        assert (cfg.experiment_dir / n).read_bytes() == data, n


def test_cli_report_and_plot(swept, capsys):
    cfg, _ = swept
    cfg_path = cfg.experiment_dir / "config.ini"
    assert cli.main(["report", "--config", str(cfg_path)]) == 0
    assert "table1.csv" in capsys.readouterr().out
    assert cli.main(["plot", "--config", str(cfg_path)]) == 0
    run_dir = cfg.experiment_dir / "runs" / "g0_i0_s0"
    n_test = cfg.gen.n_test
    assert svg_bar_total(run_dir / "prob_hist.svg") == n_test
    assert svg_bar_total(run_dir / "loss_hist.svg") == n_test
    assert (cfg.experiment_dir / "focal_curves.svg").exists()


def test_plot_is_byte_stable(swept):
    cfg, _ = swept
    run_dir = cfg.experiment_dir / "runs" / "g0_i0_s0"
    cli.main(["plot", str(run_dir), "--config", str(cfg.experiment_dir / "config.ini")])
    a = (run_dir / "prob_hist.svg").read_bytes()
    cli.main(["plot", str(run_dir), "--config", str(cfg.experiment_dir / "config.ini")])
    assert (run_dir / "prob_hist.svg").read_bytes() == a


def test_cli_run_prints_json(small_experiment, capsys):
    code = cli.main(["run", "--config", str(small_experiment.experiment_dir / "config.ini"),
                     "--gamma", "0.5", "--seed", "0"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["run"] == "g0.5_i0_s0" and out["status"] == "ok"


def test_cli_missing_config(tmp_path, capsys):
    assert cli.main(["generate", "--config", str(tmp_path / "none.ini")]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError"


def test_cli_report_before_sweep(tmp_path, capsys):
    cfg = small_config(tmp_path)
    path = tmp_path / "c.ini"
    path.write_text(dump_config(dataclasses.replace(cfg, name="empty")))
    assert cli.main(["report", "--config", str(path)]) == 1
    assert "sweep" in json.loads(capsys.readouterr().err)["message"]


def test_aggregate_lookup_reads_results_csv(swept):
    cfg, _ = swept
    table = aggregate_lookup(cfg.experiment_dir / "table2.csv")
    long = aggregate_lookup(cfg.experiment_dir / "results.csv")
    assert set(table) < set(long)
    for key, value in table.items():
        assert long[key] == value
    assert (0.0, 0, "test_mean_abs_p_minus_half") in long
