import json

import pytest

from pathsec import experiment
from pathsec.errors import ConfigError, MissingArtifactError

SMALL = dict(n_windows=12, N=256, burst_len=32, cs_seeds=2, cs_N=128, seed=3)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = experiment.ExperimentConfig(**SMALL, output_dir=str(out))
    return cfg, experiment.run_experiment(cfg)


def test_metric_sanity(small_run):
    cfg, rep = small_run
    rep.check()
    d = rep.detection
    assert d["false_positive_windows"] + d["true_negative_windows"] == d["unlabeled_windows"]
    for row in rep.per_suite.values():
        assert row["detected"] + row["false_neg"] == row["instances"]
    assert rep.classification["classified_high_conf"] <= rep.classification["forwarded"]
    assert rep.gating_consistent is True
    assert rep.failed_windows == 0


def test_runtimes_kept_separate(small_run):
    cfg, rep = small_run
    out = json.loads((experiment.Path(cfg.output_dir) / "metrics.json").read_text())
    assert "runtime" not in out
    rt = json.loads((experiment.Path(cfg.output_dir) / "runtimes.json").read_text())
    assert rt["gated"]["classify_seconds"] > 0 and rt["ungated"]["classify_seconds"] > 0


def test_byte_identical_reports(small_run, tmp_path):
    cfg, _ = small_run
    again = experiment.ExperimentConfig(**SMALL, output_dir=str(tmp_path / "again"), workers=2)
    experiment.run_experiment(again)
    a = (experiment.Path(cfg.output_dir) / "metrics.json").read_bytes()
    b = (tmp_path / "again" / "metrics.json").read_bytes()
    assert a == b


def test_baseline_only_run(tmp_path):
    cfg = experiment.ExperimentConfig(n_windows=20, N=256, injected_fraction=0.0, cs_seeds=1, cs_N=64,
                                      gating="on", output_dir=str(tmp_path))
    rep = experiment.run_experiment(cfg)
    assert rep.detection["detected"] == 0 and rep.detection["instances"] == 0
    assert rep.detection["unlabeled_windows"] == 20
    assert rep.detection["false_positive_rate"] is not None
    manifest = experiment.read_manifest(tmp_path / "plots")
    assert manifest["figures"]["fig07"] is None and manifest["figures"]["fig08"] is None
    assert set(manifest["absent"]) == {"fig07", "fig08"}


def test_gating_halves_classification_work(tmp_path):
    cfg = experiment.ExperimentConfig(n_windows=4, N=256, burst_len=32, injected_fraction=0.5,
                                      events_per_window=1, cs_seeds=1, cs_N=64, output_dir=str(tmp_path))
    rep = experiment.run_experiment(cfg)
    rt = rep.runtime
    assert rt["gated"]["windows_classified"] == 2 and rt["ungated"]["windows_classified"] == 4
    assert 0.2 < rt["classify_ratio"] < 0.8


def test_plots_round_trip(small_run):
    cfg, rep = small_run
    plots = experiment.Path(cfg.output_dir) / "plots"
    manifest = experiment.read_manifest(plots)["figures"]
    assert set(manifest) == set(experiment.FIGURES)
    for name, path in manifest.items():
        rows = experiment.read_plot_csv(path)
        assert rows, name
    sweep = experiment.read_plot_csv(manifest["fig10"])
    assert [r["ratio"] for r in sweep] == [0.1, 0.2, 0.3, 0.5]
    spe = experiment.read_plot_csv(manifest["fig11"])
    assert len(spe) == 19 * cfg.n_windows
    pct = experiment.read_plot_csv(manifest["fig06"])
    assert sum(r["percent"] for r in pct) == pytest.approx(100.0)


def test_emit_plots_lists_missing_stages(tmp_path):
    with pytest.raises(MissingArtifactError, match="features.*spe.*runtimes"):
        experiment.emit_plots(tmp_path)


def test_cs_sweep_trend(catalog):
    rows, times = experiment.cs_sweep(catalog, (0.1, 0.2, 0.3, 0.5), 10, N=256)
    mse = [r["mse_mean"] for r in rows]
    assert experiment.is_nonincreasing(mse)
    assert all(t > 0 for t in times)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        experiment.ExperimentConfig.from_dict({"n_windowz": 3})
    with pytest.raises(ConfigError):
        experiment.ExperimentConfig(beta=1.5).validate()
    with pytest.raises(ConfigError):
        experiment.ExperimentConfig(gating="sometimes").validate()
    with pytest.raises(ConfigError, match="not found"):
        experiment.ExperimentConfig(graph_path=str(tmp_path / "nope.json")).validate()
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"n_windows": 5, "cs_ratios": [0.2, 0.4]}))
    cfg = experiment.ExperimentConfig.from_json(p)
    assert cfg.n_windows == 5 and cfg.cs_ratios == (0.2, 0.4)


def test_config_errors_abort_before_work(tmp_path):
    cfg = experiment.ExperimentConfig(n_windows=0, output_dir=str(tmp_path / "x"))
    with pytest.raises(ConfigError):
        experiment.run_experiment(cfg)
    assert not (tmp_path / "x").exists()


def test_dataset_is_seeded(tmp_path):
    cfg = experiment.ExperimentConfig(n_windows=6, N=128, burst_len=16, seed=9)
    ref_a, a = experiment.generate_dataset(cfg)
    ref_b, b = experiment.generate_dataset(cfg)
    assert ref_a == ref_b and a == b
    assert [w.path_id for w in a] == ["P1", "P2"] * 3
    out = experiment.store_dataset(ref_a, a, tmp_path)
    manifest = json.loads((out / "dataset.json").read_text())
    assert len(manifest["windows"]) == 6
