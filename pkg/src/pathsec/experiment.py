"""Seeded batch experiments: dataset generation, scoring and plot-data export.

A run writes three kinds of output into its directory:

``metrics.json``
    Detection, classification, compression and assurance metrics. It holds
    no timing data, so identical configurations give byte-identical files.
``runtimes.json``
    Wall-clock timings for the gated and ungated passes and the CS sweep.
``stages/*.json``
    Intermediate data that :func:`emit_plots` turns into one CSV per figure.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import assurance, cs, traffic
from .errors import ConfigError, MissingArtifactError

logger = logging.getLogger(__name__)

GATING_MODES = ("on", "off", "both")
STAGE_FILES = {
    "features": "features.json",
    "reconstruction": "reconstruction.json",
    "cs_sweep": "cs_sweep.json",
    "spe": "spe.json",
}
FIGURES = {
    "fig06": "fig06_baseline_features.csv",
    "fig07": "fig07_injected_features.csv",
    "fig08": "fig08_signature_profile.csv",
    "fig09": "fig09_reconstruction.csv",
    "fig10": "fig10_cs_tradeoff.csv",
    "fig11": "fig11_spe.csv",
    "fig12": "fig12_runtime.csv",
}


@dataclass
class ExperimentConfig:
    n_windows: int = 200
    N: int = traffic.DEFAULT_N
    catalog_path: str | None = None
    signature_path: str | None = None
    graph_path: str | None = None
    injected_fraction: float = 0.5
    poisson_rate: float = 1.5
    events_per_window: int | None = None
    intensity: float = 8.0
    burst_len: int = 64
    ratio: float | None = None
    epsilon: float = 0.25
    beta: float = 0.1
    power_fraction: float = 0.9
    delta: float | None = None
    seed: int = 0
    sensing_seed: int = 0
    output_dir: str = "runs/default"
    gating: str = "both"
    confidence: float = 0.75
    high_confidence: float = 0.9
    cs_ratios: tuple[float, ...] = (0.1, 0.2, 0.3, 0.5)
    cs_seeds: int = 10
    cs_N: int = 256
    workers: int = 1
    emit_plots: bool = True

    # fields that do not affect results and are left out of metrics.json
    _VOLATILE = ("output_dir", "workers", "emit_plots")

    def __post_init__(self):
        self.cs_ratios = tuple(float(r) for r in self.cs_ratios)

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.n_windows >= 1, "n_windows must be >= 1")
        need(self.N >= 2, "N must be >= 2")
        need(0 <= self.injected_fraction <= 1, "injected_fraction must be in [0, 1]")
        need(self.poisson_rate >= 0, "poisson_rate must be >= 0")
        need(self.events_per_window is None or self.events_per_window >= 0, "events_per_window must be >= 0")
        need(self.intensity > 0, "intensity must be > 0")
        need(1 <= self.burst_len <= self.N, "burst_len must be in [1, N]")
        need(self.ratio is None or 0 < self.ratio <= 1, "ratio must be in (0, 1]")
        need(self.epsilon > 0, "epsilon must be > 0")
        need(0 < self.beta < 1, "beta must be in (0, 1)")
        need(0 < self.power_fraction <= 1, "power_fraction must be in (0, 1]")
        need(self.delta is None or self.delta >= 0, "delta must be >= 0")
        need(self.gating in GATING_MODES, f"gating must be one of {GATING_MODES}")
        need(0 <= self.confidence <= 1 and 0 <= self.high_confidence <= 1, "confidence levels must be in [0, 1]")
        need(all(0 < r <= 1 for r in self.cs_ratios), "cs_ratios must lie in (0, 1]")
        need(self.cs_seeds >= 0 and self.cs_N >= 2, "cs_seeds must be >= 0 and cs_N >= 2")
        need(self.workers >= 1, "workers must be >= 1")
        for name in ("catalog_path", "signature_path", "graph_path"):
            p = getattr(self, name)
            need(p is None or Path(p).is_file(), f"{name}: file not found: {p}")

    def to_dict(self, stable: bool = False) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["cs_ratios"] = list(self.cs_ratios)
        if stable:
            for k in self._VOLATILE:
                d.pop(k)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {unknown}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(doc)


@dataclass
class MetricsReport:
    per_suite: dict
    detection: dict
    classification: dict
    cs: dict
    assurance: dict
    config: dict
    failed_windows: int = 0
    gating_consistent: bool | None = None
    runtime: dict = field(default_factory=dict)

    def to_dict(self, include_runtime: bool = False) -> dict:
        d = dataclasses.asdict(self)
        if not include_runtime:
            d.pop("runtime")
        return d

    def check(self) -> None:
        """Assert the counting invariants."""
        for s, row in self.per_suite.items():
            assert row["detected"] <= row["instances"], s
            assert row["detected"] + row["false_neg"] == row["instances"], s
        d = self.detection
        assert d["false_positive_windows"] + d["true_negative_windows"] == d["unlabeled_windows"]
        c = self.classification
        assert c["classified_high_conf"] <= c["forwarded"]


# --------------------------------------------------------------------------- data

def load_inputs(cfg: ExperimentConfig):
    """Catalog, signatures and graph named by the config (package defaults otherwise)."""
    catalog, signatures = traffic.load_config(cfg.catalog_path)
    if cfg.signature_path is not None:
        _, signatures = traffic.load_config(cfg.signature_path)
        for s in signatures:
            s.validate(catalog)
    if cfg.graph_path is not None:
        graph = assurance.load_graph(cfg.graph_path)
    else:
        graph = assurance.MultipathGraph.from_dict(
            json.loads(resources.files("pathsec").joinpath("data/example_graph.json").read_text()))
    return catalog, signatures, graph


def generate_dataset(cfg: ExperimentConfig, catalog=None, signatures=None, paths: Sequence[str] = ("P1", "P2")):
    """Reference baseline plus ``n_windows`` windows, a seeded subset of them injected.

    Injected windows whose event draw comes up empty stay unlabeled.
    """
    if catalog is None or signatures is None:
        catalog, signatures = traffic.load_config(cfg.catalog_path)
    rng = np.random.default_rng(cfg.seed)
    ref_seed = int(rng.integers(2 ** 31))
    seeds = rng.integers(2 ** 31, size=(cfg.n_windows, 2))
    n_inj = int(round(cfg.injected_fraction * cfg.n_windows))
    injected = set(rng.permutation(cfg.n_windows)[:n_inj].tolist())
    reference = traffic.generate_baseline(catalog, cfg.N, ref_seed, window_id="reference")
    windows = []
    for i in range(cfg.n_windows):
        w = traffic.generate_baseline(catalog, cfg.N, int(seeds[i, 0]), window_id=f"w{i:04d}",
                                      path_id=paths[i % len(paths)] if paths else None)
        if i in injected:
            w = traffic.inject_attacks(w, signatures, cfg.poisson_rate, cfg.burst_len, cfg.intensity,
                                       seed=int(seeds[i, 1]), n_events=cfg.events_per_window,
                                       window_id=w.id)
        windows.append(w)
    return reference, windows


def store_dataset(reference, windows, out_dir: str | Path, fmt: str = "csv") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traffic.store_window(reference, out / f"reference.{fmt}")
    for w in windows:
        traffic.store_window(w, out / f"{w.id}.{fmt}")
    manifest = {"reference": f"reference.{fmt}", "windows": [f"{w.id}.{fmt}" for w in windows]}
    (out / "dataset.json").write_text(json.dumps(manifest, indent=2))
    return out


def pipeline_config(cfg: ExperimentConfig, reference, gating: bool) -> assurance.PipelineConfig:
    return assurance.PipelineConfig.from_baseline(
        reference, ratio=cfg.ratio, sensing_seed=cfg.sensing_seed,
        sampler=cs.SamplerConfig(epsilon=cfg.epsilon, seed=cfg.sensing_seed),
        beta=cfg.beta, power_fraction=cfg.power_fraction, delta=cfg.delta, gating=gating)


def _assess_one(args):
    window, signatures, pcfg = args
    return assurance.path_info_assurance(window, signatures, pcfg)


def assess_windows(windows, signatures, pcfg: assurance.PipelineConfig, workers: int = 1):
    """Assess every window; results come back sorted by window id."""
    jobs = [(w, signatures, pcfg) for w in windows]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_assess_one, jobs))
    else:
        out = [_assess_one(j) for j in jobs]
    return sorted(out, key=lambda a: a.window_id)


# --------------------------------------------------------------------------- scoring

def _instance_score(assessment, rec) -> float:
    """Best match probability for the instance's own suite among clusters touching its rows."""
    if assessment.match is None:
        return 0.0
    rows = set(rec.rows)
    best = 0.0
    for m in assessment.match.matches:
        if m.suite_id == rec.suite_id and rows.intersection(m.members):
            best = max(best, m.probability)
    return best


def score(windows, assessments, signatures, confidence: float = 0.75, high_confidence: float = 0.9):
    """Per-suite and overall detection and classification counts."""
    by_id = {a.window_id: a for a in assessments}
    suites = sorted(s.suite_id for s in signatures)
    per_suite = {str(s): dict(instances=0, detected=0, false_neg=0, false_pos=0, classified=0,
                              classified_gt90=0) for s in suites}
    failed = 0
    unlabeled = fp = tn = 0
    forwarded = hi = gt90 = 0
    inst_scores = []
    win_detected = win_correct = 0
    for w in windows:
        a = by_id[w.id]
        if a.errors or a.report is None:
            failed += 1
            continue
        best = a.best
        if best is not None and best.probability >= confidence and best.suite_id not in w.suites:
            per_suite[str(best.suite_id)]["false_pos"] += 1
        if not w.labels:
            unlabeled += 1
            fp += a.anomalous
            tn += not a.anomalous
            continue
        if a.anomalous:
            win_detected += 1
            win_correct += bool(best is not None and best.probability >= confidence and best.suite_id in w.suites)
        for rec in w.labels:
            row = per_suite[str(rec.suite_id)]
            row["instances"] += 1
            if not a.anomalous:
                row["false_neg"] += 1
                continue
            row["detected"] += 1
            forwarded += 1
            p = _instance_score(a, rec)
            inst_scores.append(p)
            if p >= confidence:
                row["classified"] += 1
                hi += 1
            if p > high_confidence:
                row["classified_gt90"] += 1
                gt90 += 1
    instances = sum(r["instances"] for r in per_suite.values())
    detected = sum(r["detected"] for r in per_suite.values())
    detection = {
        "instances": instances,
        "detected": detected,
        "detection_rate": detected / instances if instances else None,
        "unlabeled_windows": unlabeled,
        "false_positive_windows": fp,
        "true_negative_windows": tn,
        "false_positive_rate": fp / unlabeled if unlabeled else None,
        "beta": None,
    }
    classification = {
        "forwarded": forwarded,
        "classified_high_conf": hi,
        "classified_gt90": gt90,
        "accuracy": hi / forwarded if forwarded else None,
        "accuracy_gt90": gt90 / forwarded if forwarded else None,
        "avg_threat_accuracy": float(np.mean(inst_scores)) if inst_scores else None,
        "confidence": confidence,
        "high_confidence": high_confidence,
        "detected_injected_windows": win_detected,
        "windows_correct": win_correct,
        "window_accuracy": win_correct / win_detected if win_detected else None,
    }
    return per_suite, detection, classification, failed


def cs_sweep(catalog, ratios: Sequence[float], n_seeds: int, N: int = 256, seed: int = 0):
    """Seed-averaged centered reconstruction error (and time) for each measurement ratio."""
    rows, times = [], []
    for r in ratios:
        M = max(1, int(round(r * N)))
        mses, secs = [], []
        for s in range(n_seeds):
            w = traffic.generate_baseline(catalog, N, seed=seed + s)
            U = cs.build_sensing_matrix(N, M, seed=seed + s)
            t0 = time.perf_counter()
            rec = cs.reconstruct(U, cs.compress(U, w), M // 2, center=True)
            secs.append(time.perf_counter() - t0)
            mses.append(cs.reconstruction_mse(w, rec))
        rows.append({"ratio": r, "M": M, "N": N, "seeds": n_seeds,
                     "mse_mean": float(np.mean(mses)) if mses else None,
                     "mse_std": float(np.std(mses)) if mses else None})
        times.append(float(np.mean(secs)) if secs else None)
    return rows, times


# --------------------------------------------------------------------------- run

def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _pass_runtime(assessments, wall: float) -> dict:
    return {
        "classify_seconds": float(sum(a.timings.get("classify", 0.0) for a in assessments)),
        "windows_classified": sum(a.classified for a in assessments),
        "total_seconds": wall,
    }


def run_experiment(cfg: ExperimentConfig) -> MetricsReport:
    """Generate the dataset, assess every window and write metrics, runtimes and stage data."""
    cfg.validate()
    catalog, signatures, graph = load_inputs(cfg)
    out = Path(cfg.output_dir)
    (out / "stages").mkdir(parents=True, exist_ok=True)

    reference, windows = generate_dataset(cfg, catalog, signatures, tuple(graph.paths))
    modes = {"on": [True], "off": [False], "both": [True, False]}[cfg.gating]
    runs, runtime = {}, {}
    pcfg = None
    for gated in modes:
        pcfg = pipeline_config(cfg, reference, gated)
        t0 = time.perf_counter()
        runs[gated] = assess_windows(windows, signatures, pcfg, cfg.workers)
        runtime["gated" if gated else "ungated"] = _pass_runtime(runs[gated], time.perf_counter() - t0)
    if len(runs) == 2 and runtime["ungated"]["classify_seconds"] > 0:
        runtime["classify_ratio"] = runtime["gated"]["classify_seconds"] / runtime["ungated"]["classify_seconds"]
    primary = runs[modes[0]]

    consistent = None
    if len(runs) == 2:
        consistent = all(g.to_dict() == u.to_dict() for g, u in zip(runs[True], runs[False]) if g.anomalous)

    per_suite, detection, classification, failed = score(
        windows, primary, signatures, cfg.confidence, cfg.high_confidence)
    detection["beta"] = cfg.beta
    if failed:
        logger.warning("%d windows failed and were excluded from the rates", failed)

    for i, a in enumerate(primary):
        if a.path_id in graph.paths:
            graph.record(a, timestamp=i)
    paths_out = {}
    for p in graph.paths:
        last = graph.latest(p)
        paths_out[p] = {"I": 1.0 if last is None else last.I,
                        "threat_score": 0.0 if last is None else last.threat.score,
                        "window_id": None if last is None else last.window_id}
    assurance_out = {"paths": paths_out, "throughput": assurance.path_throughput(graph, L=1.0),
                     "graph": graph.to_dict()}

    # compression fidelity on the experiment's own sensing matrix and one window
    U = pcfg.sensing
    shown = next((w for w in windows if w.labels), windows[0])
    rec = cs.reconstruct(U, cs.compress(U, shown), U.M // 2, center=True)
    t0 = time.perf_counter()
    sweep, sweep_times = cs_sweep(catalog, cfg.cs_ratios, cfg.cs_seeds, cfg.cs_N, cfg.seed)
    runtime["cs_sweep_seconds"] = sweep_times
    runtime["cs_sweep_total"] = time.perf_counter() - t0
    cs_out = {"N": U.N, "M": U.M, "ratio": U.M / U.N, "window_id": shown.id,
              "mse": cs.reconstruction_mse(shown, rec), "sweep": sweep}

    report = MetricsReport(per_suite, detection, classification, cs_out, assurance_out,
                           cfg.to_dict(stable=True), failed, consistent, runtime)
    report.check()

    _write_json(out / "metrics.json", report.to_dict())
    _write_json(out / "runtimes.json", runtime)
    with (out / "assessments.jsonl").open("w") as fh:
        for a in primary:
            fh.write(json.dumps(a.to_dict(), sort_keys=True) + "\n")
    _write_stages(out / "stages", catalog, signatures, windows, primary, shown, rec, sweep)
    if cfg.emit_plots:
        emit_plots(out)
    return report


def _write_stages(stage_dir: Path, catalog, signatures, windows, assessments, shown, rec, sweep) -> None:
    base = [w for w in windows if not w.labels]
    inj = [w for w in windows if w.labels]
    base_tot = np.sum([w.samples.sum(axis=0) for w in base], axis=0) if base else None
    inj_tot = np.sum([w.samples.sum(axis=0) for w in inj], axis=0) if inj else None
    profile = None
    if inj:
        profile = {}
        for s in signatures:
            rows = [w.samples[list(r.rows)] for w in inj for r in w.labels if r.suite_id == s.suite_id]
            if rows:
                profile[str(s.suite_id)] = np.vstack(rows).mean(axis=0).tolist()
    _write_json(stage_dir / STAGE_FILES["features"], {
        "features": list(catalog.ids),
        "indicators": [f.indicator for f in catalog.features],
        "baseline_rates": catalog.rates.tolist(),
        "baseline_totals": None if base_tot is None else base_tot.tolist(),
        "injected_totals": None if inj_tot is None else inj_tot.tolist(),
        "signature_profile": profile,
        "signatures": {str(s.suite_id): sorted(s.features, key=catalog.index) for s in signatures},
    })
    _write_json(stage_dir / STAGE_FILES["reconstruction"], {
        "window_id": shown.id, "features": list(shown.features),
        "original": shown.samples.tolist(), "reconstructed": np.round(rec, 9).tolist(),
    })
    _write_json(stage_dir / STAGE_FILES["cs_sweep"], sweep)
    labeled = {w.id: bool(w.labels) for w in windows}
    _write_json(stage_dir / STAGE_FILES["spe"], [
        {"window_id": a.window_id, "labeled": labeled[a.window_id],
         "features": list(a.report.features), "spe": a.report.spe.tolist(),
         "threshold": a.report.threshold, "anomalous": a.report.anomalous}
        for a in assessments if a.report is not None
    ])


# --------------------------------------------------------------------------- plots

def _write_csv(path: Path, header: Sequence[str], rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _percent_rows(features, indicators, totals):
    totals = np.asarray(totals, dtype=float)
    total = totals.sum()
    for f, ind, t in zip(features, indicators, totals):
        yield [f, ind, int(t), 100.0 * t / total if total else 0.0]


def emit_plots(run_dir: str | Path, out_dir: str | Path | None = None) -> dict[str, str | None]:
    """Write one CSV per figure analogue from a finished run's stage data.

    Returns the figure-to-file map also written to ``manifest.json``; figures
    that the run cannot support are mapped to ``None`` with a reason.
    """
    run_dir = Path(run_dir)
    stage_dir = run_dir / "stages"
    missing = [name for name, f in STAGE_FILES.items() if not (stage_dir / f).is_file()]
    if not (run_dir / "runtimes.json").is_file():
        missing.append("runtimes")
    if missing:
        raise MissingArtifactError(f"run at {run_dir} is missing stages: {', '.join(missing)}")
    out = Path(out_dir) if out_dir is not None else run_dir / "plots"
    out.mkdir(parents=True, exist_ok=True)

    load = lambda name: json.loads((stage_dir / STAGE_FILES[name]).read_text())  # noqa: E731
    feats = load("features")
    made: dict[str, str | None] = {}
    absent: dict[str, str] = {}

    if feats["baseline_totals"] is not None:
        made["fig06"] = str(_write_csv(out / FIGURES["fig06"], ["feature", "indicator", "count", "percent"],
                                       _percent_rows(feats["features"], feats["indicators"], feats["baseline_totals"])))
    else:
        absent["fig06"] = "no unlabeled windows"
    if feats["injected_totals"] is not None:
        made["fig07"] = str(_write_csv(out / FIGURES["fig07"], ["feature", "indicator", "count", "percent"],
                                       _percent_rows(feats["features"], feats["indicators"], feats["injected_totals"])))
    else:
        absent["fig07"] = "no injected windows"
    if feats["signature_profile"]:
        rows = []
        for sid, means in sorted(feats["signature_profile"].items(), key=lambda kv: int(kv[0])):
            members = set(feats["signatures"].get(sid, ()))
            for f, base, m in zip(feats["features"], feats["baseline_rates"], means):
                rows.append([int(sid), f, int(f in members), base, m])
        made["fig08"] = str(_write_csv(out / FIGURES["fig08"],
                                       ["suite_id", "feature", "in_signature", "baseline_mean", "burst_mean"], rows))
    else:
        absent["fig08"] = "no injected attack bursts"

    recon = load("reconstruction")
    orig, rec = np.asarray(recon["original"]), np.asarray(recon["reconstructed"])
    rows = ([t, f, int(orig[t, j]), float(rec[t, j])]
            for j, f in enumerate(recon["features"]) for t in range(orig.shape[0]))
    made["fig09"] = str(_write_csv(out / FIGURES["fig09"], ["t", "feature", "original", "reconstructed"], rows))

    sweep = load("cs_sweep")
    runtimes = json.loads((run_dir / "runtimes.json").read_text())
    secs = runtimes.get("cs_sweep_seconds") or [None] * len(sweep)
    made["fig10"] = str(_write_csv(out / FIGURES["fig10"], ["ratio", "M", "N", "mse_mean", "mse_std", "seconds_mean"],
                                   ([r["ratio"], r["M"], r["N"], r["mse_mean"], r["mse_std"], s]
                                    for r, s in zip(sweep, secs))))

    spe = load("spe")
    rows = ([d["window_id"], f, v, d["threshold"], int(d["anomalous"]), int(d["labeled"])]
            for d in spe for f, v in zip(d["features"], d["spe"]))
    made["fig11"] = str(_write_csv(out / FIGURES["fig11"],
                                   ["window_id", "feature", "spe", "threshold", "anomalous", "labeled"], rows))

    passes = [(m, runtimes[m]) for m in ("gated", "ungated") if m in runtimes]
    made["fig12"] = str(_write_csv(out / FIGURES["fig12"],
                                   ["mode", "classify_seconds", "windows_classified", "total_seconds"],
                                   ([m, r["classify_seconds"], r["windows_classified"], r["total_seconds"]]
                                    for m, r in passes)))

    manifest = {k: made.get(k) for k in FIGURES}
    (out / "manifest.json").write_text(json.dumps({"figures": manifest, "absent": absent}, indent=2, sort_keys=True))
    return manifest


def _coerce(v: str):
    if v == "":
        return None
    try:
        f = float(v)
    except ValueError:
        return v
    return int(f) if f.is_integer() and "." not in v and "e" not in v.lower() else f


def read_plot_csv(path: str | Path) -> list[dict]:
    """Parse an emitted CSV into row dicts, converting numeric cells."""
    with Path(path).open(newline="") as fh:
        return [{k: _coerce(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def read_manifest(plot_dir: str | Path) -> dict:
    p = Path(plot_dir) / "manifest.json"
    if not p.is_file():
        raise MissingArtifactError(f"no manifest in {plot_dir}")
    return json.loads(p.read_text())


def is_nonincreasing(values: Sequence[float], tol: float = 0.0) -> bool:
    return all(b <= a + tol for a, b in zip(values, values[1:]) if not (math.isnan(a) or math.isnan(b)))
