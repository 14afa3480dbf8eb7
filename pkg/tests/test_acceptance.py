"""Acceptance criteria, each run at its stated tolerance.

Every test prints one ``PASS criterion N`` or ``FAIL criterion N`` line
(visible with ``pytest -s`` or in the captured output of a failure).
"""

import math
import time

import numpy as np
import pytest
from scipy import stats
from scipy.spatial.distance import pdist

from pathsec import anomaly, assurance, cs, experiment, traffic
from pathsec import signature as sg

from oracles import brute_force_matches


def report(n: int, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    cfg = experiment.ExperimentConfig(n_windows=200, N=1024, gating="both", workers=1, seed=0,
                                      output_dir=str(tmp_path_factory.mktemp("default")))
    t0 = time.perf_counter()
    rep = experiment.run_experiment(cfg)
    return cfg, rep, time.perf_counter() - t0


def test_criterion_1_detection(default_run):
    cfg, rep, elapsed = default_run
    d = rep.detection
    ok = d["detection_rate"] >= 0.85 and d["false_positive_rate"] <= 0.10 and elapsed <= 300
    report(1, ok, f"detection {d['detected']}/{d['instances']} = {d['detection_rate']:.3f}, "
                  f"FP windows {d['false_positive_windows']}/{d['unlabeled_windows']} = "
                  f"{d['false_positive_rate']:.3f}, beta {cfg.beta}, runtime {elapsed:.1f}s")


def test_criterion_2_classification(default_run):
    _, rep, _ = default_run
    c = rep.classification
    report(2, c["window_accuracy"] >= 0.85,
           f"{c['windows_correct']}/{c['detected_injected_windows']} detected injected windows matched "
           f"to their suite at p >= {c['confidence']} ({c['window_accuracy']:.3f})")


def test_criterion_3_gating(default_run):
    cfg, rep, _ = default_run
    rt = rep.runtime
    ok = cfg.injected_fraction == 0.5 and rt["classify_ratio"] <= 0.6
    report(3, ok, f"gated {rt['gated']['classify_seconds']:.2f}s / ungated "
                  f"{rt['ungated']['classify_seconds']:.2f}s = {rt['classify_ratio']:.3f}")


def test_criterion_4_cs_fidelity():
    catalog = traffic.default_catalog()
    rows, _ = experiment.cs_sweep(catalog, (0.1, 0.2, 0.3, 0.5), 10, N=256)
    mse = [r["mse_mean"] for r in rows]
    monotone = experiment.is_nonincreasing(mse)

    rng = np.random.default_rng(0)
    worst = 0.0
    for N, k in ((128, 3), (256, 5), (512, 8)):
        M = max(2 * k, int(4 * k * math.log(N)))
        U = cs.build_sensing_matrix(N, M, seed=k)
        X = np.zeros((N, 3))
        for j in range(3):
            X[rng.choice(N, k, replace=False), j] = rng.normal(size=k) + np.sign(rng.normal(size=k))
        worst = max(worst, float(np.max(np.abs(cs.reconstruct(U, U.U @ X, k) - X))))
    report(4, monotone and worst <= 1e-6,
           f"sweep MSE {[round(v, 3) for v in mse]}, k-sparse max error {worst:.2e}")


def test_criterion_5_spectrum_preservation():
    catalog = traffic.default_catalog()
    w = traffic.generate_baseline(catalog, 256, seed=8)
    U = cs.SensingMatrix.from_array(stats.ortho_group.rvs(256, random_state=1))
    a = anomaly.principal_subspace(w)
    b = anomaly.principal_subspace(cs.compress(U, w))
    k = a.k
    exact_err = float(np.max(np.abs(a.eigenvalues[:k] - b.eigenvalues[:k])))

    N = 1024
    M = round(0.3 * N)
    inside = 0
    for s in range(50):
        win = traffic.generate_baseline(catalog, N, seed=s)
        orig = anomaly.principal_subspace(win)
        comp = anomaly.principal_subspace(cs.compress(cs.build_sensing_matrix(N, M, seed=s), win))
        bound = anomaly.eigenvalue_drift_bound(orig.eigenvalues[0], win.n_features, M, conf=0.1)
        inside += anomaly.eigenvalue_drift(orig, comp) <= bound
    report(5, exact_err <= 1e-6 and inside >= 45,
           f"M=N top-{k} eigenvalue error {exact_err:.2e}; M/N=0.3 drift within bound in {inside}/50 trials")


def test_criterion_6_oracles():
    signatures = traffic.default_signatures()
    rng = np.random.default_rng(2024)
    feats = tuple(f"f{i}" for i in range(1, 20))
    checked = mismatched = 0
    while checked < 200:
        n = int(rng.integers(1, 9))
        sigs = list(rng.permutation(signatures)[: int(rng.integers(1, 4))])
        base = sg.BaselineProfile.from_window(rng.poisson(3, size=(30, 19)).astype(float), feats)
        x = rng.poisson(3, size=(n, 19)).astype(float)
        x[: max(1, n // 2), rng.choice(19, 6, replace=False)] += rng.integers(5, 400, size=6)
        pts = x / np.maximum(base.mean, 0.1)
        if n > 1 and len(set(pdist(pts))) < n * (n - 1) // 2:
            continue  # tied distances make any linkage order ambiguous
        got = {m.members: (m.suite_id, m.probability) for m in sg.signature_match_prob(sigs, x, baseline=base).matches}
        want = {k: (s, float(p)) for k, (s, p) in brute_force_matches(x, sigs, base, sg.default_delta(pts)).items()}
        mismatched += got != want
        checked += 1

    by_id = {s.suite_id: s for s in signatures}
    # suite 3 has W=4 and suite 2 has W=5
    o5 = assurance.threat_score([sg.MatchResult(0, by_id[2], 1.0, 6, 6)], signatures)
    o25 = assurance.threat_score([sg.MatchResult(0, by_id[2], 0.3, 0, 0),
                                  sg.MatchResult(1, by_id[3], 0.25, 0, 0)], signatures)
    hand = (o5.score == pytest.approx(5.0) and o25.score == pytest.approx(2.5)
            and assurance.assurance_factor(o5) == pytest.approx(0.2)
            and assurance.assurance_factor(o25) == pytest.approx(0.4))
    report(6, mismatched == 0 and hand,
           f"{checked - mismatched}/{checked} random windows equal brute force; "
           f"O_f {o5.score:g} -> I {assurance.assurance_factor(o5):g}, "
           f"O_f {o25.score:g} -> I {assurance.assurance_factor(o25):g}")


def test_criterion_7_invariants(tmp_path):
    rng = np.random.default_rng(7)
    failures = []

    for _ in range(50):
        d = int(rng.integers(2, 20))
        E = np.linalg.qr(rng.normal(size=(d, d)))[0][:, : int(rng.integers(0, d))]
        x = rng.normal(size=d)
        z = anomaly.residual_projection(E, x)
        if np.max(np.abs(anomaly.residual_projection(E, z) - z)) > 1e-9:
            failures.append("projector idempotence")
        if abs(x @ x - (z @ z + (x - z) @ (x - z))) > 1e-6 * max(1.0, x @ x):
            failures.append("Pythagoras")

    for _ in range(20):
        tree = sg.build_dendrogram(rng.normal(size=(int(rng.integers(2, 40)), 4)))
        if np.any(np.diff(tree.heights) < 0):
            failures.append("dendrogram monotonicity")

    catalog = traffic.default_catalog()
    signatures = traffic.default_signatures()
    base = traffic.generate_baseline(catalog, 256, seed=1)
    for s in range(10):
        w = traffic.inject_attacks(traffic.generate_baseline(catalog, 256, seed=100 + s), signatures,
                                   burst_len=32, seed=s)
        res = sg.signature_match_prob(signatures, w, baseline=base)
        H = [res.entropy.baseline_H, *(v for v in res.entropy.conditional.values() if v is not None)]
        if not all(0 <= h <= math.log2(19) + 1e-12 for h in H):
            failures.append("entropy bounds")
        if not all(0 <= p <= 1 for p in res.probabilities):
            failures.append("probability bounds")

    resid = rng.uniform(0.1, 5, size=8)
    q = anomaly.q_threshold(resid).Q_beta
    if any(abs(anomaly.q_threshold(c * resid).Q_beta - c * q) > 1e-9 * c * q for c in (0.5, 3.0, 40.0)):
        failures.append("Q homogeneity")

    U = cs.build_sensing_matrix(128, 40, seed=3)
    A, B = rng.normal(size=(128, 19)), rng.normal(size=(128, 19))
    if np.max(np.abs(cs.compress(U, 2 * A - 3 * B).Y - (2 * cs.compress(U, A).Y - 3 * cs.compress(U, B).Y))) > 1e-9:
        failures.append("compress linearity")

    small = dict(n_windows=8, N=256, burst_len=32, cs_seeds=2, cs_N=64, seed=11)
    blobs = []
    for name in ("a", "b"):
        cfg = experiment.ExperimentConfig(**small, output_dir=str(tmp_path / name))
        experiment.run_experiment(cfg)
        blobs.append((tmp_path / name / "metrics.json").read_bytes())
    if blobs[0] != blobs[1]:
        failures.append("byte-identical reports")

    report(7, not failures, "all invariants hold" if not failures else f"violated: {sorted(set(failures))}")
