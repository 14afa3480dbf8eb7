"""Detect a volume anomaly in compressed traffic and match it to an attack suite."""

from pathsec import anomaly, cs, traffic
from pathsec import signature as sg

catalog = traffic.default_catalog()
signatures = traffic.default_signatures()
suites = {s.suite_id: s for s in signatures}

N = 1024
reference = traffic.generate_baseline(catalog, N, seed=999, window_id="reference")
U = cs.build_sensing_matrix(N, cs.choose_measurement_count(N, 3), seed=7)
spectrum = anomaly.principal_subspace(cs.compress(U, reference))
print(f"baseline principal subspace: k={spectrum.k} of {spectrum.dim}")

for sid in (1, 3):
    w = traffic.inject_attacks(traffic.generate_baseline(catalog, N, seed=sid, window_id=f"suite{sid}"),
                               [suites[sid]], n_events=1, seed=sid)
    rep = anomaly.detect(cs.compress(U, w), spectrum)
    print(f"{w.id}: anomalous={rep.anomalous} Q={rep.threshold:.2f} flagged={list(rep.flagged_features)}")
    if rep.anomalous:
        best = sg.signature_match_prob(signatures, w, baseline=reference).best()
        print(f"  best cluster {best.cluster_id} ({len(best.members)} samples) -> suite {best.suite_id} "
              f"p={best.probability:.2f} significant={sorted(best.significant_features)}")
