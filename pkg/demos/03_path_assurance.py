"""Score two routing paths and compare throughput before and after one is attacked."""

import json
from importlib import resources

from pathsec import assurance, traffic

catalog = traffic.default_catalog()
signatures = traffic.default_signatures()
suites = {s.suite_id: s for s in signatures}
graph = assurance.MultipathGraph.from_dict(
    json.loads(resources.files("pathsec").joinpath("data/example_graph.json").read_text()))

N = 1024
reference = traffic.generate_baseline(catalog, N, seed=999, window_id="reference")
cfg = assurance.PipelineConfig.from_baseline(reference, sensing_seed=7)
print("throughput with no assessments:", assurance.path_throughput(graph))

windows = {
    "P1": traffic.generate_baseline(catalog, N, seed=1, window_id="p1", path_id="P1"),
    "P2": traffic.inject_attacks(traffic.generate_baseline(catalog, N, seed=2, window_id="p2", path_id="P2"),
                                 [suites[2]], n_events=1, seed=0),
}
for t, (path, w) in enumerate(windows.items()):
    a = assurance.path_info_assurance(w, signatures, cfg)
    graph.record(a, timestamp=t)
    print(f"{path}: anomalous={a.anomalous} threat={a.threat.score if a.threat else 0:.2f} I={a.I:.3f}")

print("throughput after assessment:", assurance.path_throughput(graph))
