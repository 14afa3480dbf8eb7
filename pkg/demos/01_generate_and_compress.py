"""Generate a baseline window and an attacked one, compress both, and reconstruct."""

from pathsec import cs, traffic

catalog = traffic.default_catalog()
suites = {s.suite_id: s for s in traffic.default_signatures()}

N = 1024
clean = traffic.generate_baseline(catalog, N, seed=1, window_id="clean")
attacked = traffic.inject_attacks(traffic.generate_baseline(catalog, N, seed=2, window_id="attacked"),
                                  [suites[2]], n_events=1, seed=0)
print("injected bursts:", [(lab.suite_id, lab.start_row, lab.end_row) for lab in attacked.labels])

M = cs.choose_measurement_count(N, active_features=3)
U = cs.build_sensing_matrix(N, M, seed=7)
print(f"sensing matrix {U.M}x{U.N}, coherence {U.coherence:.4f}")

for w in (clean, attacked):
    Y = cs.compress(U, w)
    rec = cs.reconstruct(U, Y, sparsity=M // 2, center=True)
    print(f"{w.id}: {w.samples.shape} -> {Y.Y.shape}, reconstruction MSE {cs.reconstruction_mse(w, rec):.2f}")
