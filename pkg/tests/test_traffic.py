import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pathsec import traffic
from pathsec.errors import (
    ConfigError,
    InsufficientSamplesError,
    InvalidDimensionError,
    InvalidKindError,
    ParseError,
    SchemaError,
)


def test_default_catalog_shape(catalog):
    assert len(catalog.features) == 19
    assert catalog.ids == tuple(f"f{i}" for i in range(1, 20))
    assert catalog.features[0].indicator == "ICMP Redirect"


def test_default_signatures_match_suite_table(signatures):
    got = {s.suite_id: (set(s.features), s.threat_level) for s in signatures}
    assert got == {
        1: ({"f1", "f2", "f3", "f4", "f9", "f11"}, 3),
        2: ({"f1", "f5", "f6", "f7", "f8", "f9"}, 5),
        3: ({"f1", "f5", "f8", "f9", "f10"}, 4),
    }


def test_catalog_validation(catalog):
    with pytest.raises(ConfigError):
        traffic.FeatureCatalog(catalog.features[:18])
    dup = list(catalog.features)
    dup[1] = dup[0]
    with pytest.raises(ConfigError):
        traffic.FeatureCatalog(tuple(dup))


def test_signature_validation(catalog):
    with pytest.raises(ConfigError):
        traffic.AttackSignature(9, frozenset(), 3)
    with pytest.raises(ConfigError):
        traffic.AttackSignature(9, frozenset({"f1"}), 6)
    with pytest.raises(ConfigError):
        traffic.AttackSignature(9, frozenset({"f99"}), 2).validate(catalog)


def test_config_round_trip(tmp_path, catalog, signatures):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(traffic.config_to_dict(catalog, signatures)))
    cat2, sig2 = traffic.load_config(p)
    assert cat2 == catalog
    assert sig2 == signatures


def test_zero_rate_catalog_gives_zero_window(catalog):
    zero = catalog.with_rates([0.0] * 19)
    w = traffic.generate_baseline(zero, 10, seed=1)
    assert w.samples.shape == (10, 19)
    assert not w.samples.any()


def test_baseline_is_deterministic(catalog):
    a = traffic.generate_baseline(catalog, 64, seed=7)
    b = traffic.generate_baseline(catalog, 64, seed=7)
    assert a == b
    assert a.kind == traffic.BASELINE and a.labels == ()


def test_baseline_mean_within_three_standard_errors(catalog):
    rates = [50.0] + [1.0] * 18
    cat = catalog.with_rates(rates)
    w = traffic.generate_baseline(cat, 256, seed=3)
    col = w.samples[:, 0]
    d = cat.features[0].baseline_dispersion
    se = np.sqrt((50 + d * 50 ** 2) / 256)
    assert abs(col.mean() - 50) < 3 * se


def test_baseline_rejects_empty_window(catalog):
    with pytest.raises(InvalidDimensionError):
        traffic.generate_baseline(catalog, 0, seed=0)


def test_zero_rate_injection_is_identity(catalog, signatures):
    w = traffic.generate_baseline(catalog, 128, seed=2)
    out = traffic.inject_attacks(w, signatures, poisson_rate=0, seed=5)
    assert np.array_equal(out.samples, w.samples)
    assert out.labels == ()


def test_forced_suite2_event_elevates_only_its_features(catalog, suites):
    w = traffic.generate_baseline(catalog, 1024, seed=4)
    out = traffic.inject_attacks(w, [suites[2]], n_events=1, seed=11)
    (rec,) = out.labels
    assert rec.suite_id == 2 and rec.end_row - rec.start_row + 1 == 64
    diff = (out.samples - w.samples)[list(rec.rows)]
    elevated = {catalog.ids[j] for j in np.flatnonzero(diff.mean(axis=0) > 0)}
    assert elevated == {"f1", "f5", "f6", "f7", "f8", "f9"}
    outside = np.delete(out.samples - w.samples, list(rec.rows), axis=0)
    assert not outside.any()


def test_event_count_replays_seeded_poisson(catalog, signatures):
    w = traffic.generate_baseline(catalog, 512, seed=0)
    for seed in range(20):
        out = traffic.inject_attacks(w, signatures, poisson_rate=4, seed=seed)
        assert len(out.labels) == np.random.default_rng(seed).poisson(4)


def test_inject_requires_baseline(catalog, signatures):
    w = traffic.inject_attacks(traffic.generate_baseline(catalog, 128, seed=0), signatures, n_events=1)
    with pytest.raises(InvalidKindError):
        traffic.inject_attacks(w, signatures)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), n=st.integers(1, 4))
def test_label_soundness(seed, n):
    cat, sigs = traffic.load_config()
    w = traffic.generate_baseline(cat, 256, seed=seed)
    out = traffic.inject_attacks(w, sigs, n_events=n, seed=seed, intensity=2.0)
    for rec in out.labels:
        assert 0 <= rec.start_row <= rec.end_row < out.N
        sig = next(s for s in sigs if s.suite_id == rec.suite_id)
        cols = [cat.index(f) for f in sig.features]
        burst = out.samples[list(rec.rows)][:, cols].mean(axis=0)
        assert np.any(burst > cat.rates[cols])


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_store_load_round_trip(tmp_path, catalog, signatures, fmt):
    w = traffic.inject_attacks(traffic.generate_baseline(catalog, 200, seed=1, path_id="P1"), signatures,
                               n_events=2, seed=3, burst_len=20)
    p = traffic.store_window(w, tmp_path / f"w.{fmt}")
    assert traffic.load_window(p, catalog=catalog) == w


def test_csv_negative_count_names_cell(tmp_path, catalog):
    w = traffic.generate_baseline(catalog, 5, seed=0)
    p = traffic.store_window(w, tmp_path / "w.csv")
    lines = p.read_text().splitlines()
    cells = lines[3].split(",")
    cells[4] = "-2"
    lines[3] = ",".join(cells)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as err:
        traffic.load_window(p)
    assert err.value.row == 3 and err.value.column == "f4"
    assert "row 3" in str(err.value) and "f4" in str(err.value)


def test_json_without_labels_loads_empty(tmp_path, catalog):
    w = traffic.generate_baseline(catalog, 4, seed=0)
    doc = {"id": "x", "kind": "baseline", "N": 4, "features": list(w.features), "rows": w.samples.tolist()}
    p = tmp_path / "w.json"
    p.write_text(json.dumps(doc))
    assert traffic.load_window(p).labels == ()


def test_catalog_mismatch_is_schema_error(tmp_path, catalog):
    w = traffic.EventWindow("x", np.ones((3, 2), dtype=int), ("f1", "f2"))
    p = traffic.store_window(w, tmp_path / "w.csv")
    with pytest.raises(SchemaError):
        traffic.load_window(p, catalog=catalog)


def test_window_stats_constant_and_duplicate_columns():
    x = np.column_stack([np.full(6, 5), np.arange(6), np.arange(6)])
    s = traffic.window_stats(x)
    assert s.mean[0] == 5 and s.std[0] == 0
    assert s.correlation[1, 2] == pytest.approx(1.0)
    assert s.correlation[0, 0] == 0 and s.correlation[0, 1] == 0


def test_window_stats_hand_pearson():
    # cross-deviation sum 3, squared-deviation sums 5 and 5: r = 3/5
    x = np.array([[1, 2], [2, 1], [3, 4], [4, 3]])
    s = traffic.window_stats(x)
    assert s.correlation[0, 1] == pytest.approx(0.6)
    assert s.std[0] == pytest.approx(np.sqrt(5 / 3))


def test_window_stats_needs_two_rows():
    with pytest.raises(InsufficientSamplesError):
        traffic.window_stats(np.ones((1, 3)))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.integers(0, 50), min_size=3, max_size=3), min_size=2, max_size=20))
def test_correlation_bounds(rows):
    c = traffic.window_stats(np.array(rows)).correlation
    assert np.all(c <= 1.0) and np.all(c >= -1.0)
