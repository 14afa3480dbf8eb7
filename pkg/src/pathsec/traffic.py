"""Event windows of per-feature traffic counts: generation, attack injection, I/O, statistics.

An event window is an ``N x N_f`` matrix of nonnegative counts, one row per
sample moment of a 30-minute window and one column per catalog feature.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    InsufficientSamplesError,
    InvalidDimensionError,
    InvalidKindError,
    ParseError,
    SchemaError,
)

logger = logging.getLogger(__name__)

N_FEATURES = 19
DEFAULT_N = 1024
WINDOW_MINUTES = 30
BASELINE = "baseline"
INJECTED = "injected"


@dataclass(frozen=True)
class FeatureDef:
    id: str
    indicator: str
    baseline_rate: float
    baseline_dispersion: float = 0.0


@dataclass(frozen=True)
class FeatureCatalog:
    features: tuple[FeatureDef, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if len(self.features) != N_FEATURES:
            raise ConfigError(f"catalog must define {N_FEATURES} features, got {len(self.features)}")
        ids = [f.id for f in self.features]
        if len(set(ids)) != len(ids):
            raise ConfigError("catalog feature ids must be unique")
        for f in self.features:
            if f.baseline_rate < 0 or f.baseline_dispersion < 0:
                raise ConfigError(f"feature {f.id}: rate and dispersion must be >= 0")

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(f.id for f in self.features)

    @property
    def rates(self) -> np.ndarray:
        return np.array([f.baseline_rate for f in self.features], dtype=float)

    @property
    def dispersions(self) -> np.ndarray:
        return np.array([f.baseline_dispersion for f in self.features], dtype=float)

    def index(self, feature_id: str) -> int:
        return self.ids.index(feature_id)

    def with_rates(self, rates: Sequence[float], dispersion: float | None = None) -> "FeatureCatalog":
        """Copy of the catalog with replaced baseline rates (and optionally one dispersion for all)."""
        feats = []
        for f, r in zip(self.features, rates):
            d = f.baseline_dispersion if dispersion is None else dispersion
            feats.append(FeatureDef(f.id, f.indicator, float(r), float(d)))
        return FeatureCatalog(tuple(feats))


@dataclass(frozen=True)
class AttackSignature:
    suite_id: int
    features: frozenset[str]
    threat_level: int
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "features", frozenset(self.features))
        if not self.features:
            raise ConfigError(f"suite {self.suite_id}: empty feature set")
        if not 1 <= self.threat_level <= 5:
            raise ConfigError(f"suite {self.suite_id}: threat level must be in 1..5")

    def validate(self, catalog: FeatureCatalog) -> None:
        unknown = self.features - set(catalog.ids)
        if unknown:
            raise ConfigError(f"suite {self.suite_id}: features not in catalog: {sorted(unknown)}")


@dataclass(frozen=True)
class InjectionRecord:
    suite_id: int
    start_row: int
    end_row: int  # inclusive

    @property
    def rows(self) -> range:
        return range(self.start_row, self.end_row + 1)


@dataclass(eq=False)
class EventWindow:
    id: str
    samples: np.ndarray
    features: tuple[str, ...]
    labels: tuple[InjectionRecord, ...] = ()
    kind: str = BASELINE
    duration_minutes: int = WINDOW_MINUTES
    path_id: str | None = None

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2:
            raise InvalidDimensionError(f"samples must be 2-D, got shape {s.shape}")
        if s.shape[0] < 1:
            raise InvalidDimensionError("window needs at least one sample row")
        if s.shape[1] != len(self.features):
            raise InvalidDimensionError(
                f"samples have {s.shape[1]} columns but {len(self.features)} feature ids were given"
            )
        if np.any(s < 0):
            raise ValueError("counts must be nonnegative")
        self.samples = s.astype(np.int64, copy=False)
        self.features = tuple(self.features)
        self.labels = tuple(self.labels)
        if self.kind not in (BASELINE, INJECTED):
            raise InvalidKindError(f"unknown window kind {self.kind!r}")
        for rec in self.labels:
            if not 0 <= rec.start_row <= rec.end_row < self.N:
                raise InvalidDimensionError(f"label rows {rec.start_row}..{rec.end_row} outside [0, {self.N})")

    @property
    def N(self) -> int:
        return self.samples.shape[0]

    @property
    def n_features(self) -> int:
        return self.samples.shape[1]

    @property
    def suites(self) -> set[int]:
        return {rec.suite_id for rec in self.labels}

    def __eq__(self, other):
        if not isinstance(other, EventWindow):
            return NotImplemented
        return (
            self.id == other.id
            and self.kind == other.kind
            and self.features == other.features
            and self.labels == other.labels
            and self.path_id == other.path_id
            and self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples)
        )


@dataclass(frozen=True)
class WindowStats:
    mean: np.ndarray
    std: np.ndarray
    correlation: np.ndarray
    n_samples: int


# --------------------------------------------------------------------------- config

def _parse_config(doc: dict) -> tuple[FeatureCatalog, list[AttackSignature]]:
    try:
        catalog = FeatureCatalog(tuple(
            FeatureDef(f["id"], f.get("indicator", ""), float(f["baseline_rate"]),
                       float(f.get("baseline_dispersion", 0.0)))
            for f in doc["catalog"]
        ))
        signatures = [
            AttackSignature(int(s["suite_id"]), frozenset(s["features"]), int(s["threat_level"]),
                            s.get("description", ""))
            for s in doc["signatures"]
        ]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for sig in signatures:
        sig.validate(catalog)
    if len({s.suite_id for s in signatures}) != len(signatures):
        raise ConfigError("duplicate suite ids")
    return catalog, sorted(signatures, key=lambda s: s.suite_id)


def load_config(path: str | Path | None = None) -> tuple[FeatureCatalog, list[AttackSignature]]:
    """Read catalog and signature definitions; ``None`` loads the bundled defaults."""
    if path is None:
        text = resources.files("pathsec").joinpath("data/default_config.json").read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return _parse_config(doc)


def config_to_dict(catalog: FeatureCatalog, signatures: Iterable[AttackSignature]) -> dict:
    return {
        "catalog": [
            {"id": f.id, "indicator": f.indicator, "baseline_rate": f.baseline_rate,
             "baseline_dispersion": f.baseline_dispersion}
            for f in catalog.features
        ],
        "signatures": [
            {"suite_id": s.suite_id, "features": sorted(s.features, key=catalog.index),
             "threat_level": s.threat_level, "description": s.description}
            for s in signatures
        ],
    }


def default_catalog() -> FeatureCatalog:
    return load_config()[0]


def default_signatures() -> list[AttackSignature]:
    return load_config()[1]


# --------------------------------------------------------------------------- generators

def _draw_counts(rng: np.random.Generator, mean: float, dispersion: float, n: int) -> np.ndarray:
    # variance = mean + dispersion * mean**2; dispersion 0 degenerates to Poisson
    if mean <= 0:
        return np.zeros(n, dtype=np.int64)
    if dispersion <= 0:
        return rng.poisson(mean, size=n)
    shape = 1.0 / dispersion
    return rng.negative_binomial(shape, shape / (shape + mean), size=n)


def generate_baseline(catalog: FeatureCatalog, N: int = DEFAULT_N, seed: int = 0,
                      window_id: str | None = None, path_id: str | None = None) -> EventWindow:
    """Attack-free window whose column j is over-dispersed counts around ``baseline_rate_j``."""
    if N < 1:
        raise InvalidDimensionError(f"N must be >= 1, got {N}")
    rng = np.random.default_rng(seed)
    cols = [_draw_counts(rng, f.baseline_rate, f.baseline_dispersion, N) for f in catalog.features]
    return EventWindow(
        id=window_id if window_id is not None else f"baseline-{seed}",
        samples=np.column_stack(cols),
        features=catalog.ids,
        kind=BASELINE,
        path_id=path_id,
    )


def inject_attacks(window: EventWindow, signatures: Sequence[AttackSignature], poisson_rate: float = 1.5,
                   burst_len: int = 64, intensity: float = 8.0, seed: int = 0,
                   n_events: int | None = None, window_id: str | None = None) -> EventWindow:
    """Overlay Poisson-many attack bursts on a baseline window.

    Each event picks a suite uniformly and adds, over ``burst_len`` contiguous
    rows, Poisson counts with mean ``(intensity - 1) * r`` to every feature of
    the suite's signature, where ``r`` is the window's grand mean count per cell
    (floored at 1). Scaling by the grand mean rather than each feature's own
    rate keeps low-volume indicators visible during a burst.

    The first draw from ``default_rng(seed)`` is the event count, so the number
    of labels can be replayed from the seed. ``n_events`` forces the count.
    """
    if window.kind != BASELINE:
        raise InvalidKindError(f"can only inject into a baseline window, got {window.kind!r}")
    if poisson_rate < 0:
        raise ValueError("poisson_rate must be >= 0")
    if intensity <= 0:
        raise ValueError("intensity must be > 0")
    if not signatures:
        raise ValueError("need at least one attack signature")

    rng = np.random.default_rng(seed)
    count = int(rng.poisson(poisson_rate))
    if n_events is not None:
        count = int(n_events)

    samples = window.samples.copy()
    N = window.N
    burst = max(1, min(int(burst_len), N))
    level = max(float(window.samples.mean()), 1.0)
    lam = max(intensity - 1.0, 0.0) * level
    labels = list(window.labels)
    for _ in range(count):
        sig = signatures[int(rng.integers(len(signatures)))]
        start = int(rng.integers(0, N - burst + 1))
        cols = [window.features.index(f) for f in sorted(sig.features, key=window.features.index)]
        samples[start:start + burst, cols] += rng.poisson(lam, size=(burst, len(cols)))
        labels.append(InjectionRecord(sig.suite_id, start, start + burst - 1))

    if window_id is None:
        if window.id.startswith(BASELINE):
            window_id = INJECTED + window.id[len(BASELINE):]
        else:
            window_id = f"{window.id}-injected"
    return EventWindow(
        id=window_id,
        samples=samples,
        features=window.features,
        labels=tuple(labels),
        kind=INJECTED,
        path_id=window.path_id,
    )


def window_stats(window: EventWindow | np.ndarray) -> WindowStats:
    """Per-feature mean and sample standard deviation plus Pearson correlations.

    Constant columns get correlation 0 with every feature, themselves included.
    """
    x = np.asarray(window.samples if isinstance(window, EventWindow) else window, dtype=float)
    if x.shape[0] < 2:
        raise InsufficientSamplesError(f"need at least 2 samples, got {x.shape[0]}")
    mean = x.mean(axis=0)
    std = x.std(axis=0, ddof=1)
    xc = x - mean
    norms = np.sqrt((xc ** 2).sum(axis=0))
    live = norms > 0
    corr = np.zeros((x.shape[1], x.shape[1]))
    z = xc[:, live] / norms[live]
    corr[np.ix_(live, live)] = np.clip(z.T @ z, -1.0, 1.0)
    idx = np.flatnonzero(live)
    corr[idx, idx] = 1.0
    return WindowStats(mean=mean, std=std, correlation=corr, n_samples=x.shape[0])


# --------------------------------------------------------------------------- I/O

def _labels_to_json(labels: Iterable[InjectionRecord]) -> list[dict]:
    return [{"suite": r.suite_id, "start": r.start_row, "end": r.end_row} for r in labels]


def _labels_from_json(items) -> tuple[InjectionRecord, ...]:
    try:
        return tuple(InjectionRecord(int(d["suite"]), int(d["start"]), int(d["end"])) for d in items)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed label entry: {exc}") from exc


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".labels.json")


def _infer_format(path: Path, fmt: str | None) -> str:
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in ("csv", "json"):
        raise ValueError(f"unsupported window format {fmt!r}")
    return fmt


def store_window(window: EventWindow, path: str | Path, format: str | None = None) -> Path:
    """Write a window as CSV (+ ``.labels.json`` sidecar) or as a single JSON document."""
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "json":
        doc = {
            "id": window.id,
            "kind": window.kind,
            "N": window.N,
            "features": list(window.features),
            "rows": window.samples.tolist(),
            "labels": _labels_to_json(window.labels),
        }
        if window.path_id is not None:
            doc["path"] = window.path_id
        path.write_text(json.dumps(doc))
        return path

    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *window.features])
        for t, row in enumerate(window.samples.tolist()):
            w.writerow([t, *row])
    side = {"id": window.id, "kind": window.kind, "labels": _labels_to_json(window.labels)}
    if window.path_id is not None:
        side["path"] = window.path_id
    sidecar_path(path).write_text(json.dumps(side))
    return path


def _check_catalog(features: Sequence[str], catalog: FeatureCatalog | None) -> None:
    if catalog is None:
        return
    if tuple(features) != catalog.ids:
        raise SchemaError(
            f"window has {len(features)} features {list(features)[:3]}..., "
            f"catalog expects {len(catalog.ids)} ({catalog.ids[0]}..{catalog.ids[-1]})"
        )


def _parse_count(value, row, column) -> int:
    try:
        f = float(value)
    except (TypeError, ValueError):
        raise ParseError(f"not a number: {value!r}", row=row, column=column) from None
    if not np.isfinite(f) or f != int(f):
        raise ParseError(f"count must be an integer, got {value!r}", row=row, column=column)
    if f < 0:
        raise ParseError(f"negative count {value!r}", row=row, column=column)
    return int(f)


def load_window(path: str | Path, format: str | None = None,
                catalog: FeatureCatalog | None = None) -> EventWindow:
    """Read a window written by :func:`store_window`.

    Missing labels (no sidecar, or no ``labels`` key) load as an empty list.
    When ``catalog`` is given the feature columns must match it exactly.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "json":
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", row=exc.lineno) from exc
        for key in ("id", "features", "rows"):
            if key not in doc:
                raise ParseError(f"missing key {key!r}")
        features = tuple(doc["features"])
        rows = doc["rows"]
        parsed = []
        for i, row in enumerate(rows):
            if len(row) != len(features):
                raise ParseError(f"expected {len(features)} values, got {len(row)}", row=i)
            parsed.append([_parse_count(v, i, features[j]) for j, v in enumerate(row)])
        if "N" in doc and int(doc["N"]) != len(parsed):
            raise SchemaError(f"N={doc['N']} but {len(parsed)} rows present")
        _check_catalog(features, catalog)
        return EventWindow(
            id=str(doc["id"]),
            samples=np.array(parsed, dtype=np.int64).reshape(len(parsed), len(features)),
            features=features,
            labels=_labels_from_json(doc.get("labels", [])),
            kind=doc.get("kind", INJECTED if doc.get("labels") else BASELINE),
            path_id=doc.get("path"),
        )

    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", row=0) from None
        if not header or header[0] != "t":
            raise ParseError("header must start with 't'", row=0)
        features = tuple(header[1:])
        parsed = []
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", row=i)
            parsed.append([_parse_count(v, i, features[j]) for j, v in enumerate(row[1:])])
    _check_catalog(features, catalog)
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    labels = _labels_from_json(meta.get("labels", []))
    return EventWindow(
        id=str(meta.get("id", path.stem)),
        samples=np.array(parsed, dtype=np.int64).reshape(len(parsed), len(features)),
        features=features,
        labels=labels,
        kind=meta.get("kind", INJECTED if labels else BASELINE),
        path_id=meta.get("path"),
    )
