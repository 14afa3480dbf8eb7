"""Threat scores, information assurance factors and the per-window pipeline.

A window that transits a path is compressed, tested for volume anomalies and,
when anomalous, clustered and matched against the attack signatures. The
matched clusters add up to a threat score for the path; its reciprocal is the
path's information assurance factor, which feeds the multipath throughput
model.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from . import anomaly, cs, signature
from .errors import GraphError, UnknownSignatureError
from .traffic import AttackSignature, EventWindow

logger = logging.getLogger(__name__)

I_MAX = 1.0


# --------------------------------------------------------------------------- graph

@dataclass(frozen=True)
class EdgeFactors:
    u: str
    v: str
    I: float = 1.0
    C: float = 1.0
    E: float = 1.0

    def __post_init__(self):
        for name in ("I", "C", "E"):
            if not getattr(self, name) > 0:
                raise GraphError(f"edge {self.u}-{self.v}: factor {name} must be > 0")

    @property
    def key(self) -> frozenset[str]:
        return frozenset((self.u, self.v))

    @property
    def weight(self) -> float:
        return self.I * self.C * self.E


class MultipathGraph:
    """Undirected graph with per-edge assurance, cost and encryption factors, plus named paths."""

    def __init__(self, vertices: Iterable[str], edges: Iterable[EdgeFactors],
                 paths: Mapping[str, Sequence[str]] | None = None):
        self.vertices = tuple(dict.fromkeys(vertices))
        vset = set(self.vertices)
        self._edges: dict[frozenset[str], EdgeFactors] = {}
        for e in edges:
            if e.u == e.v:
                raise GraphError(f"self-loop at {e.u}")
            if not {e.u, e.v} <= vset:
                raise GraphError(f"edge {e.u}-{e.v} references an unknown vertex")
            self._edges[e.key] = e
        self.paths: dict[str, tuple[str, ...]] = {}
        self._latest: dict[str, tuple[float, PathAssessment]] = {}
        for name, verts in (paths or {}).items():
            self.add_path(name, verts)

    def add_path(self, name: str, vertices: Sequence[str]) -> None:
        verts = tuple(vertices)
        if len(verts) < 2:
            raise GraphError(f"path {name!r} needs at least two vertices")
        if len(set(verts)) != len(verts):
            raise GraphError(f"path {name!r} is not simple")
        for a, b in zip(verts, verts[1:]):
            if frozenset((a, b)) not in self._edges:
                raise GraphError(f"path {name!r}: no edge {a}-{b}")
        self.paths[name] = verts

    def edge(self, a: str, b: str) -> EdgeFactors:
        try:
            return self._edges[frozenset((a, b))]
        except KeyError:
            raise GraphError(f"no edge {a}-{b}") from None

    @property
    def edges(self) -> tuple[EdgeFactors, ...]:
        return tuple(self._edges.values())

    def path_edges(self, path: str | Sequence[str]) -> list[EdgeFactors]:
        if isinstance(path, str):
            if path not in self.paths:
                raise GraphError(f"unknown path {path!r}")
            verts = self.paths[path]
        else:
            verts = tuple(path)
        return [self.edge(a, b) for a, b in zip(verts, verts[1:])]

    def set_path_assurance(self, path: str, I: float) -> None:
        for e in self.path_edges(path):
            self._edges[e.key] = EdgeFactors(e.u, e.v, I, e.C, e.E)

    def record(self, assessment: "PathAssessment", timestamp: float) -> bool:
        """Apply an assessment to its path unless a newer one is already recorded."""
        pid = assessment.path_id
        if pid is None:
            raise GraphError(f"assessment for window {assessment.window_id} has no path id")
        if pid not in self.paths:
            raise GraphError(f"unknown path {pid!r}")
        prev = self._latest.get(pid)
        if prev is not None and prev[0] > timestamp:
            return False
        self._latest[pid] = (timestamp, assessment)
        self.set_path_assurance(pid, assessment.I)
        return True

    def latest(self, path: str) -> "PathAssessment | None":
        item = self._latest.get(path)
        return None if item is None else item[1]

    def to_dict(self) -> dict:
        return {
            "vertices": list(self.vertices),
            "edges": [{"u": e.u, "v": e.v, "I": e.I, "C": e.C, "E": e.E} for e in self._edges.values()],
            "paths": {k: list(v) for k, v in self.paths.items()},
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MultipathGraph":
        try:
            edges = [EdgeFactors(str(e["u"]), str(e["v"]), float(e.get("I", 1.0)), float(e.get("C", 1.0)),
                                 float(e.get("E", 1.0))) for e in doc["edges"]]
            return cls([str(v) for v in doc["vertices"]], edges, doc.get("paths", {}))
        except (KeyError, TypeError) as exc:
            raise GraphError(f"malformed graph definition: {exc}") from exc


def load_graph(path: str | Path) -> MultipathGraph:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GraphError(f"{path}: invalid JSON: {exc}") from exc
    return MultipathGraph.from_dict(doc)


def path_throughput(graph: MultipathGraph, paths: Iterable[str | Sequence[str]] | None = None,
                    L: float = 1.0) -> float:
    """``L`` times the sum over paths and their edges of ``I * C * E``."""
    if not L > 0:
        raise ValueError("L must be > 0")
    chosen = list(graph.paths) if paths is None else list(paths)
    return L * sum(e.weight for p in chosen for e in graph.path_edges(p))


# --------------------------------------------------------------------------- scoring

@dataclass(frozen=True)
class PathThreat:
    path_id: str | None
    contributions: tuple[tuple[int, float, float], ...]  # (suite_id, W, prob)
    score: float

    @property
    def O_f(self) -> float:
        return self.score


def _weights(signatures: Iterable[AttackSignature], overrides: Mapping[int, float] | None) -> dict[int, float]:
    w = {s.suite_id: float(s.threat_level) for s in signatures}
    w.update({int(k): float(v) for k, v in (overrides or {}).items()})
    return w


def threat_score(matches: Iterable[signature.MatchResult] | signature.SignatureMatch,
                 signatures: Iterable[AttackSignature], path_id: str | None = None,
                 weights: Mapping[int, float] | None = None) -> PathThreat:
    """Sum of ``W * prob`` over matched clusters; unmatched clusters add nothing."""
    if isinstance(matches, signature.SignatureMatch):
        matches = matches.matches
    W = _weights(signatures, weights)
    contribs = []
    for m in matches:
        if m.signature is None:
            continue
        sid = m.signature.suite_id
        if sid not in W:
            raise UnknownSignatureError(f"match references unknown suite {sid}")
        contribs.append((sid, W[sid], float(m.probability)))
    return PathThreat(path_id, tuple(contribs), float(sum(w * p for _, w, p in contribs)))


def assurance_factor(threat: PathThreat | float, I_max: float = I_MAX) -> float:
    """``1 / O_f``, or ``I_max`` when no threat was observed."""
    score = threat.score if isinstance(threat, PathThreat) else float(threat)
    if score < 0:
        raise ValueError("threat score must be >= 0")
    return 1.0 / score if score > 0 else float(I_max)


# --------------------------------------------------------------------------- pipeline

@dataclass
class PipelineConfig:
    """Everything a window assessment needs besides the window itself.

    ``reference`` is the compressed baseline window the anomaly detector
    learns its subspace from, and ``baseline`` is the matching uncompressed
    profile used by the signature stage. :meth:`from_baseline` builds both.
    """

    sensing: cs.SensingMatrix
    reference: anomaly.Spectrum
    baseline: signature.BaselineProfile
    beta: float = anomaly.DEFAULT_BETA
    power_fraction: float = anomaly.DEFAULT_POWER_FRACTION
    q_form: str = "canonical"
    delta: float | None = None
    min_freq_fraction: float = signature.MIN_FREQ_FRACTION
    max_clusters: int | None = None
    in_window_entropy: bool = False
    gating: bool = True
    I_max: float = I_MAX
    weights: dict[int, float] | None = None

    @classmethod
    def from_baseline(cls, baseline: EventWindow, M: int | None = None, ratio: float | None = None,
                      sensing_seed: int = 0, sampler: cs.SamplerConfig | None = None, **kwargs) -> "PipelineConfig":
        """Build the sensing matrix and both baseline references from one attack-free window.

        ``M`` wins over ``ratio``; with neither, the measurement count
        follows from the window's sparsity profile.
        """
        N = baseline.N
        power_fraction = kwargs.get("power_fraction", anomaly.DEFAULT_POWER_FRACTION)
        if M is None:
            if ratio is not None:
                if not 0 < ratio <= 1:
                    raise ValueError("ratio must be in (0, 1]")
                M = max(1, int(round(ratio * N)))
            else:
                active = max(1, cs.sparsity_profile(baseline, power_fraction).k)
                M = cs.choose_measurement_count(N, active, sampler or cs.SamplerConfig())
        U = cs.build_sensing_matrix(N, M, seed=sensing_seed)
        ref = anomaly.principal_subspace(cs.compress(U, baseline), power_fraction)
        return cls(U, ref, signature.BaselineProfile.from_window(baseline), **kwargs)


@dataclass(eq=False)
class PathAssessment:
    window_id: str
    path_id: str | None
    report: anomaly.AnomalyReport | None
    match: signature.SignatureMatch | None
    threat: PathThreat
    I: float
    compressed: cs.CompressedWindow | None
    classified: bool = False
    errors: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def anomalous(self) -> bool:
        return bool(self.report is not None and self.report.anomalous)

    @property
    def best(self) -> signature.MatchResult | None:
        return None if self.match is None else self.match.best()

    def to_dict(self, include_timings: bool = False) -> dict:
        best = self.best
        out = {
            "window_id": self.window_id,
            "path_id": self.path_id,
            "anomalous": self.anomalous,
            "anomaly": None if self.report is None else self.report.to_dict(),
            "classified": self.classified,
            "matches": None if self.match is None else self.match.to_dict(),
            "best_suite": None if best is None else best.suite_id,
            "best_probability": 0.0 if best is None else best.probability,
            "threat_score": self.threat.score,
            "contributions": [list(c) for c in self.threat.contributions],
            "I": self.I,
            "compressed": None if self.compressed is None else {
                "sensing_matrix_id": self.compressed.sensing_matrix_id, "M": self.compressed.M},
            "errors": list(self.errors),
        }
        if include_timings:
            out["timings"] = dict(self.timings)
        return out


def path_info_assurance(phi: EventWindow, signatures: Sequence[AttackSignature], cfg: PipelineConfig,
                        store: Callable[[cs.CompressedWindow], None] | None = None) -> PathAssessment:
    """Run compression, detection and (for anomalous windows) signature matching on one window.

    Every window's compressed form is passed to ``store`` exactly once.
    Stage failures are recorded in ``errors`` rather than raised.
    """
    errors: list[str] = []
    timings: dict[str, float] = {}
    report = match = compressed = None

    t0 = time.perf_counter()
    try:
        compressed = cs.compress(cfg.sensing, phi)
    except Exception as exc:  # noqa: BLE001 - recorded, batch continues
        errors.append(f"compress: {exc}")
    timings["compress"] = time.perf_counter() - t0

    if compressed is not None:
        t0 = time.perf_counter()
        try:
            report = anomaly.detect(compressed, cfg.reference, cfg.power_fraction, cfg.beta, cfg.q_form)
        except Exception as exc:  # noqa: BLE001
            errors.append(f"detect: {exc}")
        timings["detect"] = time.perf_counter() - t0
        if store is not None:
            try:
                store(compressed)
            except Exception as exc:  # noqa: BLE001
                errors.append(f"store: {exc}")

    anomalous = bool(report is not None and report.anomalous)
    run_match = anomalous or (not cfg.gating and report is not None)
    t0 = time.perf_counter()
    if run_match:
        try:
            # looked up through the module so call counts can be observed
            match = signature.signature_match_prob(
                signatures, phi, cfg.delta, cfg.baseline, cfg.min_freq_fraction,
                cfg.max_clusters, cfg.in_window_entropy)
        except Exception as exc:  # noqa: BLE001
            errors.append(f"signature: {exc}")
    timings["classify"] = time.perf_counter() - t0

    threat = PathThreat(phi.path_id, (), 0.0)
    if match is not None:
        try:
            threat = threat_score(match, signatures, phi.path_id, cfg.weights)
        except Exception as exc:  # noqa: BLE001
            errors.append(f"threat: {exc}")
    for e in errors:
        logger.warning("window %s: %s", phi.id, e)
    return PathAssessment(phi.id, phi.path_id, report, match, threat, assurance_factor(threat, cfg.I_max),
                          compressed, classified=match is not None, errors=errors, timings=timings)
