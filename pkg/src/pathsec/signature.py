"""Cluster an anomalous window's samples and match clusters to attack signatures.

Rows of the uncompressed window are normalized by the baseline mean and
grouped by complete-linkage agglomeration. Clusters large enough to matter
are scanned for features that are both elevated over the baseline and carry
higher conditional entropy than the baseline feature mix. Each cluster's
significant features are then scored against every signature as the
fraction of the signature's features present.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.cluster import hierarchy
from scipy.spatial.distance import pdist, squareform

from .errors import EntropyUndefinedError, InvalidDimensionError
from .traffic import AttackSignature, EventWindow

logger = logging.getLogger(__name__)

MIN_FREQ_FRACTION = 0.02
DELTA_FRACTION = 0.5
MEAN_FLOOR = 0.1
ACTIVE_SE = 2.0


# --------------------------------------------------------------------------- types

@dataclass(frozen=True)
class MergeStep:
    left: int
    right: int
    distance: float
    new_id: int
    size: int


@dataclass(frozen=True)
class Dendrogram:
    """Full merge history. Leaves are ``0..n-1``; step ``s`` creates id ``n + s``."""

    steps: tuple[MergeStep, ...]
    n_leaves: int
    linkage: str = "complete"

    @property
    def heights(self) -> np.ndarray:
        return np.array([s.distance for s in self.steps], dtype=float)

    def to_linkage_matrix(self) -> np.ndarray:
        """Same layout as :func:`scipy.cluster.hierarchy.linkage` output."""
        return np.array([[s.left, s.right, s.distance, s.size] for s in self.steps], dtype=float).reshape(-1, 4)

    def members(self, cluster_id: int) -> list[int]:
        out, stack = [], [cluster_id]
        while stack:
            c = stack.pop()
            if c < self.n_leaves:
                out.append(c)
            else:
                s = self.steps[c - self.n_leaves]
                stack.extend((s.left, s.right))
        return sorted(out)

    def parent_step(self) -> dict[int, int]:
        """Map each cluster id to the index of the step that absorbs it."""
        return {c: i for i, s in enumerate(self.steps) for c in (s.left, s.right)}

    def cut(self, delta: float, max_clusters: int | None = None) -> list[int]:
        """Cluster ids alive after applying every merge with height ``<= delta``.

        ``max_clusters`` keeps merging past ``delta`` until at most that many remain.
        """
        n_merges = int(np.sum(self.heights <= delta))
        if max_clusters is not None:
            if max_clusters < 1:
                raise ValueError("max_clusters must be >= 1")
            n_merges = max(n_merges, self.n_leaves - max_clusters)
        alive = set(range(self.n_leaves))
        for s in self.steps[:n_merges]:
            alive -= {s.left, s.right}
            alive.add(s.new_id)
        return sorted(alive)

    def inconsistency(self, step: int, depth: int = 2) -> float:
        """Height of a link minus the mean of the links below it (to ``depth``), over their std."""
        heights, frontier = [], [(step, 1)]
        while frontier:
            i, d = frontier.pop()
            heights.append(self.steps[i].distance)
            if d < depth:
                for c in (self.steps[i].left, self.steps[i].right):
                    if c >= self.n_leaves:
                        frontier.append((c - self.n_leaves, d + 1))
        if len(heights) < 2:
            return 0.0
        sd = float(np.std(heights, ddof=1))
        return (self.steps[step].distance - float(np.mean(heights))) / sd if sd > 0 else 0.0


@dataclass(frozen=True)
class Cluster:
    id: int
    members: tuple[int, ...]
    active_features: frozenset[str] = frozenset()
    cophenetic: float = 0.0
    inconsistency: float = 0.0

    def __post_init__(self):
        if not self.members:
            raise ValueError("a cluster needs at least one member")

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class MatchResult:
    cluster_id: int
    signature: AttackSignature | None
    probability: float
    n_matched: int
    n_signature: int
    significant_features: frozenset[str] = frozenset()
    members: tuple[int, ...] = ()

    @property
    def suite_id(self) -> int | None:
        return None if self.signature is None else self.signature.suite_id


@dataclass(frozen=True)
class EntropyProfile:
    baseline_H: float
    conditional: dict[str, float]
    probabilities: dict[str, float]
    undefined: tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class BaselineProfile:
    """Reference statistics of a stored baseline window."""

    features: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    totals: np.ndarray

    @classmethod
    def from_window(cls, window: EventWindow | np.ndarray, features: Sequence[str] | None = None):
        x = np.asarray(window.samples if isinstance(window, EventWindow) else window, dtype=float)
        if isinstance(window, EventWindow):
            features = window.features
        elif features is None:
            features = tuple(f"f{i + 1}" for i in range(x.shape[1]))
        std = x.std(axis=0, ddof=1) if x.shape[0] > 1 else np.zeros(x.shape[1])
        return cls(tuple(features), x.mean(axis=0), std, x.sum(axis=0))

    @property
    def entropy(self) -> float:
        return baseline_entropy(self)

    def scale(self) -> np.ndarray:
        return np.maximum(self.mean, MEAN_FLOOR)


@dataclass(frozen=True)
class SignatureMatch:
    """Output triple ``(clusters, signatures, probabilities)`` with per-cluster detail."""

    clusters: tuple[Cluster, ...]
    signatures: tuple[AttackSignature | None, ...]
    probabilities: tuple[float, ...]
    matches: tuple[MatchResult, ...] = ()
    dendrogram: Dendrogram | None = None
    delta: float = 0.0
    entropy: EntropyProfile | None = None
    note: str = ""

    def __iter__(self):
        return iter((self.clusters, self.signatures, self.probabilities))

    def __len__(self):
        return len(self.clusters)

    def best(self) -> MatchResult | None:
        """Highest-probability match; earlier (higher-ranked) clusters win ties."""
        best = None
        for m in self.matches:
            if m.signature is not None and (best is None or m.probability > best.probability):
                best = m
        return best

    def to_dict(self) -> dict:
        return {
            "clusters": [
                {"id": c.id, "size": c.size, "cophenetic": c.cophenetic, "inconsistency": c.inconsistency,
                 "active_features": sorted(c.active_features, key=_feature_key),
                 "significant_features": sorted(m.significant_features, key=_feature_key)}
                for c, m in zip(self.clusters, self.matches)
            ],
            "signatures": [None if s is None else s.suite_id for s in self.signatures],
            "probabilities": list(self.probabilities),
            "delta": self.delta,
            "note": self.note,
        }


def _feature_key(f: str):
    return (len(f), f)


# --------------------------------------------------------------------------- clustering

def _as_points(samples) -> np.ndarray:
    x = np.asarray(samples.samples if isinstance(samples, EventWindow) else samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise InvalidDimensionError(f"samples must be 2-D, got shape {x.shape}")
    return x


def linkage_distance(Di: Cluster | Iterable[int], Dj: Cluster | Iterable[int], points) -> float:
    """Complete-linkage distance: the largest Euclidean distance across the two member sets."""
    a = list(Di.members if isinstance(Di, Cluster) else Di)
    b = list(Dj.members if isinstance(Dj, Cluster) else Dj)
    if not a or not b:
        raise ValueError("clusters must be nonempty")
    if set(a) & set(b):
        raise ValueError("clusters overlap")
    x = _as_points(points)
    diff = x[a][:, None, :] - x[b][None, :, :]
    return float(np.sqrt((diff ** 2).sum(axis=-1)).max())


def _complete_linkage(x: np.ndarray) -> Dendrogram:
    n = x.shape[0]
    if n == 1:
        return Dendrogram((), 1)
    D = squareform(pdist(x))
    np.fill_diagonal(D, np.inf)
    ids = np.arange(n)              # cluster id held by each slot
    sizes = np.ones(n, dtype=int)
    alive = np.ones(n, dtype=bool)
    nn_idx = D.argmin(axis=1)
    nn_dist = D[np.arange(n), nn_idx]
    steps = []
    for step in range(n - 1):
        dmin = nn_dist[alive].min()
        cand = np.flatnonzero(alive & (nn_dist == dmin))
        # lowest (min id, max id) pair among all pairs at the minimum distance
        partner_ids = np.where(D[cand] == dmin, ids[None, :], np.iinfo(np.int64).max)
        pbest = partner_ids.min(axis=1)
        lo, hi = np.minimum(ids[cand], pbest), np.maximum(ids[cand], pbest)
        order = np.lexsort((hi, lo))[0]
        a = int(cand[order])
        b = int(np.flatnonzero((ids == pbest[order]) & alive)[0])
        left, right = sorted((int(ids[a]), int(ids[b])))
        keep, drop = min(a, b), max(a, b)
        new_row = np.maximum(D[keep], D[drop])
        new_row[keep] = np.inf
        D[keep], D[:, keep] = new_row, new_row
        D[drop], D[:, drop] = np.inf, np.inf
        alive[drop] = False
        sizes[keep] += sizes[drop]
        ids[keep] = n + step
        steps.append(MergeStep(left, right, float(dmin), n + step, int(sizes[keep])))
        nn_dist[drop] = np.inf
        # complete linkage only grows distances to the merged slot, so only
        # rows whose nearest neighbour was involved need a rescan
        stale = np.flatnonzero(alive & ((nn_idx == keep) | (nn_idx == drop) | (np.arange(n) == keep)))
        if stale.size:
            nn_idx[stale] = D[stale].argmin(axis=1)
            nn_dist[stale] = D[stale, nn_idx[stale]]
    return Dendrogram(tuple(steps), n)


def build_dendrogram(samples, method: str = "complete") -> Dendrogram:
    """Full agglomeration history. ``method="ward"`` delegates to scipy."""
    x = _as_points(samples)
    if x.shape[0] < 1:
        raise InvalidDimensionError("need at least one sample")
    if method == "complete":
        return _complete_linkage(x)
    if method != "ward":
        raise ValueError(f"unknown linkage method {method!r}")
    if x.shape[0] == 1:
        return Dendrogram((), 1, "ward")
    Z = hierarchy.linkage(x, method="ward")
    n = x.shape[0]
    steps = tuple(MergeStep(int(min(r[0], r[1])), int(max(r[0], r[1])), float(r[2]), n + i, int(r[3]))
                  for i, r in enumerate(Z))
    return Dendrogram(steps, n, "ward")


def default_delta(samples) -> float:
    x = _as_points(samples)
    if x.shape[0] < 2:
        return 0.0
    return DELTA_FRACTION * float(pdist(x).max())


def agglomerate(samples, delta: float | None = None, max_clusters: int | None = None,
                method: str = "complete") -> tuple[Dendrogram, list[Cluster]]:
    """Merge nearest clusters until the next merge would exceed ``delta``.

    Returns the full dendrogram and the clusters of the cut. Each cut
    cluster records the height at which it would next merge (its
    cophenetic distance to the rest) and the inconsistency of that link.
    """
    x = _as_points(samples)
    if delta is None:
        delta = default_delta(x)
    if delta < 0:
        raise ValueError("delta must be >= 0")
    tree = build_dendrogram(x, method)
    heights = tree.heights
    if heights.size and np.any(np.diff(heights) < -1e-9):
        raise AssertionError("merge heights are not monotone")
    parent = tree.parent_step()
    out = []
    for cid in tree.cut(delta, max_clusters):
        step = parent.get(cid)
        if step is None:    # root: no further merge
            own = cid - tree.n_leaves
            coph = tree.steps[own].distance if own >= 0 else 0.0
            inc = tree.inconsistency(own) if own >= 0 else 0.0
        else:
            coph, inc = tree.steps[step].distance, tree.inconsistency(step)
        out.append(Cluster(cid, tuple(tree.members(cid)), cophenetic=coph, inconsistency=inc))
    return tree, out


def _own_height(tree: Dendrogram, c: Cluster) -> float:
    i = c.id - tree.n_leaves
    return tree.steps[i].distance if i >= 0 else 0.0


def active_features(cluster: Cluster, window, baseline: BaselineProfile) -> frozenset[str]:
    """Features whose cluster mean exceeds the baseline mean by more than two standard errors."""
    x = _as_points(window)
    m = x[list(cluster.members)].mean(axis=0)
    limit = baseline.mean + ACTIVE_SE * baseline.std / math.sqrt(cluster.size)
    return frozenset(f for f, hit in zip(baseline.features, m > limit) if hit)


def valid_clusters(clusters: Sequence[Cluster], window, min_freq_fraction: float = MIN_FREQ_FRACTION,
                   baseline: BaselineProfile | None = None, tree: Dendrogram | None = None) -> list[Cluster]:
    """Drop clusters holding no more than ``min_freq_fraction`` of the samples, rank the rest.

    Ranking is by descending cophenetic distance, then descending
    inconsistency, then descending own height and ascending id. When a
    baseline is given, each survivor's active features are filled in.
    """
    x = _as_points(window)
    n = x.shape[0]
    keep = [c for c in clusters if c.size > min_freq_fraction * n]
    if baseline is not None:
        keep = [Cluster(c.id, c.members, active_features(c, x, baseline), c.cophenetic, c.inconsistency)
                for c in keep]
    own = (lambda c: _own_height(tree, c)) if tree is not None else (lambda c: 0.0)
    return sorted(keep, key=lambda c: (-c.cophenetic, -c.inconsistency, -own(c), c.id))


# --------------------------------------------------------------------------- entropy

def _entropy_bits(counts: np.ndarray) -> tuple[float, np.ndarray]:
    total = counts.sum()
    if total <= 0:
        raise EntropyUndefinedError("no feature counts to estimate probabilities from")
    p = counts / total
    nz = p[p > 0]
    return float(max(0.0, -(nz * np.log2(nz)).sum())), p


def baseline_entropy(window_or_profile) -> float:
    """Entropy in bits of the feature mix of a baseline window (or profile, or count vector)."""
    if isinstance(window_or_profile, BaselineProfile):
        counts = window_or_profile.totals
    else:
        x = np.asarray(window_or_profile.samples if isinstance(window_or_profile, EventWindow)
                       else window_or_profile, dtype=float)
        counts = x.sum(axis=0) if x.ndim == 2 else x
    return _entropy_bits(np.asarray(counts, dtype=float))[0]


def conditional_entropy(window, feature: int | str, features: Sequence[str] | None = None) -> float:
    """Entropy of the feature mix over rows where ``feature`` exceeds its window median."""
    x = _as_points(window)
    if isinstance(feature, str):
        names = window.features if isinstance(window, EventWindow) else features
        if names is None or feature not in names:
            raise KeyError(f"feature {feature!r} not in window")
        feature = list(names).index(feature)
    col = x[:, feature]
    rows = col > np.median(col)
    if not rows.any():
        raise EntropyUndefinedError(f"no rows with feature {feature} above its median")
    return _entropy_bits(x[rows].sum(axis=0))[0]


def entropy_profile(window, baseline: BaselineProfile | float, features: Sequence[str] | None = None) -> EntropyProfile:
    x = _as_points(window)
    names = tuple(window.features if isinstance(window, EventWindow) else
                  features or (baseline.features if isinstance(baseline, BaselineProfile) else
                               [f"f{i + 1}" for i in range(x.shape[1])]))
    if isinstance(baseline, BaselineProfile):
        H, p = _entropy_bits(baseline.totals.astype(float))
        probs = dict(zip(baseline.features, map(float, p)))
    else:
        H, probs = float(baseline), {}
    cond, undefined = {}, []
    for j, f in enumerate(names):
        try:
            cond[f] = conditional_entropy(x, j)
        except EntropyUndefinedError:
            undefined.append(f)
    return EntropyProfile(H, cond, probs, tuple(undefined))


def significant_features(cluster: Cluster, window, baseline_H: float | EntropyProfile,
                         features: Sequence[str] | None = None) -> frozenset[str]:
    """Active features of ``cluster`` whose conditional entropy exceeds the baseline entropy.

    Features whose conditional entropy is undefined are not significant.
    """
    if isinstance(baseline_H, EntropyProfile):
        profile = baseline_H
    else:
        profile = entropy_profile(window, float(baseline_H), features)
    return frozenset(f for f in cluster.active_features
                     if f in profile.conditional and profile.conditional[f] > profile.baseline_H)


# --------------------------------------------------------------------------- matching

def match_cluster(features: Iterable[str], signatures: Sequence[AttackSignature]) -> tuple[AttackSignature | None, float, int, int]:
    """Best signature for one feature set by matched fraction; ties go to the lower suite id."""
    feats = set(features)
    best, best_p, best_ni, best_nk = None, 0.0, 0, 0
    for sig in sorted(signatures, key=lambda s: s.suite_id):
        nk = len(sig.features)
        ni = len(feats & sig.features)
        p = ni / nk if nk else 0.0
        if p > best_p:
            best, best_p, best_ni, best_nk = sig, p, ni, nk
    return best, best_p, best_ni, best_nk


def signature_match_prob(signatures: Sequence[AttackSignature], phi, delta: float | None = None,
                         baseline: BaselineProfile | EventWindow | None = None,
                         min_freq_fraction: float = MIN_FREQ_FRACTION, max_clusters: int | None = None,
                         in_window_entropy: bool = False, method: str = "complete") -> SignatureMatch:
    """Cluster ``phi`` and return the best signature and its match probability for every candidate.

    ``baseline`` supplies the reference means (for normalization and the
    activity test) and the baseline entropy. Without one, the window's own
    statistics are used. ``in_window_entropy`` computes the entropy
    reference from ``phi`` even when a baseline is given.
    """
    if not signatures:
        raise ValueError("need at least one signature")
    x = _as_points(phi)
    names = phi.features if isinstance(phi, EventWindow) else None
    if isinstance(baseline, EventWindow):
        baseline = BaselineProfile.from_window(baseline)
    if baseline is None:
        baseline = BaselineProfile.from_window(x, names)
    names = names or baseline.features
    if len(baseline.features) != x.shape[1]:
        raise InvalidDimensionError(f"window has {x.shape[1]} features, baseline has {len(baseline.features)}")

    points = x / baseline.scale()
    if delta is None:
        delta = default_delta(points)
    tree, clusters = agglomerate(points, delta, max_clusters, method)
    cands = valid_clusters(clusters, x, min_freq_fraction, baseline, tree)

    if not cands:
        return SignatureMatch((), (), (), (), tree, float(delta), None, "no classifiable clusters")

    ref_H = baseline_entropy(x) if in_window_entropy else baseline_entropy(baseline)
    profile = entropy_profile(x, ref_H, names)
    profile = EntropyProfile(profile.baseline_H, profile.conditional,
                             dict(zip(baseline.features, map(float, baseline.totals / max(baseline.totals.sum(), 1e-300)))),
                             profile.undefined)
    matches = []
    for c in cands:
        sig_feats = significant_features(c, x, profile)
        sig, p, ni, nk = match_cluster(sig_feats, signatures)
        matches.append(MatchResult(c.id, sig, p, ni, nk, sig_feats, c.members))
    return SignatureMatch(tuple(cands), tuple(m.signature for m in matches),
                          tuple(m.probability for m in matches), tuple(matches), tree, float(delta), profile)


# --------------------------------------------------------------------------- export

def write_match_json(result: SignatureMatch, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    return path


def write_dendrogram_csv(tree: Dendrogram, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "left", "right", "distance", "new_id", "size"])
        for i, s in enumerate(tree.steps):
            w.writerow([i, s.left, s.right, repr(s.distance), s.new_id, s.size])
    return path


def write_entropy_csv(profile: EntropyProfile, path: str | Path, significant: Iterable[str] = ()) -> Path:
    path = Path(path)
    sig = set(significant)
    names = sorted(set(profile.conditional) | set(profile.undefined) | set(profile.probabilities), key=_feature_key)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "baseline_probability", "conditional_entropy", "baseline_entropy", "significant"])
        for f in names:
            ce = profile.conditional.get(f)
            w.writerow([f, repr(profile.probabilities.get(f, 0.0)), "" if ce is None else repr(ce),
                        repr(profile.baseline_H), int(f in sig)])
    return path
