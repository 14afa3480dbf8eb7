"""Residual-subspace volume anomaly detection on compressed windows.

The principal subspace of the feature covariance is learned from a compressed
baseline window. A test window is scored by projecting the shift of its
(compressed-domain) mean away from the baseline mean onto the residual
subspace. Each feature's squared residual, scaled by the variance of the mean
difference, is compared with the Jackson-Mudholkar Q threshold.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .cs import CompressedWindow
from .errors import InvalidDimensionError, ThresholdUndefinedError
from .traffic import EventWindow

logger = logging.getLogger(__name__)

DEFAULT_BETA = 0.1
DEFAULT_POWER_FRACTION = 0.9
EIG_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigen-decomposition of a (compressed) window's feature covariance.

    ``eigenvectors`` holds all directions, sorted by descending eigenvalue;
    the first ``k`` span the principal subspace. ``mean`` and
    ``mean_weight_sq`` describe the window's estimated column means and the
    variance factor of that estimate, for use as a detection reference.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    k: int
    power_fraction: float
    mean: np.ndarray
    mean_weight_sq: float
    source_window_id: str = ""
    degenerate: bool = False

    @property
    def E(self) -> np.ndarray:
        return self.eigenvectors[:, : self.k]

    @property
    def residual_eigenvalues(self) -> np.ndarray:
        return self.eigenvalues[self.k:]

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]


@dataclass(frozen=True)
class QStatParams:
    theta1: float
    theta2: float
    theta3: float
    h0: float
    c_beta: float
    Q_beta: float
    beta: float
    method: str

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("theta1", "theta2", "theta3", "h0", "c_beta", "Q_beta", "beta", "method")}


@dataclass(frozen=True, eq=False)
class AnomalyReport:
    window_id: str
    spe: np.ndarray
    threshold: float | None
    anomalous: bool
    flagged_features: tuple[str, ...]
    features: tuple[str, ...] = ()
    params: QStatParams | None = None
    k: int = 0
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "window_id": self.window_id,
            "features": list(self.features),
            "spe": [float(v) for v in self.spe],
            "threshold": self.threshold,
            "anomalous": self.anomalous,
            "flagged_features": list(self.flagged_features),
            "k": self.k,
            "q_stat": self.params.to_dict() if self.params else None,
            "note": self.note,
        }


def _centering(Y) -> tuple[np.ndarray, np.ndarray, float, float, str, tuple[str, ...]]:
    """Return (Y, u, ||w||^2, dof, id, features) for any supported window type."""
    if isinstance(Y, CompressedWindow):
        return Y.Y, Y.ones_image, Y.mean_weight_sq, Y.dof, Y.source_window_id, Y.features
    if isinstance(Y, EventWindow):
        arr, wid, feats = Y.samples.astype(float), Y.id, Y.features
    else:
        arr, wid, feats = np.asarray(Y, dtype=float), "", ()
    if arr.ndim != 2:
        raise InvalidDimensionError(f"expected a 2-D window, got shape {arr.shape}")
    m = arr.shape[0]
    return arr, np.ones(m), 1.0 / m, m - 1.0, wid, tuple(feats)


def compressed_mean(Y) -> tuple[np.ndarray, float]:
    """Column means recovered from the measurements and the variance factor ``||w||^2`` of that estimate."""
    arr, u, wsq, _, _, _ = _centering(Y)
    return (u @ arr) / (u @ u), wsq


def principal_subspace(Y, power_fraction: float = DEFAULT_POWER_FRACTION) -> Spectrum:
    """Covariance eigen-decomposition of a window, centered in the compressed domain.

    Centering removes the component along ``U @ 1`` (plain column centering
    for an uncompressed window), so that with a square orthogonal ``U`` the
    spectrum equals that of the original window exactly.
    """
    arr, u, wsq, dof, wid, _ = _centering(Y)
    if not np.all(np.isfinite(arr)):
        raise ValueError("window contains non-finite entries")
    if not 0 < power_fraction <= 1:
        raise ValueError("power_fraction must be in (0, 1]")
    mean = (u @ arr) / (u @ u)
    centered = arr - np.outer(u, mean)
    d = arr.shape[1]
    cov = centered.T @ centered / dof if dof > 0 else np.zeros((d, d))
    vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    vals = np.where(np.abs(vals) < EIG_TOL * max(1.0, abs(vals[0])), 0.0, vals)

    total = vals[vals > 0].sum()
    if total <= 0:
        logger.warning("window %s has no variance; empty principal subspace", wid or "<array>")
        return Spectrum(vals, vecs, 0, power_fraction, mean, wsq, wid, degenerate=True)
    k = int(np.searchsorted(np.cumsum(vals), power_fraction * total * (1 - 1e-12)) + 1)
    return Spectrum(vals, vecs, min(k, d), power_fraction, mean, wsq, wid)


def residual_projection(E: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``(I - E E^T) x``; ``x`` may be one vector or a stack of row vectors."""
    E = np.asarray(E, dtype=float)
    x = np.asarray(x, dtype=float)
    if E.ndim != 2:
        raise InvalidDimensionError("E must be a 2-D matrix of column directions")
    if x.shape[-1] != E.shape[0]:
        raise InvalidDimensionError(f"x has dimension {x.shape[-1]}, E has {E.shape[0]} rows")
    if E.shape[1] == 0:
        return x.copy()
    return x - (x @ E) @ E.T


def _box_threshold(t1: float, t2: float, beta: float) -> float:
    # scaled chi-square with matched first two moments
    g, h = t2 / t1, t1 ** 2 / t2
    return float(g * stats.chi2.ppf(1 - beta, h))


def q_threshold(spectrum: Spectrum | np.ndarray, beta: float = DEFAULT_BETA,
                form: str = "canonical") -> QStatParams:
    """Q-statistic control limit from the residual eigenvalues.

    ``form="canonical"`` is the Jackson-Mudholkar approximation with
    ``h0 = 1 - 2 t1 t3 / (3 t2^2)``. ``form="printed"`` uses
    ``h0 = 1 - 2 t1 t3 / t1^2`` and omits the ``+1`` inside the bracket. That
    variant is kept only for comparison: it is not scale-invariant and often
    has no real solution. When ``h0 <= 0`` or the bracket is not positive,
    the limit falls back to Box's scaled chi-square approximation and
    ``method`` says so.

    A bare array is treated as the residual eigenvalues themselves.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must be in (0, 1)")
    if form not in ("canonical", "printed"):
        raise ValueError(f"unknown form {form!r}")
    resid = spectrum.residual_eigenvalues if isinstance(spectrum, Spectrum) else np.asarray(spectrum, float)
    resid = resid[resid > 0]
    if resid.size == 0:
        raise ThresholdUndefinedError("no positive residual eigenvalue")
    t1, t2, t3 = (float(np.sum(resid ** i)) for i in (1, 2, 3))
    c = float(stats.norm.ppf(1 - beta))
    if form == "canonical":
        h0 = 1 - 2 * t1 * t3 / (3 * t2 ** 2)
        base = c * math.sqrt(2 * t2 * h0 ** 2) / t1 + 1 + t2 * h0 * (h0 - 1) / t1 ** 2
    else:
        h0 = 1 - 2 * t1 * t3 / t1 ** 2
        base = c * math.sqrt(2 * t2 * h0 ** 2) / t1 + t2 * h0 * (h0 - 1) / t1 ** 2
    if h0 > 0 and base > 0:
        Q, method = t1 * base ** (1 / h0), form
    else:
        Q, method = _box_threshold(t1, t2, beta), f"{form}->box"
    return QStatParams(t1, t2, t3, h0, c, float(Q), beta, method)


def feature_spe(Y, reference: Spectrum) -> np.ndarray:
    """Per-feature squared residual of the window's mean shift, in units of its null variance."""
    mean, wsq = compressed_mean(Y)
    if mean.shape[0] != reference.dim:
        raise InvalidDimensionError(f"window has {mean.shape[0]} features, reference has {reference.dim}")
    z = residual_projection(reference.E, mean - reference.mean)
    return z ** 2 / (wsq + reference.mean_weight_sq)


def detect(Y, reference, power_fraction: float = DEFAULT_POWER_FRACTION, beta: float = DEFAULT_BETA,
           form: str = "canonical") -> AnomalyReport:
    """Flag a window when any feature's residual SPE exceeds ``Q_beta``.

    ``reference`` is the compressed baseline window (or its precomputed
    :class:`Spectrum`). If the residual spectrum cannot support a threshold,
    any nonzero SPE counts as anomalous and the report says why.
    """
    spectrum = reference if isinstance(reference, Spectrum) else principal_subspace(reference, power_fraction)
    _, _, _, _, wid, feats = _centering(Y)
    spe = feature_spe(Y, spectrum)
    names = feats or tuple(f"f{i + 1}" for i in range(spe.shape[0]))
    try:
        params = q_threshold(spectrum, beta, form)
    except ThresholdUndefinedError as exc:
        logger.info("window %s: %s; treating any nonzero SPE as anomalous", wid, exc)
        flagged = tuple(n for n, v in zip(names, spe) if v > EIG_TOL)
        return AnomalyReport(wid, spe, None, bool(flagged), flagged, names, None, spectrum.k,
                             note=f"threshold undefined: {exc}")
    flagged = tuple(n for n, v in zip(names, spe) if v > params.Q_beta)
    return AnomalyReport(wid, spe, params.Q_beta, bool(flagged), flagged, names, params, spectrum.k)


def eigenvalue_drift(a: Spectrum, b: Spectrum) -> float:
    """Largest absolute difference between matched eigenvalues of two spectra."""
    return float(np.max(np.abs(a.eigenvalues - b.eigenvalues)))


def _deviation_term(n_v: float, M: float, conf: float) -> float:
    if M < 1:
        raise ValueError("M must be >= 1")
    if not 0 < conf < 1:
        raise ValueError("conf must be in (0, 1)")
    return math.sqrt(n_v / M) + math.sqrt(2 * math.log(1 / conf) / M)


def eigenvalue_drift_bound(lambda1: float, n_v: int, M: int, conf: float = 0.1) -> float:
    """``4 sqrt(2 lambda1) (sqrt(n_v/M) + sqrt(2 ln(1/conf)/M))``."""
    if lambda1 < 0:
        raise ValueError("lambda1 must be >= 0")
    return 4 * math.sqrt(2 * lambda1) * _deviation_term(n_v, M, conf)


def false_alarm_bound(n_v: int, M: int, conf: float = 0.1) -> float:
    """The bracketed rate term of the false-alarm bound; its leading constant is unspecified."""
    return _deviation_term(n_v, M, conf)
