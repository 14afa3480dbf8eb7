"""Compressed sensing of event windows.

Sensing matrices are random row subsets of the orthonormal DCT-II basis with
unit-norm columns. Windows are compressed column by column (``Y = U Phi``).
Orthogonal matching pursuit gives a reconstruction for checking fidelity.
Logarithms in the measurement-count formulas are natural logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .errors import InvalidDimensionError
from .traffic import EventWindow

DEFAULT_EPSILON = 0.25
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class SamplerConfig:
    epsilon: float = DEFAULT_EPSILON
    const_C: float = 1.0
    seed: int = 0
    log_base: str = "e"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.const_C <= 0:
            raise ValueError("const_C must be > 0")
        if self.log_base != "e":
            raise ValueError("only the natural logarithm is supported")


@dataclass(frozen=True, eq=False)
class SensingMatrix:
    U: np.ndarray
    row_subset: tuple[int, ...] | None = None
    seed: int | None = None
    name: str = "custom"

    @property
    def M(self) -> int:
        return self.U.shape[0]

    @property
    def N(self) -> int:
        return self.U.shape[1]

    @property
    def coherence(self) -> float:
        return coherence(self.U)

    @property
    def id(self) -> str:
        if self.seed is None:
            return f"{self.name}-M{self.M}-N{self.N}"
        return f"{self.name}-M{self.M}-N{self.N}-seed{self.seed}"

    @property
    def ones_image(self) -> np.ndarray:
        """``U @ 1``: where a constant column lands after compression."""
        return self.U.sum(axis=1)

    def centering_terms(self) -> tuple[np.ndarray, float, float]:
        """Quantities needed to mean-center in the compressed domain.

        Projecting ``Y`` onto ``u = U @ 1`` estimates each column mean as
        ``w @ x`` with weights ``w = U.T u / (u.u)`` that sum to one. Returns
        ``(u, ||w||^2, dof)`` where ``dof = ||U||_F^2 - (u.u) ||w||^2`` is the
        divisor that makes the centered second moment unbiased for iid rows
        (``N - 1`` when ``U`` is square orthogonal).
        """
        u = self.ones_image
        uu = float(u @ u)
        if uu <= 0:
            raise InvalidDimensionError("the constant direction is not observable through this sensing matrix")
        w = self.U.T @ u / uu
        wsq = float(w @ w)
        dof = float(np.sum(self.U ** 2)) - uu * wsq
        return u, wsq, dof

    @classmethod
    def from_array(cls, U, normalize: bool = False, name: str = "custom") -> "SensingMatrix":
        U = np.array(U, dtype=float)
        if U.ndim != 2 or U.size == 0:
            raise InvalidDimensionError(f"sensing matrix must be a nonempty 2-D array, got {U.shape}")
        if U.shape[0] > U.shape[1]:
            raise InvalidDimensionError(f"need M <= N, got {U.shape}")
        if normalize:
            U = _normalize_columns(U)
        return cls(U=U, name=name)

    @classmethod
    def from_rows(cls, N: int, row_subset, seed: int | None = None) -> "SensingMatrix":
        """Rebuild a DCT sensing matrix from its selected rows."""
        rows = tuple(int(r) for r in row_subset)
        if len(set(rows)) != len(rows):
            raise InvalidDimensionError("row subset entries must be unique")
        if not rows or min(rows) < 0 or max(rows) >= N:
            raise InvalidDimensionError(f"row subset must index rows of an N={N} transform")
        U = _normalize_columns(dct_basis(N)[list(rows)])
        return cls(U=U, row_subset=rows, seed=seed, name="dct")


@dataclass(frozen=True, eq=False)
class CompressedWindow:
    Y: np.ndarray
    N: int
    ones_image: np.ndarray
    mean_weight_sq: float
    dof: float
    source_window_id: str = ""
    sensing_matrix_id: str = ""
    sensing_seed: int | None = None
    row_subset: tuple[int, ...] | None = None
    features: tuple[str, ...] = ()

    @property
    def M(self) -> int:
        return self.Y.shape[0]

    @property
    def n_features(self) -> int:
        return self.Y.shape[1]

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "N": self.N,
            "N_f": self.n_features,
            "sensing_seed": self.sensing_seed,
            "row_subset": list(self.row_subset) if self.row_subset is not None else None,
            "Y": self.Y.tolist(),
            "source_window_id": self.source_window_id,
            "sensing_matrix_id": self.sensing_matrix_id,
            "features": list(self.features),
            "ones_image": self.ones_image.tolist(),
            "mean_weight_sq": self.mean_weight_sq,
            "dof": self.dof,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CompressedWindow":
        Y = np.array(doc["Y"], dtype=float).reshape(int(doc["M"]), int(doc["N_f"]))
        rows = doc.get("row_subset")
        if all(k in doc for k in ("ones_image", "mean_weight_sq", "dof")):
            ones, wsq, dof = np.array(doc["ones_image"], dtype=float), float(doc["mean_weight_sq"]), float(doc["dof"])
        elif rows is not None:
            ones, wsq, dof = SensingMatrix.from_rows(int(doc["N"]), rows).centering_terms()
        else:
            raise ValueError("compressed window needs either centering terms or row_subset")
        return cls(
            Y=Y,
            N=int(doc["N"]),
            ones_image=ones,
            mean_weight_sq=wsq,
            dof=dof,
            source_window_id=doc.get("source_window_id", ""),
            sensing_matrix_id=doc.get("sensing_matrix_id", ""),
            sensing_seed=doc.get("sensing_seed"),
            row_subset=tuple(rows) if rows is not None else None,
            features=tuple(doc.get("features", ())),
        )


@dataclass(frozen=True)
class SparsityProfile:
    Q: np.ndarray
    k: int
    magnitudes: np.ndarray


@dataclass(frozen=True)
class RicEstimate:
    delta_k: float
    trials: int
    k: int
    history: np.ndarray = field(repr=False)


def dct_basis(N: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``D`` with ``D @ x == dct(x, norm='ortho')``."""
    return scipy.fft.dct(np.eye(N), type=2, norm="ortho", axis=0)


def _normalize_columns(U: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(U, axis=0)
    norms[norms == 0] = 1.0
    return U / norms


def choose_measurement_count(N: int, active_features: int, cfg: SamplerConfig = SamplerConfig()) -> int:
    """``M = ceil(eps' * sqrt(N) * ln N)`` clamped to ``[1, N]``, with ``eps' = epsilon * active_features``."""
    if N < 2:
        raise InvalidDimensionError(f"N must be >= 2 (ln N must be positive), got {N}")
    eps = cfg.epsilon * active_features
    m = math.ceil(eps * math.sqrt(N) * math.log(N))
    return int(min(max(m, 1), N))


def build_sensing_matrix(N: int, M: int, seed: int = 0) -> SensingMatrix:
    """Pick ``M`` rows of the ``N``-point DCT-II and scale columns to unit norm.

    Row 0 (zero frequency) is always kept so that the window mean stays
    observable after compression; the other ``M - 1`` rows are drawn uniformly
    without replacement.
    """
    if not 1 <= M <= N:
        raise InvalidDimensionError(f"need 1 <= M <= N, got M={M}, N={N}")
    rng = np.random.default_rng(seed)
    others = rng.choice(np.arange(1, N), size=M - 1, replace=False) if M > 1 else np.array([], dtype=int)
    rows = np.sort(np.concatenate([[0], others])).astype(int)
    return SensingMatrix.from_rows(N, rows, seed=seed)


def coherence(U) -> float:
    """Largest absolute entry."""
    A = U.U if isinstance(U, SensingMatrix) else np.asarray(U, dtype=float)
    if A.size == 0:
        raise InvalidDimensionError("coherence of an empty matrix is undefined")
    return float(np.max(np.abs(A)))


def min_measurements(mu: float, Q: float, N: int, const_C: float = 1.0) -> float:
    """Lower bound ``Const * mu^2 * Q * ln N`` on the number of measurements."""
    if N < 2:
        raise InvalidDimensionError("N must be >= 2")
    if min(mu, Q, const_C) < 0:
        raise ValueError("inputs must be nonnegative")
    return const_C * mu ** 2 * Q * math.log(N)


def sparsity_profile(window: EventWindow | np.ndarray, power_fraction: float = 0.9) -> SparsityProfile:
    """Nonzero count per column, and how many high-variance columns carry ``power_fraction`` of the variance."""
    x = np.asarray(window.samples if isinstance(window, EventWindow) else window, dtype=float)
    Q = np.count_nonzero(x, axis=0)
    var = x.var(axis=0)
    order = np.sort(var)[::-1]
    total = order.sum()
    if total <= 0:
        k = 0
    else:
        k = int(np.searchsorted(np.cumsum(order), power_fraction * total - 1e-12 * total) + 1)
    return SparsityProfile(Q=Q, k=min(k, x.shape[1]), magnitudes=np.linalg.norm(x, axis=0))


def compress(U: SensingMatrix, window: EventWindow | np.ndarray) -> CompressedWindow:
    if isinstance(window, EventWindow):
        phi, wid, feats = window.samples, window.id, window.features
    else:
        phi, wid, feats = np.asarray(window), "", ()
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    if phi.shape[0] != U.N:
        raise InvalidDimensionError(f"sensing matrix is {U.M}x{U.N} but window is {phi.shape[0]}x{phi.shape[1]}")
    u, wsq, dof = U.centering_terms()
    return CompressedWindow(
        Y=U.U @ phi,
        N=U.N,
        ones_image=u,
        mean_weight_sq=wsq,
        dof=dof,
        source_window_id=wid,
        sensing_matrix_id=U.id,
        sensing_seed=U.seed,
        row_subset=U.row_subset,
        features=tuple(feats),
    )


def omp(A: np.ndarray, y: np.ndarray, sparsity: int, tol: float = RESIDUAL_TOL):
    """Orthogonal matching pursuit for one measurement vector.

    Stops after ``sparsity`` atoms or once ``||r|| <= tol * ||y||``.

    Returns
    -------
    x : ndarray, shape (N,)
    residual_norms : list of float
        ``||y - A x||`` before the first iteration and after each one.
    """
    M, N = A.shape
    y = np.asarray(y, dtype=float)
    x = np.zeros(N)
    r = y.copy()
    ynorm = np.linalg.norm(y)
    history = [ynorm]
    if sparsity <= 0 or ynorm == 0:
        return x, history
    Q = np.zeros((M, 0))
    support: list[int] = []
    for _ in range(min(sparsity, M, N)):
        if history[-1] <= tol * ynorm:
            break
        corr = np.abs(A.T @ r)
        corr[support] = -1.0
        j = int(np.argmax(corr))
        a = A[:, j].copy()
        for _ in range(2):
            a -= Q @ (Q.T @ a)
        na = np.linalg.norm(a)
        if na <= 1e-12 * max(np.linalg.norm(A[:, j]), 1.0):
            break
        q = a / na
        Q = np.column_stack([Q, q])
        r = r - q * (q @ r)
        support.append(j)
        history.append(float(np.linalg.norm(r)))
    if support:
        coef, *_ = np.linalg.lstsq(A[:, support], y, rcond=None)
        x[support] = coef
    return x, history


def reconstruct(U: SensingMatrix, Y: CompressedWindow | np.ndarray, sparsity: int,
                center: bool = False) -> np.ndarray:
    """Recover ``Phi`` column by column with OMP.

    With ``center=True`` each column's mean is estimated from the measurements
    first and only the deviation from it is treated as sparse.
    """
    Yarr = Y.Y if isinstance(Y, CompressedWindow) else np.asarray(Y, dtype=float)
    if Yarr.ndim == 1:
        Yarr = Yarr[:, None]
    if Yarr.shape[0] != U.M:
        raise InvalidDimensionError(f"measurements have {Yarr.shape[0]} rows, sensing matrix has M={U.M}")
    if sparsity > U.N:
        raise ValueError(f"sparsity {sparsity} exceeds N={U.N}")
    out = np.zeros((U.N, Yarr.shape[1]))
    if sparsity <= 0:
        return out
    means = np.zeros(Yarr.shape[1])
    if center:
        u1 = U.ones_image
        means = (u1 @ Yarr) / (u1 @ u1)
        Yarr = Yarr - np.outer(u1, means)
    for j in range(Yarr.shape[1]):
        out[:, j], _ = omp(U.U, Yarr[:, j], sparsity)
    return out + means


def reconstruction_mse(phi, phi_hat) -> float:
    a = np.asarray(phi.samples if isinstance(phi, EventWindow) else phi, dtype=float)
    b = np.asarray(phi_hat, dtype=float)
    if a.shape != b.shape:
        raise InvalidDimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def ric_estimate(U: SensingMatrix | np.ndarray, k: int, trials: int = 100, seed: int = 0) -> RicEstimate:
    """Monte-Carlo lower bound on the restricted isometry constant.

    Draws ``trials`` random ``k``-sparse unit vectors and records the running
    maximum of ``| ||U x||^2 - 1 |``. This only ever under-estimates the true
    constant.
    """
    A = U.U if isinstance(U, SensingMatrix) else np.asarray(U, dtype=float)
    N = A.shape[1]
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 1 <= k <= N:
        raise ValueError(f"need 1 <= k <= N, got k={k}")
    rng = np.random.default_rng(seed)
    history = np.empty(trials)
    worst = 0.0
    for t in range(trials):
        support = rng.choice(N, size=k, replace=False)
        v = rng.standard_normal(k)
        v /= np.linalg.norm(v)
        worst = max(worst, abs(float(np.sum((A[:, support] @ v) ** 2)) - 1.0))
        history[t] = worst
    return RicEstimate(delta_k=worst, trials=trials, k=k, history=history)
