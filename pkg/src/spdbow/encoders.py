"""Histogram encoders: hard assignment, spatio-temporal pyramids, sparse coding.

All three turn a video's block descriptors into classifier-ready vectors over
a shared codebook. Hard assignment counts nearest-atom occupancy and
l2-normalizes. The pyramid encoder computes a separate hard-assigned
histogram per cell of six fixed grids over the normalized (cx, cy, ct) block
centers and concatenates them per channel. Sparse coding solves an
l1-regularized least-squares problem per descriptor and average-pools the
codes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codebook import Codebook
from .errors import DimensionMismatchError, EmptyQueryError
from .manifold import log_euclidean_embed

# Pyramid channels: name, cell count, router from (cx, cy, ct) to cell index.
# Spatial grids: whole frame, three horizontal stripes (by cy), 2x2 grid;
# temporal: whole duration, two halves. Cells are ordered row-major with the
# temporal index outermost: (ty, gy, gx). Intervals are half-open with the
# last cell closed so a center at exactly 1.0 still routes.


def _bin(v: float, n: int) -> int:
    return min(int(v * n), n - 1)


STP_CHANNELS: tuple[tuple[str, int], ...] = (
    ("s1xt1", 1),
    ("s1xt2", 2),
    ("h3xt1", 3),
    ("h3xt2", 6),
    ("g2x2xt1", 4),
    ("g2x2xt2", 8),
)


def _route(name: str, cx: float, cy: float, ct: float) -> int:
    if name == "s1xt1":
        return 0
    if name == "s1xt2":
        return _bin(ct, 2)
    if name == "h3xt1":
        return _bin(cy, 3)
    if name == "h3xt2":
        return _bin(ct, 2) * 3 + _bin(cy, 3)
    if name == "g2x2xt1":
        return _bin(cy, 2) * 2 + _bin(cx, 2)
    if name == "g2x2xt2":
        return _bin(ct, 2) * 4 + _bin(cy, 2) * 2 + _bin(cx, 2)
    raise ValueError(f"unknown channel {name!r}")


@dataclass(frozen=True, eq=False)
class Histogram:
    """Encoded vector plus how (whether) it was normalized."""

    values: np.ndarray
    norm_mode: str

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise DimensionMismatchError(f"histogram must be 1-d, got shape {v.shape}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class MultiChannelHistogram:
    """Ordered named channels; the unit the kernel consumes.

    Pyramid encodings carry the six fixed channels; plain and sparse
    encodings are wrapped as a single channel so one kernel path serves all
    encoders.
    """

    names: tuple[str, ...]
    histograms: tuple[Histogram, ...]

    def __post_init__(self):
        if len(self.names) != len(self.histograms) or not self.names:
            raise DimensionMismatchError("channel names and histograms must pair up")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "histograms", tuple(self.histograms))

    @classmethod
    def single(cls, name: str, histogram: Histogram) -> "MultiChannelHistogram":
        return cls(names=(name,), histograms=(histogram,))

    def channel(self, name: str) -> Histogram:
        return self.histograms[self.names.index(name)]


@dataclass(frozen=True, eq=False)
class SparseCode:
    """Lasso solution for one descriptor: weights, objective value, support size."""

    alpha: np.ndarray
    objective: float
    nnz: int


def _embed(descriptors, codebook: Codebook) -> np.ndarray:
    rows = []
    for desc in descriptors:
        if desc.cov.dim != codebook.source_dim:
            raise DimensionMismatchError(
                f"descriptor dimension {desc.cov.dim} does not match codebook "
                f"source dimension {codebook.source_dim}"
            )
        rows.append(log_euclidean_embed(desc.cov).values)
    return np.stack(rows)


def _raw_counts(descriptors, codebook: Codebook) -> np.ndarray:
    """Occupancy counts of nearest-atom assignments (one per descriptor)."""
    emb = _embed(descriptors, codebook)
    d2 = (
        np.sum(emb**2, axis=1)[:, None]
        - 2.0 * (emb @ codebook.atoms.T)
        + np.sum(codebook.atoms**2, axis=1)[None, :]
    )
    labels = np.argmin(d2, axis=1)
    return np.bincount(labels, minlength=codebook.k).astype(np.float64)


def _l2_normalize(values: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(values)
    return values / norm if norm > 0 else values


def encode_ha(descriptors, codebook: Codebook) -> Histogram:
    """Hard-assignment encoding: count nearest-atom occupancy, l2-normalize.

    Raw counts always sum to the number of descriptors.
    """
    if len(descriptors) == 0:
        raise EmptyQueryError("cannot encode an empty descriptor set")
    return Histogram(values=_l2_normalize(_raw_counts(descriptors, codebook)), norm_mode="l2")


def encode_stp(descriptors, codebook: Codebook) -> MultiChannelHistogram:
    """Spatio-temporal pyramid encoding over the six fixed grid channels.

    Every descriptor lands in exactly one cell per channel according to its
    normalized center; each cell gets its own hard-assigned, per-cell
    l2-normalized histogram (empty cells stay zero), concatenated in
    row-major cell order. The first channel reproduces :func:`encode_ha`.
    """
    if len(descriptors) == 0:
        raise EmptyQueryError("cannot encode an empty descriptor set")
    for desc in descriptors:
        if not (0.0 <= desc.cx <= 1.0 and 0.0 <= desc.cy <= 1.0 and 0.0 <= desc.ct <= 1.0):
            raise ValueError(
                f"descriptor center ({desc.cx}, {desc.cy}, {desc.ct}) outside [0, 1]^3; "
                "upstream normalization bug"
            )
    histograms = []
    for name, n_cells in STP_CHANNELS:
        cells: list[list] = [[] for _ in range(n_cells)]
        for desc in descriptors:
            cells[_route(name, desc.cx, desc.cy, desc.ct)].append(desc)
        parts = []
        for members in cells:
            if members:
                parts.append(_l2_normalize(_raw_counts(members, codebook)))
            else:
                parts.append(np.zeros(codebook.k))
        histograms.append(Histogram(values=np.concatenate(parts), norm_mode="l2"))
    return MultiChannelHistogram(
        names=tuple(name for name, _ in STP_CHANNELS), histograms=tuple(histograms)
    )


def _soft_threshold(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


def lasso(
    q: np.ndarray,
    dictionary: np.ndarray,
    lam: float,
    tol: float = 1e-7,
    max_sweeps: int = 10_000,
) -> SparseCode:
    """Solve ``min 1/2 ||D a - q||^2 + lam ||a||_1`` by cyclic coordinate descent.

    Parameters
    ----------
    q : ndarray, shape (m,)
        Target vector.
    dictionary : ndarray, shape (m, k)
        Atom matrix, one atom per column. Callers should pass l2-normalized
        atoms so ``lam`` has a consistent meaning.
    lam : float
        Non-negative l1 penalty.
    tol : float
        Stop once the largest coordinate update in a sweep falls below this.
    max_sweeps : int
        Hard sweep budget.

    Coordinates update cyclically in atom order, so results are deterministic.
    Convergence to the stated tolerance is fast when the dictionary has at
    least as many rows as atoms (the usual regime here, since the embedding
    length d(d+1)/2 exceeds the codebook size); heavily underdetermined
    dictionaries may exhaust the sweep budget with a best-effort solution.
    """
    if lam < 0:
        raise ValueError("lasso penalty must be non-negative")
    d = np.asarray(dictionary, dtype=np.float64)
    qv = np.asarray(q, dtype=np.float64)
    if d.ndim != 2 or qv.ndim != 1 or d.shape[0] != qv.shape[0]:
        raise DimensionMismatchError(
            f"dictionary {d.shape} and target {qv.shape} shapes disagree"
        )
    k = d.shape[1]
    col_norms2 = np.sum(d**2, axis=0)
    alpha = np.zeros(k)
    residual = qv.copy()
    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in range(k):
            if col_norms2[j] == 0.0:
                continue
            old = alpha[j]
            rho = d[:, j] @ residual + col_norms2[j] * old
            new = _soft_threshold(rho, lam) / col_norms2[j]
            if new != old:
                residual += d[:, j] * (old - new)
                alpha[j] = new
                max_delta = max(max_delta, abs(new - old))
        # A small sweep update only bounds the optimality residual by about
        # k times the update, so confirm the stationarity conditions before
        # accepting the stop.
        if max_delta < tol and lasso_kkt_violation(qv, d, lam, alpha) <= tol:
            break
    objective = 0.5 * float(residual @ residual) + lam * float(np.sum(np.abs(alpha)))
    return SparseCode(alpha=alpha, objective=objective, nnz=int(np.count_nonzero(alpha)))


def lasso_kkt_violation(q, dictionary, lam, alpha) -> float:
    """Largest violation of the lasso optimality conditions.

    On the support the residual correlation must equal ``lam * sign(alpha_j)``;
    off the support its magnitude must not exceed ``lam``. Returns the max
    absolute violation, 0 for an exact optimum.
    """
    d = np.asarray(dictionary, dtype=np.float64)
    corr = d.T @ (np.asarray(q, dtype=np.float64) - d @ alpha)
    violation = 0.0
    for j in range(d.shape[1]):
        if alpha[j] != 0.0:
            violation = max(violation, abs(corr[j] - lam * np.sign(alpha[j])))
        else:
            violation = max(violation, max(abs(corr[j]) - lam, 0.0))
    return float(violation)


def normalized_dictionary(codebook: Codebook) -> np.ndarray:
    """Codebook atoms as an (m, k) matrix with l2-normalized columns."""
    d = codebook.atoms.T.copy()
    norms = np.linalg.norm(d, axis=0)
    norms[norms == 0.0] = 1.0
    return d / norms


def encode_sc(descriptors, codebook: Codebook, lam: float = 0.15) -> Histogram:
    """Sparse-coding encoding: solve the lasso per descriptor, average-pool.

    The pooled vector is the plain arithmetic mean of the per-descriptor
    codes with no further normalization, so entries may be negative.
    """
    if len(descriptors) == 0:
        raise EmptyQueryError("cannot encode an empty descriptor set")
    emb = _embed(descriptors, codebook)
    dictionary = normalized_dictionary(codebook)
    pooled = np.zeros(codebook.k)
    for row in emb:
        pooled += lasso(row, dictionary, lam).alpha
    return Histogram(values=pooled / emb.shape[0], norm_mode="none")
