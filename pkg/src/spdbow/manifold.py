"""Riemannian geometry on the manifold of symmetric positive definite matrices.

Provides the matrix log/exp pair computed through symmetric eigendecomposition,
the affine invariant metric with its geodesic distance and tangent maps, the
isometric half-vectorization that embeds the manifold into a flat vector space
at the identity, and the Karcher (Frechet) mean.

All types are immutable after construction and every operation is pure, so
everything here is safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    NonConvergenceError,
    NotSpdError,
    NumericOverflowError,
)

# Relative eigenvalue floor: a matrix is accepted as SPD when its smallest
# eigenvalue exceeds SPD_EPS times its largest.
SPD_EPS = 1e-10

# Largest symmetric-matrix eigenvalue whose exponential stays finite in float64.
_EXP_MAX = 709.0


def _as_square(entries) -> np.ndarray:
    a = np.array(entries, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionMismatchError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return a


def _eigh(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending."""
    try:
        return np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NonConvergenceError(f"symmetric eigensolver failed: {exc}") from exc


@dataclass(frozen=True, eq=False)
class SymMatrix:
    """A d x d real symmetric matrix, the tangent-space element type.

    Symmetry is enforced at construction by averaging ``(A + A^T) / 2``;
    the stored array is read-only.
    """

    entries: np.ndarray

    def __post_init__(self):
        a = _as_square(self.entries)
        a = 0.5 * (a + a.T)
        a.flags.writeable = False
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def array(self) -> np.ndarray:
        return self.entries


@dataclass(frozen=True, eq=False)
class SpdMatrix:
    """A symmetric positive definite matrix, a point on the SPD manifold.

    Construction validates the spectrum: the smallest eigenvalue must exceed
    ``spd_eps`` times the largest. A matrix failing the check raises
    :class:`NotSpdError`; eigenvalues are never clamped silently.
    """

    base: SymMatrix
    spd_eps: float = field(default=SPD_EPS, repr=False)

    def __post_init__(self):
        if not isinstance(self.base, SymMatrix):
            object.__setattr__(self, "base", SymMatrix(self.base))
        w = _eigh(self.base.entries)[0]
        lam_min, lam_max = float(w[0]), float(w[-1])
        if lam_max <= 0.0 or lam_min <= self.spd_eps * lam_max:
            raise NotSpdError(
                "matrix is not positive definite within tolerance: "
                f"eigenvalue range [{lam_min:.6e}, {lam_max:.6e}], "
                f"relative floor {self.spd_eps:g}"
            )

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def array(self) -> np.ndarray:
        return self.base.entries


@dataclass(frozen=True, eq=False)
class LeVector:
    """Log-Euclidean embedding vector of length m = d(d+1)/2."""

    values: np.ndarray
    source_dim: int

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise DimensionMismatchError(f"expected a 1-d vector, got shape {v.shape}")
        d = int(self.source_dim)
        if d < 1 or v.shape[0] != d * (d + 1) // 2:
            raise DimensionMismatchError(
                f"vector length {v.shape[0]} does not match d(d+1)/2 for d={d}"
            )
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "source_dim", d)

    @property
    def dim_m(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class EigPair:
    """Eigendecomposition of a symmetric matrix.

    Eigenvalues are sorted descending; column i of ``eigenvectors`` pairs with
    ``eigenvalues[i]``. For repeated eigenvalues any orthonormal basis of the
    eigenspace may appear, so downstream code must not depend on the basis.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        w = np.array(self.eigenvalues, dtype=np.float64)
        u = np.array(self.eigenvectors, dtype=np.float64)
        d = w.shape[0]
        if w.ndim != 1 or u.shape != (d, d):
            raise DimensionMismatchError("eigenvalues/eigenvectors shapes disagree")
        if np.any(np.diff(w) > 0):
            raise ValueError("eigenvalues must be sorted descending")
        ortho = np.max(np.abs(u.T @ u - np.eye(d)))
        if ortho > 1e-10:
            raise ValueError(f"eigenvector matrix is not orthogonal (defect {ortho:.2e})")
        w.flags.writeable = False
        u.flags.writeable = False
        object.__setattr__(self, "eigenvalues", w)
        object.__setattr__(self, "eigenvectors", u)

    def reconstruct(self) -> np.ndarray:
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T


def sym_eig(A: SymMatrix) -> EigPair:
    """Eigendecompose a symmetric matrix.

    Parameters
    ----------
    A : SymMatrix
        Matrix to decompose.

    Returns
    -------
    EigPair
        Eigenvalues descending, paired orthonormal eigenvectors.
    """
    w, u = _eigh(A.array)
    return EigPair(eigenvalues=w[::-1].copy(), eigenvectors=u[:, ::-1].copy())


def _logm(a: np.ndarray) -> np.ndarray:
    """Principal logarithm of an SPD array via eigendecomposition."""
    w, u = _eigh(a)
    if w[0] <= 0.0:
        raise NotSpdError(
            f"matrix logarithm undefined: smallest eigenvalue {w[0]:.6e} <= 0"
        )
    return (u * np.log(w)) @ u.T


def _expm(a: np.ndarray) -> np.ndarray:
    """Exponential of a symmetric array via eigendecomposition."""
    w, u = _eigh(a)
    if w[-1] > _EXP_MAX:
        raise NumericOverflowError(
            f"matrix exponential overflows: eigenvalue {w[-1]:.6e} exceeds {_EXP_MAX}"
        )
    return (u * np.exp(w)) @ u.T


def matrix_log(X: SpdMatrix) -> SymMatrix:
    """Principal matrix logarithm ``U diag(ln lambda_i) U^T`` of an SPD matrix.

    The inverse of :func:`matrix_exp`: the pair is a diffeomorphism between
    the SPD manifold and the space of symmetric matrices.
    """
    return SymMatrix(_logm(X.array))


def matrix_exp(V: SymMatrix) -> SpdMatrix:
    """Matrix exponential ``U diag(exp lambda_i) U^T`` of a symmetric matrix.

    The result is SPD for any symmetric input. Raises
    :class:`NumericOverflowError` when an eigenvalue exceeds the representable
    exponent range, and :class:`NotSpdError` when the result is so badly
    conditioned that it falls below the SPD validation floor.
    """
    return SpdMatrix(SymMatrix(_expm(V.array)))


def _require_same_dim(*dims: int) -> None:
    if len(set(dims)) != 1:
        raise DimensionMismatchError(f"operand dimensions disagree: {dims}")


def airm_inner(P: SpdMatrix, v: SymMatrix, w: SymMatrix) -> float:
    """Affine invariant inner product ``tr(P^-1 v P^-1 w)`` of two tangent
    vectors at base point P.
    """
    _require_same_dim(P.dim, v.dim, w.dim)
    pv = np.linalg.solve(P.array, v.array)
    pw = np.linalg.solve(P.array, w.array)
    return float(np.einsum("ij,ji->", pv, pw))


def airm_norm(P: SpdMatrix, v: SymMatrix) -> float:
    """Norm of a tangent vector at P under the affine invariant metric."""
    return float(np.sqrt(max(airm_inner(P, v, v), 0.0)))


def _sqrt_pair(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Matrix square root and inverse square root of an SPD array."""
    w, u = _eigh(a)
    if w[0] <= 0.0:
        raise NotSpdError(
            f"matrix square root undefined: smallest eigenvalue {w[0]:.6e} <= 0"
        )
    rw = np.sqrt(w)
    return (u * rw) @ u.T, (u / rw) @ u.T


def airm_distance(X: SpdMatrix, Y: SpdMatrix) -> float:
    """Geodesic distance ``||log(X^-1/2 Y X^-1/2)||_F`` under the affine
    invariant metric.

    Non-negative, symmetric, zero iff X = Y, and invariant under congruence
    ``X -> A X A^T`` by any invertible A.
    """
    _require_same_dim(X.dim, Y.dim)
    _, s_inv = _sqrt_pair(X.array)
    m = s_inv @ Y.array @ s_inv
    w = _eigh(0.5 * (m + m.T))[0]
    if w[0] <= 0.0:
        raise NotSpdError(
            "geodesic distance lost positive definiteness numerically; "
            "operands are too badly conditioned"
        )
    return float(np.sqrt(np.sum(np.log(w) ** 2)))


def log_map(P: SpdMatrix, X: SpdMatrix) -> SymMatrix:
    """Tangent-space logarithm map at base point P.

    Maps the manifold point X to the tangent vector
    ``P^1/2 log(P^-1/2 X P^-1/2) P^1/2`` whose metric norm at P equals the
    geodesic distance between P and X.
    """
    _require_same_dim(P.dim, X.dim)
    s, s_inv = _sqrt_pair(P.array)
    inner = s_inv @ X.array @ s_inv
    return SymMatrix(s @ _logm(0.5 * (inner + inner.T)) @ s)


def exp_map(P: SpdMatrix, V: SymMatrix) -> SpdMatrix:
    """Exponential map at base point P, the inverse of :func:`log_map`.

    Maps the tangent vector V to ``P^1/2 exp(P^-1/2 V P^-1/2) P^1/2``.
    """
    _require_same_dim(P.dim, V.dim)
    s, s_inv = _sqrt_pair(P.array)
    inner = s_inv @ V.array @ s_inv
    return SpdMatrix(SymMatrix(s @ _expm(0.5 * (inner + inner.T)) @ s))


def _vec_coefficients(d: int) -> tuple[tuple[np.ndarray, np.ndarray], np.ndarray]:
    iu = np.triu_indices(d)
    coeff = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return iu, coeff


def vec(B: SymMatrix) -> LeVector:
    """Half-vectorize a symmetric matrix with sqrt(2)-weighted off-diagonals.

    Ordering is the row-major upper triangle
    ``(b11, sqrt2 b12, ..., sqrt2 b1d, b22, sqrt2 b23, ..., bdd)``; the
    weighting makes the map an isometry: ``||vec(B)||_2 = ||B||_F``.
    """
    iu, coeff = _vec_coefficients(B.dim)
    return LeVector(values=coeff * B.array[iu], source_dim=B.dim)


def unvec(a: LeVector | np.ndarray) -> SymMatrix:
    """Invert :func:`vec`, recovering the symmetric matrix.

    The vector length must be a triangular number d(d+1)/2.
    """
    values = a.values if isinstance(a, LeVector) else np.asarray(a, dtype=np.float64)
    m = values.shape[0]
    d = int(round((np.sqrt(8.0 * m + 1.0) - 1.0) / 2.0))
    if d * (d + 1) // 2 != m:
        raise DimensionMismatchError(
            f"vector length {m} is not a triangular number d(d+1)/2"
        )
    iu, coeff = _vec_coefficients(d)
    out = np.zeros((d, d))
    out[iu] = values / coeff
    out[(iu[1], iu[0])] = out[iu]
    return SymMatrix(out)


def log_euclidean_embed(X: SpdMatrix) -> LeVector:
    """Embed an SPD matrix into flat space as ``vec(log(X))``.

    Euclidean distance between embeddings is the log-Euclidean distance used
    by the codebook and encoders.
    """
    return vec(matrix_log(X))


@dataclass(frozen=True, eq=False)
class KarcherMeanResult:
    """Karcher mean estimate with convergence diagnostics.

    ``dispersions[i]`` is the sum of squared geodesic distances from the
    samples to the estimate entering iteration i; non-increasing when the
    fixed-point iteration behaves.
    """

    mean: SpdMatrix
    converged: bool
    iterations: int
    tangent_norm: float
    dispersions: tuple[float, ...]


def karcher_mean(
    samples: list[SpdMatrix] | tuple[SpdMatrix, ...],
    max_iter: int = 50,
    tol: float = 1e-9,
) -> KarcherMeanResult:
    """Karcher (Frechet) mean of SPD matrices under the affine invariant metric.

    Fixed-point iteration: map all samples to the tangent space at the current
    estimate, average, and step back through the exponential map. Stops when
    the metric norm of the mean tangent drops below ``tol`` or after
    ``max_iter`` update steps; non-convergence is reported through the result
    flag, never silently.

    The tangent average uses a fixed sequential reduction over the sample
    order so results are reproducible.

    Parameters
    ----------
    samples : sequence of SpdMatrix
        Non-empty, equal dimensions.
    max_iter : int
        Maximum number of update steps.
    tol : float
        Convergence threshold on the metric norm of the mean tangent.

    Returns
    -------
    KarcherMeanResult
    """
    if len(samples) == 0:
        raise ValueError("karcher_mean requires at least one sample")
    arrays = [s.array for s in samples]
    _require_same_dim(*[a.shape[0] for a in arrays])
    n = len(arrays)

    # Arithmetic-mean initialization: SPD matrices are closed under addition,
    # so the starting point is on the manifold.
    mu = np.zeros_like(arrays[0])
    for a in arrays:
        mu = mu + a
    mu = mu / n

    dispersions: list[float] = []
    iterations = 0
    while True:
        s, s_inv = _sqrt_pair(mu)
        tangent_sum = np.zeros_like(mu)
        dispersion = 0.0
        for a in arrays:
            m = s_inv @ a @ s_inv
            w, u = _eigh(0.5 * (m + m.T))
            if w[0] <= 0.0:
                raise NotSpdError("sample lost positive definiteness in whitened frame")
            logw = np.log(w)
            tangent_sum = tangent_sum + (u * logw) @ u.T
            dispersion += float(np.sum(logw**2))
        dispersions.append(dispersion)
        mean_tangent = tangent_sum / n
        # In the whitened frame the metric norm of the mean tangent at mu is
        # just the Frobenius norm.
        norm = float(np.linalg.norm(mean_tangent))
        if norm < tol or iterations >= max_iter:
            return KarcherMeanResult(
                mean=SpdMatrix(SymMatrix(mu)),
                converged=norm < tol,
                iterations=iterations,
                tangent_norm=norm,
                dispersions=tuple(dispersions),
            )
        mu = s @ _expm(mean_tangent) @ s
        mu = 0.5 * (mu + mu.T)
        iterations += 1
