"""Block-level covariance descriptors from trajectory features.

A video is summarized as a set of overlapping spatio-temporal blocks; each
block holds the covariance matrix of the feature vectors of the trajectories
anchored inside it. Blocks with too few trajectories are rejected so the
covariance can be full rank. Covariance sums are served by a prefix-sum
(integral) structure so every placement is answered in O(d^2) instead of a
fresh pass over the features.

Also includes a synthetic trajectory generator that stands in for a video
front end: classes differ both in feature covariance structure and in their
spatio-temporal motion pattern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionMismatchError, NotSpdError
from .manifold import SpdMatrix, SymMatrix

# Salt for deriving per-class generative models; independent of the user seed
# so class structure is stable across datasets.
_CLASS_MODEL_SALT = 322149


@dataclass(frozen=True, eq=False)
class TrajectoryFeature:
    """One tracked trajectory: anchor point (x, y, t) plus its feature vector."""

    x: float
    y: float
    t: int
    feature: np.ndarray

    def __post_init__(self):
        f = np.array(self.feature, dtype=np.float64)
        if f.ndim != 1 or f.shape[0] < 2:
            raise DimensionMismatchError(
                f"feature must be a vector of length >= 2, got shape {f.shape}"
            )
        f.flags.writeable = False
        object.__setattr__(self, "feature", f)
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "t", int(self.t))


@dataclass(frozen=True)
class BlockSpec:
    """Geometry of the overlapping block lattice.

    Extents and strides are positive, strides never exceed extents (blocks
    overlap or tile), and each extent must be an integer multiple of its
    stride so blocks align exactly with the integral grid.
    """

    block_w: float
    block_h: float
    block_t: float
    stride_x: float
    stride_y: float
    stride_t: float
    min_samples: int

    def __post_init__(self):
        extents = (self.block_w, self.block_h, self.block_t)
        strides = (self.stride_x, self.stride_y, self.stride_t)
        for e, s in zip(extents, strides):
            if e <= 0 or s <= 0:
                raise ConfigError("block extents and strides must be positive")
            if s > e:
                raise ConfigError("stride must not exceed the block extent")
            ratio = e / s
            if abs(ratio - round(ratio)) > 1e-9:
                raise ConfigError(
                    "block extent must be an integer multiple of the stride "
                    f"for exact grid alignment, got {e}/{s}"
                )
        if self.min_samples < 2:
            raise ConfigError("min_samples must be at least 2")

    def cells_per_block(self) -> tuple[int, int, int]:
        return (
            int(round(self.block_w / self.stride_x)),
            int(round(self.block_h / self.stride_y)),
            int(round(self.block_t / self.stride_t)),
        )


def default_block_spec(width: float, height: float, duration: float, d: int) -> BlockSpec:
    """Default geometry: blocks of half the extent on each axis, strides of
    half the block, minimum count d+1 (smallest full-rank sample size)."""
    return BlockSpec(
        block_w=width / 2.0,
        block_h=height / 2.0,
        block_t=duration / 2.0,
        stride_x=width / 4.0,
        stride_y=height / 4.0,
        stride_t=duration / 4.0,
        min_samples=d + 1,
    )


@dataclass(frozen=True, eq=False)
class BlockDescriptor:
    """Covariance descriptor of one surviving block.

    Centers are normalized into [0, 1] so pyramid grids downstream are
    resolution independent.
    """

    cov: SpdMatrix
    cx: float
    cy: float
    ct: float
    count: int


def covariance(observations) -> SymMatrix:
    """Sample covariance with 1/(n-1) normalization.

    Parameters
    ----------
    observations : array-like, shape (n, d)
        At least two observations of equal length.

    Returns
    -------
    SymMatrix
        Positive semidefinite covariance; diagonal entries are the
        per-feature variances.
    """
    x = np.asarray(observations, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatchError(f"expected (n, d) observations, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise ValueError("covariance requires at least 2 observations")
    dev = x - x.mean(axis=0)
    return SymMatrix(dev.T @ dev / (n - 1))


@dataclass(frozen=True, eq=False)
class IntegralStats:
    """Prefix sums of (count, sum, outer-product sum) over a coarse 3-d grid.

    ``counts``/``s1``/``s2`` are zero-padded prefix volumes: entry
    ``[i, j, k]`` aggregates all cells strictly below (i, j, k), so any
    axis-aligned box of whole cells is answered by 8-corner
    inclusion-exclusion.
    """

    counts: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    cells: tuple[int, int, int]
    cell_size: tuple[float, float, float]
    d: int

    def box_query(
        self, ix0: int, ix1: int, iy0: int, iy1: int, it0: int, it1: int
    ) -> tuple[int, np.ndarray, np.ndarray]:
        """Aggregate (n, sum, outer-product sum) over cells
        [ix0, ix1) x [iy0, iy1) x [it0, it1)."""
        nx, ny, nt = self.cells
        if not (0 <= ix0 <= ix1 <= nx and 0 <= iy0 <= iy1 <= ny and 0 <= it0 <= it1 <= nt):
            raise ValueError(
                f"box ({ix0},{ix1})x({iy0},{iy1})x({it0},{it1}) outside grid {self.cells}"
            )

        def corners(p):
            return (
                p[ix1, iy1, it1]
                - p[ix0, iy1, it1]
                - p[ix1, iy0, it1]
                - p[ix1, iy1, it0]
                + p[ix0, iy0, it1]
                + p[ix0, iy1, it0]
                + p[ix1, iy0, it0]
                - p[ix0, iy0, it0]
            )

        n = int(round(float(corners(self.counts))))
        return n, corners(self.s1), corners(self.s2)


def _feature_arrays(features) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    xs = np.array([f.x for f in features], dtype=np.float64)
    ys = np.array([f.y for f in features], dtype=np.float64)
    ts = np.array([f.t for f in features], dtype=np.float64)
    fm = np.stack([f.feature for f in features])
    return xs, ys, ts, fm


def build_integral(
    features,
    cell_size: tuple[float, float, float],
    extent: tuple[float, float, float],
    d: int | None = None,
) -> IntegralStats:
    """Accumulate per-cell statistics in one pass and prefix-sum them.

    Parameters
    ----------
    features : sequence of TrajectoryFeature
        Anchors must lie in [0, width) x [0, height) x [0, duration).
    cell_size : (float, float, float)
        Grid resolution along x, y, t; all positive.
    extent : (float, float, float)
        Video width, height, duration.
    d : int, optional
        Feature dimension; required when ``features`` is empty.
    """
    sx, sy, st = (float(v) for v in cell_size)
    width, height, duration = (float(v) for v in extent)
    if sx <= 0 or sy <= 0 or st <= 0:
        raise ConfigError("grid resolution must be positive on every axis")
    if width <= 0 or height <= 0 or duration <= 0:
        raise ConfigError("video extent must be positive on every axis")

    nx = int(np.ceil(width / sx))
    ny = int(np.ceil(height / sy))
    nt = int(np.ceil(duration / st))

    if len(features) == 0:
        if d is None:
            raise ValueError("feature dimension d is required for an empty feature set")
    else:
        inferred = features[0].feature.shape[0]
        if d is not None and d != inferred:
            raise DimensionMismatchError(f"declared d={d} but features have d={inferred}")
        d = inferred

    counts = np.zeros((nx + 1, ny + 1, nt + 1))
    s1 = np.zeros((nx + 1, ny + 1, nt + 1, d))
    s2 = np.zeros((nx + 1, ny + 1, nt + 1, d, d))

    if len(features) > 0:
        xs, ys, ts, fm = _feature_arrays(features)
        if fm.shape[1] != d:
            raise DimensionMismatchError("inconsistent feature dimensions")
        if (
            xs.min() < 0 or xs.max() >= width
            or ys.min() < 0 or ys.max() >= height
            or ts.min() < 0 or ts.max() >= duration
        ):
            raise ValueError("feature coordinates outside the declared video extent")
        ix = np.floor(xs / sx).astype(np.intp)
        iy = np.floor(ys / sy).astype(np.intp)
        it = np.floor(ts / st).astype(np.intp)
        flat = (ix * ny + iy) * nt + it
        order = np.argsort(flat, kind="stable")
        flat_sorted = flat[order]
        fm_sorted = fm[order]
        cell_ids, starts = np.unique(flat_sorted, return_index=True)
        bounds = np.append(starts, len(flat_sorted))
        for cid, lo, hi in zip(cell_ids, bounds[:-1], bounds[1:]):
            ci, rem = divmod(int(cid), nt)
            cix, ciy = divmod(ci, ny)
            group = fm_sorted[lo:hi]
            counts[cix + 1, ciy + 1, rem + 1] = hi - lo
            s1[cix + 1, ciy + 1, rem + 1] = group.sum(axis=0)
            s2[cix + 1, ciy + 1, rem + 1] = group.T @ group

    for axis in (0, 1, 2):
        np.cumsum(counts, axis=axis, out=counts)
        np.cumsum(s1, axis=axis, out=s1)
        np.cumsum(s2, axis=axis, out=s2)

    for arr in (counts, s1, s2):
        arr.flags.writeable = False
    return IntegralStats(
        counts=counts, s1=s1, s2=s2, cells=(nx, ny, nt), cell_size=(sx, sy, st), d=d
    )


@dataclass(frozen=True, eq=False)
class ExtractResult:
    """Descriptors that survived rejection, plus placement diagnostics."""

    descriptors: tuple[BlockDescriptor, ...]
    placements: int
    rejected_low_count: int
    rejected_not_spd: int

    @property
    def emitted(self) -> int:
        return len(self.descriptors)

    @property
    def rejected(self) -> int:
        return self.rejected_low_count + self.rejected_not_spd


def extract_blocks(
    features,
    spec: BlockSpec,
    extent: tuple[float, float, float],
    regularizer: float = 1e-6,
    d: int | None = None,
) -> ExtractResult:
    """Slide the block lattice over the video and emit covariance descriptors.

    Each placement whose trajectory count reaches ``spec.min_samples`` yields
    a covariance computed from integral-grid box queries through the identity
    ``sum (o - mu)(o - mu)^T = S2 - n mu mu^T``, then regularized by
    ``regularizer * trace(C)/d`` times the identity before SPD validation.
    Placements below the count threshold are skipped and counted; so are the
    rare blocks whose regularized covariance still fails validation.

    ``min_samples`` below d+1 cannot guarantee a full-rank covariance and is
    accepted only when the regularizer is positive.
    """
    if len(features) == 0:
        raise ValueError("extract_blocks requires a non-empty feature set")
    d_actual = features[0].feature.shape[0] if d is None else d
    if spec.min_samples < d_actual + 1 and regularizer <= 0.0:
        raise ConfigError(
            f"min_samples={spec.min_samples} < d+1={d_actual + 1} requires a "
            "positive regularizer to rescue rank-deficient covariances"
        )
    if regularizer < 0.0:
        raise ConfigError("regularizer must be non-negative")

    width, height, duration = (float(v) for v in extent)
    integral = build_integral(
        features, (spec.stride_x, spec.stride_y, spec.stride_t), extent, d=d_actual
    )
    bx, by, bt = spec.cells_per_block()
    npx = int(np.floor((width - spec.block_w) / spec.stride_x + 1e-9)) + 1
    npy = int(np.floor((height - spec.block_h) / spec.stride_y + 1e-9)) + 1
    npt = int(np.floor((duration - spec.block_t) / spec.stride_t + 1e-9)) + 1
    npx, npy, npt = max(npx, 0), max(npy, 0), max(npt, 0)

    descriptors: list[BlockDescriptor] = []
    rejected_low = 0
    rejected_spd = 0
    eye = np.eye(d_actual)
    for i in range(npx):
        for j in range(npy):
            for k in range(npt):
                n, box_s1, box_s2 = integral.box_query(i, i + bx, j, j + by, k, k + bt)
                if n < spec.min_samples:
                    rejected_low += 1
                    continue
                mu = box_s1 / n
                scatter = box_s2 - n * np.outer(mu, mu)
                cov = scatter / (n - 1)
                cov = 0.5 * (cov + cov.T)
                cov = cov + (regularizer * np.trace(cov) / d_actual) * eye
                try:
                    spd_cov = SpdMatrix(SymMatrix(cov))
                except NotSpdError:
                    rejected_spd += 1
                    continue
                descriptors.append(
                    BlockDescriptor(
                        cov=spd_cov,
                        cx=(i * spec.stride_x + spec.block_w / 2.0) / width,
                        cy=(j * spec.stride_y + spec.block_h / 2.0) / height,
                        ct=(k * spec.stride_t + spec.block_t / 2.0) / duration,
                        count=n,
                    )
                )
    return ExtractResult(
        descriptors=tuple(descriptors),
        placements=npx * npy * npt,
        rejected_low_count=rejected_low,
        rejected_not_spd=rejected_spd,
    )


def _class_model(class_id: int, d: int):
    """Deterministic per-class generative model.

    Each class gets its own feature mean, a rotated covariance with a
    class-scaled spectrum, and a motion phase driving the anchor path.
    """
    rng = np.random.default_rng(np.random.SeedSequence([_CLASS_MODEL_SALT, class_id, d]))
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    scale = 1.0 + 0.75 * class_id
    eigvals = scale * np.exp(rng.uniform(np.log(0.5), np.log(2.0), size=d))
    chol = np.linalg.cholesky((q * eigvals) @ q.T)
    mean = rng.normal(0.0, 1.0, size=d)
    phase = 2.0 * np.pi * 0.381966 * class_id
    return mean, chol, phase


def generate_synthetic(
    class_id: int,
    num_trajectories: int,
    d: int,
    seed: int,
    width: float = 160.0,
    height: float = 120.0,
    duration: int = 64,
) -> list[TrajectoryFeature]:
    """Sample synthetic trajectory features for one video of one class.

    Deterministic for a fixed argument tuple. Features follow the class
    covariance model; anchors trace a class-phased sinusoidal path through
    the volume with Gaussian jitter, so both plain and pyramid encodings see
    class structure.
    """
    if d < 2:
        raise ConfigError("feature dimension d must be at least 2")
    if num_trajectories < 0:
        raise ConfigError("num_trajectories must be non-negative")
    if num_trajectories == 0:
        return []
    mean, chol, phase = _class_model(class_id, d)
    rng = np.random.default_rng(np.random.SeedSequence([seed, class_id]))
    t = rng.integers(0, duration, size=num_trajectories)
    u = 2.0 * np.pi * t / duration
    path_x = 0.5 + 0.3 * np.sin(u + phase)
    path_y = 0.5 + 0.3 * np.cos(u + phase)
    # Margin above float32 epsilon: coordinates survive the f32 feature-file
    # round trip without landing on the (exclusive) extent boundary.
    hi = 1.0 - 1e-6
    x = np.clip(path_x + rng.normal(0.0, 0.12, size=num_trajectories), 0.0, hi)
    y = np.clip(path_y + rng.normal(0.0, 0.12, size=num_trajectories), 0.0, hi)
    feats = mean + rng.standard_normal((num_trajectories, d)) @ chol.T
    return [
        TrajectoryFeature(x=x[i] * width, y=y[i] * height, t=int(t[i]), feature=feats[i])
        for i in range(num_trajectories)
    ]
