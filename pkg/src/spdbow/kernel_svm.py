"""Multi-channel RBF kernel over histogram distances and a one-vs-all SVM.

The kernel exponentiates a sum of per-channel histogram distances, each
normalized by the mean pairwise distance of that channel over the training
set. Chi-squared distance serves the non-negative (hard-assignment and
pyramid) encodings; pooled sparse codes can be negative, so they use squared
Euclidean distance instead. The classifier solves the binary soft-margin dual
per class with pairwise (SMO-style) updates on the maximal violating pair and
predicts by arg-max over the per-class decision values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import Histogram, MultiChannelHistogram
from .errors import DimensionMismatchError

CHI2 = "chi2"
SQEUCLIDEAN = "sqeuclidean"


def _values(h) -> np.ndarray:
    return h.values if isinstance(h, Histogram) else np.asarray(h, dtype=np.float64)


def chi2_distance(h, g) -> float:
    """Chi-squared histogram distance ``sum (h_j - g_j)^2 / (h_j + g_j)``.

    Bins where both entries are zero contribute nothing. Entries must be
    non-negative; the distance is undefined otherwise and raises.
    """
    hv, gv = _values(h), _values(g)
    if hv.shape != gv.shape:
        raise DimensionMismatchError(f"histogram lengths differ: {hv.shape} vs {gv.shape}")
    if np.any(hv < 0) or np.any(gv < 0):
        raise ValueError("chi-squared distance is undefined for negative entries")
    denom = hv + gv
    mask = denom > 0
    diff = hv[mask] - gv[mask]
    return float(np.sum(diff * diff / denom[mask]))


def _channel_distance(a: np.ndarray, b: np.ndarray, metric: str) -> float:
    if metric == CHI2:
        return chi2_distance(a, b)
    if metric == SQEUCLIDEAN:
        diff = a - b
        return float(diff @ diff)
    raise ValueError(f"unknown kernel metric {metric!r}")


@dataclass(frozen=True, eq=False)
class KernelParams:
    """Per-channel scales (mean training-pair distances) and the metric.

    Scales are computed on training samples only. Channels whose training
    distances are all zero get scale 1 and are listed in
    ``degenerate_channels``.
    """

    channel_names: tuple[str, ...]
    scales: np.ndarray
    metric: str = CHI2
    degenerate_channels: tuple[str, ...] = ()

    def __post_init__(self):
        s = np.array(self.scales, dtype=np.float64)
        if s.ndim != 1 or s.shape[0] != len(self.channel_names):
            raise DimensionMismatchError("one scale per channel required")
        if np.any(s <= 0):
            raise ValueError("channel scales must be positive")
        s.flags.writeable = False
        object.__setattr__(self, "scales", s)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))


def compute_channel_scales(training, metric: str = CHI2) -> KernelParams:
    """Mean per-channel distance over all unordered training pairs.

    Requires at least two samples. A channel with zero mean distance (all
    training histograms identical there) is flagged and assigned scale 1 so
    the kernel stays finite.
    """
    if len(training) < 2:
        raise ValueError("channel scales need at least 2 training samples")
    names = training[0].names
    for mch in training:
        if mch.names != names:
            raise DimensionMismatchError("training histograms have mixed channel layouts")
    n = len(training)
    sums = np.zeros(len(names))
    for i in range(n):
        for j in range(i + 1, n):
            for c, _ in enumerate(names):
                sums[c] += _channel_distance(
                    training[i].histograms[c].values,
                    training[j].histograms[c].values,
                    metric,
                )
    means = sums / (n * (n - 1) / 2)
    degenerate = tuple(names[c] for c in range(len(names)) if means[c] == 0.0)
    means[means == 0.0] = 1.0
    return KernelParams(
        channel_names=names, scales=means, metric=metric, degenerate_channels=degenerate
    )


def kernel_value(a: MultiChannelHistogram, b: MultiChannelHistogram, params: KernelParams) -> float:
    """RBF kernel ``exp(-sum_c distance(a_c, b_c) / scale_c)``.

    Lies in (0, 1], equals 1 on identical inputs, and is symmetric.
    """
    if a.names != params.channel_names or b.names != params.channel_names:
        raise DimensionMismatchError(
            f"channel layout mismatch: {a.names} / {b.names} vs {params.channel_names}"
        )
    exponent = 0.0
    for c in range(len(params.channel_names)):
        exponent += (
            _channel_distance(a.histograms[c].values, b.histograms[c].values, params.metric)
            / params.scales[c]
        )
    return float(np.exp(-exponent))


def gram_matrix(histograms, params: KernelParams) -> np.ndarray:
    """Symmetric kernel matrix over one list of histograms."""
    n = len(histograms)
    gram = np.empty((n, n))
    for i in range(n):
        gram[i, i] = kernel_value(histograms[i], histograms[i], params)
        for j in range(i + 1, n):
            gram[i, j] = gram[j, i] = kernel_value(histograms[i], histograms[j], params)
    return gram


def kernel_row(query: MultiChannelHistogram, training, params: KernelParams) -> np.ndarray:
    """Kernel values of one query against every training histogram."""
    return np.array([kernel_value(query, t, params) for t in training])


@dataclass(frozen=True, eq=False)
class SvmModel:
    """One-vs-all kernel SVM in the dual.

    ``dual_coefs[c, i]`` is ``alpha_i * y_i`` for class c over training index
    i, so decisions are ``dual_coefs[c] @ kernel_row + biases[c]``. Kernel
    parameters ride along so prediction uses exactly the training-time kernel.
    """

    classes: tuple
    dual_coefs: np.ndarray
    biases: np.ndarray
    c_reg: float
    params: KernelParams | None = None
    converged: tuple[bool, ...] = ()

    @property
    def n_train(self) -> int:
        return self.dual_coefs.shape[1]

    def support_indices(self, class_index: int) -> np.ndarray:
        return np.nonzero(self.dual_coefs[class_index])[0]


def _smo_binary(gram, y, c_reg, tol, max_iter):
    """Solve the binary soft-margin dual by maximal-violating-pair updates.

    Returns (alpha, bias, converged). The equality constraint is maintained
    exactly by construction; boxes are enforced by clipping.
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    decision = np.zeros(n)  # sum_s alpha_s y_s K(x_t, x_s)
    converged = False
    # Rounding dust from the paired update leaves coefficients a few ulps off
    # the box bounds, which would keep dead indices in the working sets; snap
    # anything this close onto the bound.
    snap = 1e-12 * max(1.0, c_reg)
    for _ in range(max_iter):
        err = decision - y
        up = ((y > 0) & (alpha < c_reg)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < c_reg)) | ((y > 0) & (alpha > 0))
        if not up.any() or not low.any():
            converged = True
            break
        neg_err = -err
        i = int(np.flatnonzero(up)[np.argmax(neg_err[up])])
        j = int(np.flatnonzero(low)[np.argmin(neg_err[low])])
        if neg_err[i] - neg_err[j] <= tol:
            converged = True
            break
        if y[i] != y[j]:
            lo = max(0.0, alpha[j] - alpha[i])
            hi = min(c_reg, c_reg + alpha[j] - alpha[i])
        else:
            lo = max(0.0, alpha[i] + alpha[j] - c_reg)
            hi = min(c_reg, alpha[i] + alpha[j])
        eta = gram[i, i] + gram[j, j] - 2.0 * gram[i, j]
        if eta <= 0.0:
            eta = 1e-12
        aj = np.clip(alpha[j] + y[j] * (err[i] - err[j]) / eta, lo, hi)
        ai = alpha[i] + y[i] * y[j] * (alpha[j] - aj)
        if aj < snap:
            aj = 0.0
        elif aj > c_reg - snap:
            aj = c_reg
        if ai < snap:
            ai = 0.0
        elif ai > c_reg - snap:
            ai = c_reg
        if abs(aj - alpha[j]) < 1e-14 and abs(ai - alpha[i]) < 1e-14:
            break
        decision += (ai - alpha[i]) * y[i] * gram[:, i] + (aj - alpha[j]) * y[j] * gram[:, j]
        alpha[i], alpha[j] = ai, aj

    err = decision - y
    free = (alpha > 1e-12) & (alpha < c_reg - 1e-12)
    if free.any():
        bias = float(np.mean(-err[free]))
    else:
        up = ((y > 0) & (alpha < c_reg)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < c_reg)) | ((y > 0) & (alpha > 0))
        hi = np.max(-err[up]) if up.any() else 0.0
        lo = np.min(-err[low]) if low.any() else 0.0
        bias = float((hi + lo) / 2.0)
    return alpha, bias, converged


def train_svm(
    gram: np.ndarray,
    labels,
    c_reg: float = 100.0,
    tol: float = 1e-3,
    max_iter_factor: int = 100,
    params: KernelParams | None = None,
) -> SvmModel:
    """Train a one-vs-all SVM from a precomputed kernel matrix.

    Parameters
    ----------
    gram : ndarray, shape (n, n)
        Symmetric kernel matrix over the training samples.
    labels : sequence, length n
        Class label per sample; at least two distinct classes.
    c_reg : float
        Soft-margin box constraint.
    tol : float
        KKT gap tolerance for each binary subproblem.
    max_iter_factor : int
        Pairwise-update budget per class, as a multiple of n.
    params : KernelParams, optional
        Stored on the model so prediction can reuse the training kernel.
    """
    gram = np.asarray(gram, dtype=np.float64)
    n = gram.shape[0]
    if gram.ndim != 2 or gram.shape[1] != n:
        raise DimensionMismatchError(f"gram matrix must be square, got {gram.shape}")
    if not np.allclose(gram, gram.T, atol=1e-8):
        raise ValueError("gram matrix is not symmetric")
    labels = list(labels)
    if len(labels) != n:
        raise DimensionMismatchError("one label per gram row required")
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise ValueError("training requires at least two classes")
    if c_reg <= 0:
        raise ValueError("regularization C must be positive")

    dual = np.zeros((len(classes), n))
    biases = np.zeros(len(classes))
    converged = []
    for ci, cls in enumerate(classes):
        y = np.where(np.array([lab == cls for lab in labels]), 1.0, -1.0)
        alpha, bias, ok = _smo_binary(gram, y, c_reg, tol, max_iter_factor * n)
        dual[ci] = alpha * y
        biases[ci] = bias
        converged.append(ok)
    dual.flags.writeable = False
    biases.flags.writeable = False
    return SvmModel(
        classes=classes,
        dual_coefs=dual,
        biases=biases,
        c_reg=c_reg,
        params=params,
        converged=tuple(converged),
    )


def predict(model: SvmModel, kernel_row: np.ndarray):
    """Classify one query from its kernel values against the training set.

    Returns ``(label, scores)`` where scores align with ``model.classes``;
    ties resolve to the lowest class index.
    """
    row = np.asarray(kernel_row, dtype=np.float64)
    if row.shape != (model.n_train,):
        raise DimensionMismatchError(
            f"kernel row has length {row.shape}, model was trained on {model.n_train}"
        )
    scores = model.dual_coefs @ row + model.biases
    return model.classes[int(np.argmax(scores))], scores
