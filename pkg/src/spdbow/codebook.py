"""Visual dictionary learning by k-means over log-Euclidean vectors.

SPD descriptors are embedded into the flat tangent space at the identity and
clustered there with plain Euclidean k-means: initialize atoms from k distinct
samples, alternate nearest-atom assignment with arithmetic-mean updates, and
stop when the average point-to-center dispersion falls under the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionMismatchError
from .manifold import LeVector, SpdMatrix, log_euclidean_embed


@dataclass(frozen=True)
class KmeansConfig:
    """Training knobs.

    ``epsilon_tol`` is relative: the stop threshold is this fraction of the
    dispersion recorded on the first iteration. ``init`` chooses between
    plain uniform seeding (the reproducible default) and D^2-weighted
    k-means++ seeding.
    """

    k: int
    n_iter: int = 100
    epsilon_tol: float = 1e-4
    seed: int = 0
    empty_cluster_policy: str = "reseed_farthest"
    init: str = "uniform"

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if self.n_iter < 1:
            raise ConfigError("n_iter must be at least 1")
        if self.epsilon_tol < 0:
            raise ConfigError("epsilon_tol must be non-negative")
        if self.empty_cluster_policy not in ("reseed_farthest", "keep"):
            raise ConfigError(f"unknown empty_cluster_policy {self.empty_cluster_policy!r}")
        if self.init not in ("uniform", "kmeans++"):
            raise ConfigError(f"unknown init {self.init!r}")


@dataclass(frozen=True, eq=False)
class Codebook:
    """Trained dictionary: k atoms in the embedded space plus provenance."""

    atoms: np.ndarray
    source_dim: int
    n_training: int
    iterations: int
    final_dispersion: float
    dispersion_history: tuple[float, ...] = ()

    def __post_init__(self):
        a = np.array(self.atoms, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 1:
            raise DimensionMismatchError(f"atoms must be a (k, m) array, got {a.shape}")
        if np.unique(a, axis=0).shape[0] != a.shape[0]:
            raise ValueError("codebook contains duplicate atoms")
        a.flags.writeable = False
        object.__setattr__(self, "atoms", a)

    @property
    def k(self) -> int:
        return self.atoms.shape[0]

    @property
    def m(self) -> int:
        return self.atoms.shape[1]


def _embed_samples(samples) -> tuple[np.ndarray, int]:
    """Stack SPD or pre-embedded samples into an (N, m) array."""
    if len(samples) == 0:
        raise ValueError("cannot train on an empty sample set")
    first = samples[0]
    if isinstance(first, SpdMatrix):
        d = first.dim
        rows = []
        for s in samples:
            if s.dim != d:
                raise DimensionMismatchError("samples have mixed dimensions")
            rows.append(log_euclidean_embed(s).values)
        return np.stack(rows), d
    if isinstance(first, LeVector):
        d = first.source_dim
        for s in samples:
            if s.source_dim != d:
                raise DimensionMismatchError("samples have mixed dimensions")
        return np.stack([s.values for s in samples]), d
    raise TypeError("samples must be SpdMatrix or LeVector instances")


def _squared_distances(x: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    """(N, k) squared Euclidean distances, clipped at zero."""
    d2 = (
        np.sum(x**2, axis=1)[:, None]
        - 2.0 * (x @ atoms.T)
        + np.sum(atoms**2, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _init_atoms(x: np.ndarray, cfg: KmeansConfig, rng: np.random.Generator) -> np.ndarray:
    unique = np.unique(x, axis=0)
    if unique.shape[0] < cfg.k:
        raise ValueError(
            f"cannot seed {cfg.k} distinct atoms from {unique.shape[0]} distinct samples"
        )
    if cfg.init == "uniform":
        idx = rng.choice(unique.shape[0], size=cfg.k, replace=False)
        return unique[np.sort(idx)].copy()
    # k-means++: D^2-weighted sequential seeding over the distinct samples.
    chosen = [int(rng.integers(unique.shape[0]))]
    d2 = np.sum((unique - unique[chosen[0]]) ** 2, axis=1)
    while len(chosen) < cfg.k:
        probs = d2 / d2.sum()
        chosen.append(int(rng.choice(unique.shape[0], p=probs)))
        d2 = np.minimum(d2, np.sum((unique - unique[chosen[-1]]) ** 2, axis=1))
    return unique[chosen].copy()


def train_codebook(samples, cfg: KmeansConfig) -> Codebook:
    """Learn the dictionary by k-means in the embedded space.

    Each iteration assigns every point to its nearest atom, records the
    average squared point-to-center distance (the k-means objective) as the
    dispersion, breaks when that dispersion drops below the (relative)
    threshold, and otherwise recomputes atoms as arithmetic means of their
    members. The squared objective is what makes the recorded dispersion
    non-increasing from one iteration to the next. Empty clusters are
    reseeded to the point farthest from its assigned center (configurable).
    Iteration also stops early once assignments stabilize, since further
    updates cannot change the atoms.

    Deterministic for fixed samples and seed; center sums reduce in ascending
    sample order.
    """
    x, d = _embed_samples(samples)
    n = x.shape[0]
    if n < cfg.k:
        raise ValueError(f"need at least k={cfg.k} samples, got {n}")

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    atoms = _init_atoms(x, cfg, rng)

    history: list[float] = []
    threshold = None
    prev_labels = None
    iterations = 0
    for iterations in range(1, cfg.n_iter + 1):
        d2 = _squared_distances(x, atoms)
        labels = np.argmin(d2, axis=1)
        # Recompute the chosen distances from exact differences: the GEMM
        # shortcut above is fine for the argmin but cancels badly near zero.
        chosen = np.sum((x - atoms[labels]) ** 2, axis=1)
        eps = float(np.mean(chosen))
        history.append(eps)
        if threshold is None:
            threshold = cfg.epsilon_tol * eps
        if eps <= threshold:
            break
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            # Fixed point: centers are already the means of these clusters.
            break
        prev_labels = labels

        new_atoms = np.empty_like(atoms)
        empty = []
        for j in range(cfg.k):
            members = x[labels == j]
            if members.shape[0] == 0:
                empty.append(j)
                new_atoms[j] = atoms[j]
            else:
                new_atoms[j] = members.sum(axis=0) / members.shape[0]
        if empty and cfg.empty_cluster_policy == "reseed_farthest":
            dist_to_center = chosen.copy()
            for j in empty:
                far = int(np.argmax(dist_to_center))
                new_atoms[j] = x[far]
                dist_to_center[far] = -np.inf
        atoms = new_atoms

    return Codebook(
        atoms=atoms,
        source_dim=d,
        n_training=n,
        iterations=iterations,
        final_dispersion=history[-1],
        dispersion_history=tuple(history),
    )


def assign(q, codebook: Codebook) -> tuple[int, float]:
    """Nearest atom for a query vector.

    Returns the (index, Euclidean distance) pair; ties break toward the
    lowest index.
    """
    values = q.values if isinstance(q, LeVector) else np.asarray(q, dtype=np.float64)
    if values.shape != (codebook.m,):
        raise DimensionMismatchError(
            f"query has length {values.shape}, codebook atoms have m={codebook.m}"
        )
    dists = np.linalg.norm(codebook.atoms - values, axis=1)
    idx = int(np.argmin(dists))
    return idx, float(dists[idx])
