"""Dictionary-learning tests: worked cases, monotonicity, determinism."""

import numpy as np
import pytest

from spdbow.codebook import Codebook, KmeansConfig, assign, train_codebook
from spdbow.errors import ConfigError, DimensionMismatchError
from spdbow.manifold import LeVector, SpdMatrix, SymMatrix, log_euclidean_embed


def levec(values, d):
    return LeVector(np.asarray(values, dtype=float), source_dim=d)


def random_vectors(rng, n, m):
    return rng.standard_normal((n, m))


def as_levectors(x, d):
    return [levec(row, d) for row in x]


def two_blobs(rng, n_per, m, separation=6.0, sigma=0.5):
    a = rng.normal(0.0, sigma, (n_per, m))
    b = rng.normal(0.0, sigma, (n_per, m))
    a[:, 0] -= separation / 2
    b[:, 0] += separation / 2
    return a, b


class TestConfig:
    def test_validates_k(self):
        with pytest.raises(ConfigError):
            KmeansConfig(k=0)

    def test_validates_policy(self):
        with pytest.raises(ConfigError):
            KmeansConfig(k=2, empty_cluster_policy="explode")


class TestTraining:
    def test_k1_converges_to_mean(self):
        rng = np.random.default_rng(0)
        x = random_vectors(rng, 40, 6)
        cb = train_codebook(as_levectors(x, 3), KmeansConfig(k=1, seed=1))
        assert np.allclose(cb.atoms[0], x.mean(axis=0))

    def test_k_equals_n_distinct(self):
        rng = np.random.default_rng(1)
        x = random_vectors(rng, 5, 3)
        cb = train_codebook(as_levectors(x, 2), KmeansConfig(k=5, seed=2))
        assert cb.final_dispersion == pytest.approx(0.0, abs=1e-12)
        got = sorted(tuple(a) for a in cb.atoms)
        want = sorted(tuple(a) for a in x)
        assert np.allclose(got, want)

    def test_two_blob_recovery(self):
        rng = np.random.default_rng(2)
        a, b = two_blobs(rng, 100, 3)
        x = np.vstack([a, b])
        cb = train_codebook(as_levectors(x, 2), KmeansConfig(k=2, seed=3))
        means = np.array([a.mean(axis=0), b.mean(axis=0)])
        # Match atoms to blob means by first coordinate.
        atoms = cb.atoms[np.argsort(cb.atoms[:, 0])]
        means = means[np.argsort(means[:, 0])]
        assert np.linalg.norm(atoms - means, axis=1).max() < 0.1 * 0.5

    def test_dispersion_non_increasing(self):
        rng = np.random.default_rng(3)
        for trial in range(10):
            x = random_vectors(rng, 120, 5)
            cb = train_codebook(as_levectors_m(x), KmeansConfig(k=6, seed=trial))
            eps = np.array(cb.dispersion_history)
            assert np.all(np.diff(eps) <= 1e-10)

    def test_fewer_samples_than_k(self):
        rng = np.random.default_rng(4)
        x = random_vectors(rng, 3, 3)
        with pytest.raises(ValueError):
            train_codebook(as_levectors(x, 2), KmeansConfig(k=4))

    def test_identical_samples_rejected(self):
        x = np.ones((10, 3))
        with pytest.raises(ValueError):
            train_codebook(as_levectors(x, 2), KmeansConfig(k=2))

    def test_determinism(self):
        rng = np.random.default_rng(5)
        x = random_vectors(rng, 80, 6)
        cb1 = train_codebook(as_levectors(x, 3), KmeansConfig(k=5, seed=9))
        cb2 = train_codebook(as_levectors(x, 3), KmeansConfig(k=5, seed=9))
        assert np.array_equal(cb1.atoms, cb2.atoms)
        assert cb1.dispersion_history == cb2.dispersion_history

    def test_embedding_consistency(self):
        rng = np.random.default_rng(6)
        mats = []
        for _ in range(20):
            q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
            w = np.exp(rng.uniform(-1, 1, 3))
            mats.append(SpdMatrix(SymMatrix((q * w) @ q.T)))
        vecs = [log_euclidean_embed(m) for m in mats]
        cfg = KmeansConfig(k=4, seed=7)
        cb_spd = train_codebook(mats, cfg)
        cb_vec = train_codebook(vecs, cfg)
        assert np.array_equal(cb_spd.atoms, cb_vec.atoms)
        assert cb_spd.source_dim == cb_vec.source_dim == 3

    def test_assignment_idempotent_after_convergence(self):
        rng = np.random.default_rng(7)
        vecs = as_levectors_m(random_vectors(rng, 100, 4))
        cb = train_codebook(vecs, KmeansConfig(k=5, seed=8, n_iter=200))
        labels = [assign(v, cb)[0] for v in vecs]
        again = [assign(v, cb)[0] for v in vecs]
        assert labels == again

    def test_kmeanspp_init_runs(self):
        rng = np.random.default_rng(8)
        x = random_vectors(rng, 60, 4)
        cb = train_codebook(as_levectors_m(x), KmeansConfig(k=4, seed=1, init="kmeans++"))
        assert cb.k == 4


def as_levectors_m(x):
    """Wrap rows whose length happens to be a triangular number."""
    m = x.shape[1]
    d = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    if d * (d + 1) // 2 != m:
        # Pad to the next triangular length so LeVector accepts the rows.
        d = d + 1
        target = d * (d + 1) // 2
        x = np.hstack([x, np.zeros((x.shape[0], target - m))])
    return [LeVector(row, source_dim=d) for row in x]


class TestAssign:
    def make_codebook(self, atoms, d=2):
        return Codebook(
            atoms=np.asarray(atoms, dtype=float),
            source_dim=d,
            n_training=len(atoms),
            iterations=1,
            final_dispersion=0.0,
        )

    def test_exact_match(self):
        atoms = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
        cb = self.make_codebook(atoms)
        idx, dist = assign(np.array([0.0, 1.0, 0.0]), cb)
        assert idx == 2 and dist == 0.0

    def test_equidistant_pair(self):
        atoms = np.array([[9.0, 9, 9], [-1, 0, 0], [8, 8, 8], [7, 7, 7], [1, 0, 0]])
        cb = self.make_codebook(atoms)
        idx, dist = assign(np.zeros(3), cb)
        assert idx == 1
        assert dist == pytest.approx(1.0)

    def test_matches_linear_scan(self):
        rng = np.random.default_rng(9)
        atoms = rng.standard_normal((5, 6))
        cb = self.make_codebook(atoms, d=3)
        for _ in range(50):
            q = rng.standard_normal(6)
            idx, dist = assign(q, cb)
            ref = np.argmin([np.linalg.norm(q - a) for a in atoms])
            assert idx == ref
            assert dist == pytest.approx(np.linalg.norm(q - atoms[ref]))

    def test_dimension_mismatch(self):
        cb = self.make_codebook(np.eye(3))
        with pytest.raises(DimensionMismatchError):
            assign(np.zeros(4), cb)


class TestCodebookInvariants:
    def test_duplicate_atoms_rejected(self):
        with pytest.raises(ValueError):
            Codebook(
                atoms=np.array([[1.0, 2.0], [1.0, 2.0]]),
                source_dim=1,
                n_training=2,
                iterations=1,
                final_dispersion=0.0,
            )
