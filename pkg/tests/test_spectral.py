import math
import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from latentinfer import graphgen as g
from latentinfer import model as m
from latentinfer import spectral as s
from latentinfer.errors import NumericalError, ValidationError
from latentinfer.evaluate import correlations, procrustes_align

UNIFORM = m.LatentDistribution.uniform()
KERNEL = m.Kernel()
SBM_KERNEL = m.Kernel(0.5, 0.5, 2.0)
CAL = s.ThresholdParams(constant=s.CALIBRATED_CONSTANT)


def sbm_graph(n, rho, seed):
    x = m.sample_latents(m.LatentDistribution.atoms([0, 1]), n, seed)
    return x, g.generate_simplified(x, SBM_KERNEL, rho, seed)


class TestEigendecomposition:
    def test_identity(self):
        np.testing.assert_allclose(s.symmetric_eigendecomposition(np.eye(3), 3).values, [1, 1, 1])

    def test_swap_matrix(self):
        e = s.symmetric_eigendecomposition(np.array([[0.0, 1.0], [1.0, 0.0]]), 2)
        np.testing.assert_allclose(e.values, [1, -1], atol=1e-15)
        r = 1 / math.sqrt(2)
        assert abs(abs(e.vectors[:, 0] @ [r, r]) - 1) < 1e-12
        assert abs(abs(e.vectors[:, 1] @ [r, -r]) - 1) < 1e-12

    @pytest.mark.parametrize("seed", range(20))
    def test_characteristic_polynomial_oracle(self, seed):
        rs = np.random.default_rng(seed)
        n = 2 + seed % 5
        M = rs.integers(-100, 101, size=(n, n))
        M = np.triu(M) + np.triu(M, 1).T
        got = s.symmetric_eigendecomposition(M / 100.0, n).values
        np.testing.assert_allclose(got, oracles.eigenvalues_charpoly(M.tolist(), 100.0), atol=1e-8)

    @given(st.integers(0, 10_000), st.integers(2, 12))
    @settings(max_examples=40, deadline=None)
    def test_invariants(self, seed, n):
        rs = np.random.default_rng(seed)
        A = rs.normal(size=(n, n))
        A = A + A.T
        k = max(1, n // 2)
        e = s.symmetric_eigendecomposition(A, k, order="algebraic")
        assert np.all(np.diff(e.values) <= 0)
        np.testing.assert_allclose(e.vectors.T @ e.vectors, np.eye(k), atol=1e-10)
        resid = np.linalg.norm(A @ e.vectors - e.vectors * e.values, axis=0)
        assert resid.max() <= 1e-10 * np.linalg.norm(A, 2)

    def test_magnitude_order_picks_large_negative(self):
        A = np.diag([1.0, -3.0, 0.5])
        assert s.symmetric_eigendecomposition(A, 1, order="magnitude").values.tolist() == [-3.0]
        assert s.symmetric_eigendecomposition(A, 1, order="algebraic").values.tolist() == [1.0]
        assert s.symmetric_eigendecomposition(A, 1, order="auto").values.tolist() == [-3.0]

    def test_rejects_asymmetric(self):
        with pytest.raises(ValidationError):
            s.symmetric_eigendecomposition(np.array([[0.0, 1.0], [0.0, 0.0]]), 1)

    def test_deterministic_signs(self):
        A = np.random.default_rng(1).normal(size=(8, 8))
        A = A + A.T
        a = s.symmetric_eigendecomposition(A, 4)
        b = s.symmetric_eigendecomposition(A.copy(), 4)
        assert np.array_equal(a.vectors, b.vectors)
        assert np.all(a.vectors[np.argmax(np.abs(a.vectors), axis=0), range(4)] > 0)

    def test_iterative_path_matches_dense(self, monkeypatch):
        x, A = sbm_graph(300, 30, 0)
        dense = s.symmetric_eigendecomposition(A.matrix.astype(float), 4, order="algebraic")
        monkeypatch.setattr(s, "DENSE_LIMIT", 50)
        it = s.symmetric_eigendecomposition(A.matrix.astype(float), 4, order="algebraic")
        np.testing.assert_allclose(it.values, dense.values, atol=1e-8)
        np.testing.assert_allclose(np.abs(it.vectors.T @ dense.vectors), np.eye(4), atol=1e-6)


class TestDecideThreshold:
    def test_rule(self):
        assert s.decide_threshold([1.0, 0.6, 0.1, 0.09], 0.3) == (2, False)

    def test_fallback_warns(self):
        with pytest.warns(s.SpectralWarning):
            assert s.decide_threshold([1.0, 0.99, 0.98], 0.3) == (1, True)

    def test_needs_two_values(self):
        with pytest.raises(ValidationError):
            s.decide_threshold([1.0], 0.1)

    def test_threshold_param_checks(self):
        with pytest.raises(ValidationError):
            s.ThresholdParams(t=10).resolve_t(rho=5, n=100)
        with pytest.raises(ValidationError):
            s.ThresholdParams(t=1.5).resolve_t(rho=4, n=100)
        with pytest.warns(s.SpectralWarning):
            s.ThresholdParams().resolve_t(rho=20, n=10**6)

    def test_sbm_selects_two(self):
        n = 1024
        hits = 0
        for seed in range(10):
            _, A = sbm_graph(n, math.log(n) ** 2, seed)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                hits += s.sm_est(A, CAL).rank == 2
        assert hits >= 9


class TestSmEst:
    def test_complete_graph(self):
        A = g.AdjacencyMatrix.from_dense(np.ones((4, 4)) - np.eye(4), rho=4)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            e = s.sm_est(A)
        assert e.rank == 1
        assert e.meta["eigenvalues"][0] == pytest.approx(0.75)
        np.testing.assert_allclose(e.rows @ e.rows.T, np.full((4, 4), 0.75), atol=1e-12)

    def test_rank_one_factor(self):
        v = np.array([1.0, 2.0, 2.0]) / 3.0
        lam = 6.0
        e = s.sm_est(lam * np.outer(v, v), s.ThresholdParams(t=2.5, constant=0.01), rho=3.0, k=3)
        expected = math.sqrt(3 / 3.0) * v * math.sqrt(lam)
        assert e.rank == 1
        np.testing.assert_allclose(np.abs(e.rows[:, 0]), np.abs(expected), atol=1e-12)

    def test_reconstruction_identity(self):
        x = m.sample_latents(UNIFORM, 400, 3)
        A = g.generate_simplified(x, KERNEL, 200, 3)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            e = s.sm_est(A, CAL)
        vals, vecs = np.linalg.eigh(A.to_dense())
        order = np.lexsort((-vals, -np.abs(vals)))[:e.rank]
        Abar = (vecs[:, order] * np.clip(vals[order], 0, None)) @ vecs[:, order].T
        C = 400 / 200
        G = e.rows @ e.rows.T
        assert np.linalg.norm(G - C * Abar) / np.linalg.norm(C * Abar) < 1e-8
        assert np.linalg.eigvalsh(G).min() > -1e-8

    def test_sbm_rows_cluster(self):
        n = 1024
        x, A = sbm_graph(n, math.log(n) ** 2, 5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            e = s.sm_est(A, CAL)
        lab = x.positions > 0.5
        D = np.linalg.norm(e.rows[:, None, :] - e.rows[None, :, :], axis=2)
        same = lab[:, None] == lab[None, :]
        off = ~np.eye(n, dtype=bool)
        assert np.median(D[same & off]) < np.median(D[~same]) / 3

    def test_needs_rho(self):
        with pytest.raises(ValidationError):
            s.sm_est(np.eye(3))

    def test_all_negative_fails(self):
        with pytest.raises(NumericalError):
            s.sm_est(-np.eye(4) * 3 + np.diag([0, 0, 0, -1.0]), s.ThresholdParams(t=2.5, constant=0.01), rho=3.0)

    def test_weyl_bound(self):
        n = 600
        x = m.sample_latents(UNIFORM, n, 1).positions
        K = KERNEL.matrix(x)
        for rho in (20.0, 80.0):
            A = g.generate_simplified(x, KERNEL, rho, 1).to_dense()
            la = np.sort(np.linalg.eigvalsh(A / rho))[::-1]
            lk = np.sort(np.linalg.eigvalsh(K / n))[::-1]
            bound = np.linalg.norm(A / rho - K / n, 2)
            assert np.all(np.abs(la - lk) <= bound + 1e-10)

    def test_error_decreases_with_density(self):
        # one fixed oracle width for every density so the target does not move with the selected rank
        n, width = 1024, 2
        meds = []
        for rho in (math.log(n), math.log(n) ** 2, math.log(n) ** 3):
            errs = []
            for seed in range(10):
                x = m.sample_latents(UNIFORM, n, seed)
                A = g.generate_simplified(x, KERNEL, rho, seed)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    e = s.sm_est(A, CAL)
                ref = m.mercer_features(KERNEL, UNIFORM, x.positions, width)
                aligned = procrustes_align(e.rows, ref)
                ref = np.pad(ref, ((0, 0), (0, aligned.shape[1] - width)))
                errs.append(np.median(np.linalg.norm(aligned - ref, axis=1)))
            meds.append(np.median(errs))
        assert meds[0] > meds[1] > meds[2]

    def test_degree_normalized_keeps_index(self):
        M = np.zeros((5, 5))
        M[0, 1] = M[1, 0] = M[1, 2] = M[2, 1] = M[0, 2] = M[2, 0] = 1
        M[3, 4] = M[4, 3] = 1
        A = g.AdjacencyMatrix.from_dense(np.pad(M, ((0, 1), (0, 1))), rho=2.5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            e = s.sm_est(A, s.ThresholdParams(t=2.0, constant=0.01), degree_normalize=True)
        assert e.index.tolist() == [0, 1, 2, 3, 4]


class TestBipartite:
    def test_identity_fails(self):
        with pytest.raises(NumericalError):
            s.bipartite_est(np.eye(2))

    def test_common_followers(self):
        B = np.zeros((3, 3))
        B[0, [0, 1]] = B[1, [0, 1]] = 1
        A = s.bipartite_gram(B)
        assert A[0, 1] == 2 and A[0, 0] == 0

    def test_finite_theta_shrinks_diagonal(self):
        B = np.ones((4, 2))
        A = s.bipartite_gram(B, theta=0.5).toarray()
        np.testing.assert_allclose(np.diag(A), [2.0, 2.0])

    def test_rejects_theta_at_least_one(self):
        with pytest.raises(ValidationError):
            s.bipartite_est(np.ones((4, 2)), theta=1.0)

    def test_rejects_fewer_followers(self):
        with pytest.raises(ValidationError):
            s.bipartite_est(np.ones((2, 4)))

    def test_reconstruction_identity(self):
        n, mm = 60, 6000
        x = m.sample_latents(UNIFORM, n, 2)
        y = m.sample_latents(UNIFORM, mm, 2, stream=2)
        B = g.generate_bipartite(x, y, KERNEL, 2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            e = s.bipartite_est(B, gap_constant=0.05)
        A = s.bipartite_gram(B).toarray()
        vals, vecs = np.linalg.eigh(A)
        top = np.argsort(-vals)[:e.rank]
        ref = n ** 1.5 * mm ** -0.5 * (vecs[:, top] * np.sqrt(np.clip(vals[top], 0, None))) @ vecs[:, top].T
        assert np.linalg.norm(e.rows @ e.rows.T - ref) <= 1e-8 * np.linalg.norm(ref)

    def test_gram_tracks_kernel(self):
        n = 300
        mult = math.ceil(math.log(n) ** 3)
        x = m.sample_latents(UNIFORM, n, 0)
        y = m.sample_latents(UNIFORM, n * mult, 0, stream=2)
        B = g.generate_bipartite(x, y, KERNEL, 0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            e = s.bipartite_est(B)
        iu = np.triu_indices(n, 1)
        G, K = e.rows @ e.rows.T, KERNEL.matrix(x.positions)
        assert correlations(G[iu], K[iu])["pearson"] >= 0.7


class TestDegreeNormalize:
    def test_regular(self):
        C = np.roll(np.eye(6), 1, axis=1) + np.roll(np.eye(6), -1, axis=1)
        out, kept = s.degree_normalize(C)
        np.testing.assert_allclose(out, C / 2)
        assert kept.tolist() == list(range(6))

    def test_k2(self):
        out, _ = s.degree_normalize(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(out, [[0, 1], [1, 0]])

    def test_star(self):
        S = np.zeros((4, 4))
        S[0, 1:] = S[1:, 0] = 1
        out, _ = s.degree_normalize(S)
        np.testing.assert_allclose(out[0, 1:], 1 / math.sqrt(3))

    def test_drops_isolated(self):
        M = sp.csr_matrix(np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=float))
        out, kept = s.degree_normalize(M)
        assert kept.tolist() == [0, 1] and out.shape == (2, 2)


class TestDecay:
    def test_exact_power_law(self):
        vals = np.arange(1, 31, dtype=float) ** -2.5
        assert s.decay_diagnostic(vals, 3, 20) == pytest.approx(-2.5, abs=1e-9)

    def test_constant(self):
        assert s.decay_diagnostic(np.ones(10), 1, 10) == pytest.approx(0.0, abs=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValidationError):
            s.decay_diagnostic(np.array([1.0, 0.5, 0.0, 0.1, 0.1]), 1, 5)

    def test_quadrature_spectrum(self):
        vals = m.operator_eigenvalues(KERNEL, UNIFORM, 512, 20)
        assert s.decay_diagnostic(vals, 3, 20) <= -2.5 + 0.2


def test_feature_embedding_round_trip(tmp_path):
    e = s.FeatureEmbedding(np.array([[0.1, -0.2], [0.3, 0.4]]), 2, 1.5, "simplified", {"rho": 3.0},
                           np.array([2, 5]))
    e.write(tmp_path / "emb.csv")
    assert (tmp_path / "emb.csv").read_text().splitlines()[0] == "index,z1,z2"
    f = s.FeatureEmbedding.read(tmp_path / "emb.csv")
    assert np.array_equal(f.rows, e.rows) and f.index.tolist() == [2, 5]
    assert f.rank == 2 and f.scale == 1.5 and f.meta == {"rho": 3.0}


def test_feature_embedding_rejects_nonfinite():
    with pytest.raises(NumericalError):
        s.FeatureEmbedding(np.array([[np.nan]]), 1, 1.0, "simplified")
