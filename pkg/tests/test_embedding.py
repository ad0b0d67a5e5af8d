"""Vector/matrix primitive contracts: cosine, top-k tables, softmax."""

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scns.embedding import (TopKNeighborTable, cosine_similarity, l2_normalize_rows,
                            pairwise_similarity, temperature_softmax, topk_neighbors)


class TestCosineSimilarity:
    def test_identical_directions(self):
        assert cosine_similarity([1, 0], [1, 0]) == 1.0

    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_against_high_precision_oracle(self):
        """Value checked against 50-digit dot/norm arithmetic."""
        u, v = [1.0, 2.0, 3.0], [4.0, 5.0, 6.0]
        with mpmath.workdps(50):
            dot = mpmath.fsum(a * b for a, b in zip(u, v))
            expected = float(dot / (mpmath.norm(u) * mpmath.norm(v)))
        assert cosine_similarity(u, v) == pytest.approx(expected, abs=1e-12)
        assert cosine_similarity(u, v) == pytest.approx(0.974631846, abs=1e-9)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError, match="zero-norm"):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])

    def test_clamped_to_unit_interval(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            u = rng.standard_normal(3)
            assert -1.0 <= cosine_similarity(u, 2.0 * u) <= 1.0


class TestPairwiseSimilarity:
    def test_identity_directions(self):
        np.testing.assert_allclose(pairwise_similarity([[1, 0], [0, 1]]),
                                   np.eye(2), atol=1e-15)

    def test_symmetry_and_unit_diagonal(self):
        rng = np.random.default_rng(1)
        e = rng.standard_normal((7, 4))
        s = pairwise_similarity(e)
        np.testing.assert_allclose(s, s.T, atol=1e-12)
        np.testing.assert_allclose(np.diag(s), 1.0, atol=1e-12)

    def test_matches_per_pair_calls(self):
        rng = np.random.default_rng(2)
        e = rng.standard_normal((5, 6))
        e /= np.linalg.norm(e, axis=1)[:, None]
        s = pairwise_similarity(e)
        for i in range(5):
            for j in range(5):
                assert s[i, j] == pytest.approx(cosine_similarity(e[i], e[j]), abs=1e-12)

    def test_zero_row_names_index(self):
        e = np.ones((4, 3))
        e[2] = 0.0
        with pytest.raises(ValueError, match="row 2"):
            pairwise_similarity(e)

    def test_normalized_input_equals_gram(self):
        rng = np.random.default_rng(3)
        e = l2_normalize_rows(rng.standard_normal((6, 5)))
        np.testing.assert_allclose(pairwise_similarity(e), e @ e.T, atol=1e-12)


class TestTemperatureSoftmax:
    def test_constant_scores_uniform(self):
        np.testing.assert_allclose(temperature_softmax([4.2] * 3, 7.0),
                                   [1 / 3] * 3, atol=1e-15)

    def test_direct_arithmetic(self):
        np.testing.assert_allclose(temperature_softmax([np.log(2), 0.0], 1.0),
                                   [2 / 3, 1 / 3], atol=1e-15)

    def test_against_extended_precision_oracle(self):
        """sharpness = 5 checked against a 50-digit softmax."""
        scores = [0.9, 0.5, 0.1]
        with mpmath.workdps(50):
            es = [mpmath.e ** (5 * s) for s in scores]
            total = mpmath.fsum(es)
            expected = [float(e / total) for e in es]
        np.testing.assert_allclose(temperature_softmax(scores, 5.0), expected, atol=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            p = temperature_softmax(rng.standard_normal(8), rng.uniform(0.1, 20))
            assert abs(p.sum() - 1.0) < 1e-12

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8),
           st.floats(0.01, 30), st.floats(-100, 100))
    @settings(max_examples=200, deadline=None)
    def test_shift_invariance(self, scores, sharpness, shift):
        base = temperature_softmax(scores, sharpness)
        shifted = temperature_softmax([s + shift for s in scores], sharpness)
        np.testing.assert_allclose(base, shifted, atol=1e-12)

    def test_sharper_concentrates_mass(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            scores = rng.standard_normal(6)
            s1, s2 = sorted(rng.uniform(0.1, 10, size=2), reverse=True)
            assert temperature_softmax(scores, s1).max() >= \
                temperature_softmax(scores, s2).max() - 1e-12

    def test_rejects_empty_and_nonpositive(self):
        with pytest.raises(ValueError):
            temperature_softmax([], 1.0)
        with pytest.raises(ValueError):
            temperature_softmax([1.0], 0.0)


class TestL2NormalizeRows:
    def test_three_four_five(self):
        np.testing.assert_allclose(l2_normalize_rows([[3.0, 4.0]]), [[0.6, 0.8]],
                                   atol=1e-15)

    def test_idempotent_on_unit_rows(self):
        rng = np.random.default_rng(6)
        e = l2_normalize_rows(rng.standard_normal((5, 7)))
        np.testing.assert_allclose(l2_normalize_rows(e), e, atol=1e-12)

    def test_all_norms_unit(self):
        rng = np.random.default_rng(7)
        out = l2_normalize_rows(rng.standard_normal((4, 8)))
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)


class TestTopkNeighbors:
    def test_order_statistics_row(self):
        s = np.array([[1.0, 0.9, 0.2, 0.5],
                      [0.9, 1.0, 0.1, 0.4],
                      [0.2, 0.1, 1.0, 0.3],
                      [0.5, 0.4, 0.3, 1.0]])
        table = topk_neighbors(s, k=2, sharpness=1.0)
        np.testing.assert_array_equal(table.indices[0], [1, 3])
        np.testing.assert_allclose(table.scores[0], [0.9, 0.5])

    def test_full_k_is_softmax_over_everyone_else(self):
        rng = np.random.default_rng(8)
        s = pairwise_similarity(rng.standard_normal((5, 3)))
        table = topk_neighbors(s, k=4, sharpness=2.0)
        for i in range(5):
            others = np.delete(s[i], i)
            order = np.argsort(-others, kind="stable")
            np.testing.assert_allclose(np.sort(table.probs[i])[::-1],
                                       np.sort(temperature_softmax(others[order], 2.0))[::-1],
                                       atol=1e-12)

    def test_matches_bruteforce_sort_oracle(self):
        rng = np.random.default_rng(9)
        s = rng.standard_normal((6, 6))
        s = (s + s.T) / 2
        table = topk_neighbors(s, k=3, sharpness=1.5)
        for i in range(6):
            pairs = sorted(((s[i, j], -j) for j in range(6) if j != i), reverse=True)
            want = [-j for (_, j) in pairs[:3]]
            np.testing.assert_array_equal(table.indices[i], want)

    def test_ties_break_to_lowest_index(self):
        s = np.array([[1.0, 0.5, 0.5, 0.5],
                      [0.5, 1.0, 0.5, 0.5],
                      [0.5, 0.5, 1.0, 0.5],
                      [0.5, 0.5, 0.5, 1.0]])
        table = topk_neighbors(s, k=2, sharpness=1.0)
        np.testing.assert_array_equal(table.indices[0], [1, 2])
        np.testing.assert_array_equal(table.indices[3], [0, 1])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(10)
        e = rng.standard_normal((5, 4))
        perm = np.array([3, 0, 4, 1, 2])
        s = pairwise_similarity(e)
        s_perm = pairwise_similarity(e[perm])
        t = topk_neighbors(s, k=2, sharpness=3.0)
        tp = topk_neighbors(s_perm, k=2, sharpness=3.0)
        inv = np.empty(5, dtype=np.int64)
        inv[perm] = np.arange(5)
        for new_row, old_row in enumerate(perm):
            np.testing.assert_array_equal(np.sort(inv[t.indices[old_row]]),
                                          np.sort(tp.indices[new_row]))
            np.testing.assert_allclose(np.sort(t.probs[old_row]),
                                       np.sort(tp.probs[new_row]), atol=1e-12)

    def test_k_bounds(self):
        s = np.eye(3)
        with pytest.raises(ValueError, match="k must"):
            topk_neighbors(s, k=3, sharpness=1.0)
        with pytest.raises(ValueError, match="k must"):
            topk_neighbors(s, k=0, sharpness=1.0)

    def test_table_invariants_validated(self):
        idx = np.array([[1, 2], [0, 2], [0, 1]])
        good_scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.7, 0.3]])
        bad_scores = np.array([[0.1, 0.9], [0.8, 0.2], [0.7, 0.3]])
        probs = np.full((3, 2), 0.5)
        with pytest.raises(ValueError, match="non-increasing"):
            TopKNeighborTable(k=2, indices=idx, scores=bad_scores, probs=probs)
        with pytest.raises(ValueError, match="own entity"):
            TopKNeighborTable(k=2, indices=np.array([[0, 1], [0, 2], [0, 1]]),
                              scores=good_scores, probs=probs)
        with pytest.raises(ValueError, match="sum to 1"):
            TopKNeighborTable(k=2, indices=idx, scores=good_scores,
                              probs=np.full((3, 2), 0.4))
