"""Loss value and gradient contracts, checked against finite differences."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scns.losses import (centered_alignment, check_gradient, cross_entropy, draw_mixup,
                         infonce, kd_combined, kld, mixup, mixup_kld,
                         pearson_correlation, pearson_triplet_loss, triplet_cka_loss)


def _rand_orthogonal(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


class TestCrossEntropy:
    def test_uniform_logits(self):
        for p in (2, 5, 11):
            ev = cross_entropy(np.zeros(p), 0, tau=1.0)
            assert ev.value == pytest.approx(math.log(p), abs=1e-12)

    def test_gradient_sums_to_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            ev = cross_entropy(rng.standard_normal(6), 3, tau=0.5)
            assert abs(ev.grads["logits"].sum()) < 1e-12

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        logits = rng.standard_normal(5)
        rep = check_gradient(lambda d: cross_entropy(d["logits"], 2, tau=0.7),
                             {"logits": logits}, tolerance=1e-6)
        assert rep.passed

    def test_target_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            cross_entropy([0.0, 1.0], 2, tau=1.0)


class TestKld:
    def test_identical_logits_zero(self):
        rng = np.random.default_rng(2)
        z = rng.standard_normal(7)
        assert abs(kld(z, z, tau=3.0).value) < 1e-12

    def test_half_half_vs_quarter_three_quarters(self):
        """Logit pairs chosen so the softened distributions are the example ones."""
        ev = kld(np.array([0.0, 0.0]), np.array([0.0, math.log(3.0)]), tau=1.0)
        expected = 0.5 * math.log(0.5 / 0.25) + 0.5 * math.log(0.5 / 0.75)
        assert ev.value == pytest.approx(expected, abs=1e-12)
        assert ev.value == pytest.approx(0.143841, abs=1e-6)

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(10_000):
            assert kld(rng.standard_normal(4), rng.standard_normal(4),
                       tau=1.0).value >= -1e-15

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        t = rng.standard_normal(6)
        rep = check_gradient(lambda d: kld(t, d["student_logits"], tau=2.5),
                             {"student_logits": rng.standard_normal(6)}, tolerance=1e-6)
        assert rep.passed


class TestKdCombined:
    def test_alpha_zero_is_cross_entropy(self):
        rng = np.random.default_rng(5)
        s, t = rng.standard_normal(5), rng.standard_normal(5)
        combined = kd_combined(s, t, target=1, alpha=0.0, tau=4.0)
        ce = cross_entropy(s, 1, tau=1.0)
        assert combined.value == ce.value
        np.testing.assert_array_equal(combined.grads["student_logits"],
                                      ce.grads["logits"])

    def test_alpha_one_identical_logits_zero(self):
        z = np.array([0.3, -0.2, 1.1])
        assert abs(kd_combined(z, z, target=0, alpha=1.0, tau=4.0).value) < 1e-12

    def test_paper_setting_matches_composition(self):
        """alpha = 0.9, tau = 4 against a hand-composed oracle."""
        rng = np.random.default_rng(6)
        s, t = rng.standard_normal(6), rng.standard_normal(6)
        got = kd_combined(s, t, target=2, alpha=0.9, tau=4.0)
        want = 0.1 * cross_entropy(s, 2, tau=1.0).value + 0.9 * 16.0 * kld(t, s, tau=4.0).value
        assert got.value == pytest.approx(want, abs=1e-12)

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError, match="alpha"):
            kd_combined([0.0, 1.0], [0.0, 1.0], 0, alpha=1.5, tau=1.0)


class TestInfonce:
    def test_symmetric_single_negative(self):
        ev = infonce([1.0, 0.0], [0.0, 1.0], [[0.0, -1.0]])
        assert ev.value == pytest.approx(math.log(2.0), abs=1e-12)

    def test_symmetric_many_negatives(self):
        z = np.array([1.0, 0.0, 0.0])
        plus = np.array([0.0, 1.0, 0.0])
        for m in (1, 3, 9):
            negs = np.tile([0.0, 0.0, 1.0], (m, 1))
            assert infonce(z, plus, negs).value == pytest.approx(math.log(m + 1), abs=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        inputs = {"z_star": rng.standard_normal(4), "z_plus": rng.standard_normal(4),
                  "negatives": rng.standard_normal((3, 4))}
        rep = check_gradient(lambda d: infonce(d["z_star"], d["z_plus"], d["negatives"]),
                             inputs, tolerance=1e-6)
        assert rep.passed

    def test_decreases_as_positive_score_grows(self):
        rng = np.random.default_rng(8)
        z = rng.standard_normal(5)
        negs = rng.standard_normal((4, 5))
        base = rng.standard_normal(5)
        values = [infonce(z, base + c * z, negs).value for c in np.linspace(0, 2, 9)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_nonnegative(self):
        rng = np.random.default_rng(9)
        for _ in range(10_000):
            v = infonce(rng.standard_normal(3), rng.standard_normal(3),
                        rng.standard_normal((2, 3))).value
            assert v >= -1e-15

    def test_empty_negatives_rejected(self):
        with pytest.raises(ValueError, match="negative"):
            infonce([1.0], [1.0], np.empty((0, 1)))


class TestMixup:
    def test_nu_one_identity(self):
        z = np.array([2.0, -1.0])
        np.testing.assert_array_equal(mixup(z, np.array([5.0, 5.0]), 1.0), z)

    def test_halfway(self):
        np.testing.assert_allclose(mixup([1.0, 0.0], [0.0, 1.0], 0.5), [0.5, 0.5])

    def test_beta_half_sample_mean(self):
        rng = np.random.default_rng(10)
        draws = [draw_mixup(0.5, rng).nu for _ in range(100_000)]
        assert np.mean(draws) == pytest.approx(0.5, abs=0.01)

    @given(st.floats(0, 1), st.lists(st.floats(-10, 10), min_size=1, max_size=6))
    @settings(max_examples=200, deadline=None)
    def test_stays_in_segment(self, nu, vals):
        z = np.array(vals)
        out = mixup(z, -z, nu)
        assert np.all(out <= np.maximum(z, -z) + 1e-12)
        assert np.all(out >= np.minimum(z, -z) - 1e-12)

    def test_rejects_bad_nu_and_shapes(self):
        with pytest.raises(ValueError):
            mixup([1.0], [1.0], 1.5)
        with pytest.raises(ValueError):
            mixup([1.0], [1.0, 2.0], 0.5)


class TestMixupKld:
    def test_identical_mixed_logits_zero(self):
        z = np.array([0.4, -0.4, 0.1])
        assert abs(mixup_kld(z, z, tau=2.0).value) < 1e-12

    def test_nu_one_reduces_to_plain_kld(self):
        rng = np.random.default_rng(11)
        s_i, s_j = rng.standard_normal(5), rng.standard_normal(5)
        t_i, t_j = rng.standard_normal(5), rng.standard_normal(5)
        mixed = mixup_kld(mixup(s_i, s_j, 1.0), mixup(t_i, t_j, 1.0), tau=3.0)
        plain = kld(t_i, s_i, tau=3.0)
        assert mixed.value == pytest.approx(plain.value, abs=1e-12)

    def test_matches_composition_oracle(self):
        rng = np.random.default_rng(12)
        nu = float(rng.uniform())
        s = mixup(rng.standard_normal(4), rng.standard_normal(4), nu)
        t = mixup(rng.standard_normal(4), rng.standard_normal(4), nu)
        assert mixup_kld(s, t, tau=1.7).value == pytest.approx(kld(t, s, 1.7).value,
                                                               abs=1e-12)

    def test_class_count_mismatch(self):
        with pytest.raises(ValueError, match="class counts"):
            mixup_kld([0.0, 1.0], [0.0, 1.0, 2.0], tau=1.0)


class TestCenteredAlignment:
    def test_self_alignment_linear(self):
        rng = np.random.default_rng(13)
        z = rng.standard_normal((5, 3))
        assert centered_alignment(z, z, "linear") == pytest.approx(1.0, abs=1e-12)

    def test_positive_scale_invariance(self):
        rng = np.random.default_rng(14)
        z = rng.standard_normal((6, 4))
        assert centered_alignment(z, 3.7 * z, "linear") == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_invariance(self):
        rng = np.random.default_rng(15)
        z = rng.standard_normal((6, 4))
        r = _rand_orthogonal(4, rng)
        assert centered_alignment(z, z @ r, "linear") == pytest.approx(1.0, abs=1e-9)

    def test_rbf_self_alignment(self):
        rng = np.random.default_rng(16)
        z = rng.standard_normal((7, 3))
        assert centered_alignment(z, z, "rbf") == pytest.approx(1.0, abs=1e-12)

    def test_zero_gram_rejected(self):
        with pytest.raises(ValueError, match="zero norm"):
            centered_alignment(np.zeros((3, 2)), np.ones((3, 2)), "linear")

    def test_unknown_kernel(self):
        with pytest.raises(ValueError, match="kernel"):
            centered_alignment(np.ones((3, 2)), np.ones((3, 2)), "cubic")


class TestTripletCka:
    def test_inactive_hinge_zero_everywhere(self):
        rng = np.random.default_rng(17)
        mats = [rng.standard_normal((4, 3)) for _ in range(4)]
        ev = triplet_cka_loss(*mats, zeta=0.0, margin=0.0, kernel="linear")
        assert ev.value == 0.0
        for g in ev.grads.values():
            assert not g.any()

    @pytest.mark.parametrize("kernel", ["linear", "rbf"])
    def test_active_hinge_gradients(self, kernel):
        rng = np.random.default_rng(18)
        mats = {k: rng.standard_normal((4, 3))
                for k in ("zS_star", "zS_plus", "zS_minus")}
        t_star = rng.standard_normal((4, 3))
        ev = triplet_cka_loss(mats["zS_star"], mats["zS_plus"], mats["zS_minus"],
                              t_star, zeta=0.7, margin=1.5, kernel=kernel)
        assert ev.value > 0.0
        rep = check_gradient(
            lambda d: triplet_cka_loss(d["zS_star"], d["zS_plus"], d["zS_minus"],
                                       t_star, zeta=0.7, margin=1.5, kernel=kernel),
            mats, tolerance=1e-5)
        assert rep.passed, rep.per_input

    def test_parameter_validation(self):
        z = np.ones((3, 2))
        with pytest.raises(ValueError, match="zeta"):
            triplet_cka_loss(z, z, z, z, zeta=2.0, margin=0.0)
        with pytest.raises(ValueError, match="margin"):
            triplet_cka_loss(z, z, z, z, zeta=0.5, margin=-1.0)


class TestPearson:
    def test_self_correlation(self):
        rng = np.random.default_rng(19)
        z = rng.standard_normal(8)
        assert pearson_correlation(z, z) == pytest.approx(1.0, abs=1e-12)

    def test_affine_invariance(self):
        rng = np.random.default_rng(20)
        z = rng.standard_normal(8)
        assert pearson_correlation(z, 2.5 * z + 3.0) == pytest.approx(1.0, abs=1e-12)
        assert pearson_correlation(z, -0.5 * z + 1.0) == pytest.approx(-1.0, abs=1e-12)

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError, match="zero-variance"):
            pearson_correlation(np.ones(5), np.arange(5.0))

    def test_triplet_gradients(self):
        rng = np.random.default_rng(21)
        inputs = {"zS_minus": rng.standard_normal(6), "zS_plus": rng.standard_normal(6)}
        t_minus, t_plus = rng.standard_normal(6), rng.standard_normal(6)
        ev = pearson_triplet_loss(inputs["zS_minus"], inputs["zS_plus"], t_minus,
                                  t_plus, zeta=0.6, margin=2.0)
        assert ev.value > 0.0
        rep = check_gradient(
            lambda d: pearson_triplet_loss(d["zS_minus"], d["zS_plus"], t_minus,
                                           t_plus, zeta=0.6, margin=2.0),
            inputs, tolerance=1e-5)
        assert rep.passed

    def test_hinge_nonnegative(self):
        rng = np.random.default_rng(22)
        for _ in range(2000):
            v = pearson_triplet_loss(rng.standard_normal(4), rng.standard_normal(4),
                                     rng.standard_normal(4), rng.standard_normal(4),
                                     zeta=0.3, margin=0.5).value
            assert v >= 0.0


class TestCheckGradient:
    def test_linear_loss_is_exact(self):
        c = np.array([0.5, -1.5, 2.0])

        def linear(d):
            from scns.losses import LossEvaluation
            return LossEvaluation(value=float(c @ d["z"]), grads={"z": c.copy()})

        rep = check_gradient(linear, {"z": np.array([0.1, 0.2, 0.3])})
        assert rep.max_rel_error < 1e-10

    def test_corrupted_gradient_fails(self):
        def corrupted(d):
            ev = cross_entropy(d["logits"], 1, tau=1.0)
            bad = ev.grads["logits"].copy()
            bad[0] += 0.5
            from scns.losses import LossEvaluation
            return LossEvaluation(value=ev.value, grads={"logits": bad})

        rep = check_gradient(corrupted, {"logits": np.array([0.2, -0.1, 0.4])},
                             tolerance=1e-6)
        assert not rep.passed

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError, match="step"):
            check_gradient(lambda d: cross_entropy(d["x"], 0), {"x": np.zeros(2)},
                           step=0.0)
