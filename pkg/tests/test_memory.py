"""Contrast memory: table/queue probabilities, gradients, momentum updates."""

import math

import mpmath
import numpy as np
import pytest

from scns.losses import check_gradient
from scns.memory import ContrastMemory, init_memory, memory_to_csv, nce_value_and_grad


def _unit(v):
    return v / np.linalg.norm(v)


def _symmetric_memory(n_value, n_queue_filled, dim=6, tau=0.07, dot=0.3, seed=0):
    """All stored vectors share the same dot product with e1."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_value + n_queue_filled):
        u = rng.standard_normal(dim - 1)
        u /= np.linalg.norm(u)
        rows.append(np.concatenate(([dot], math.sqrt(1 - dot * dot) * u)))
    mem = ContrastMemory(np.array(rows[:n_value]), n_queue=max(n_queue_filled, 1),
                         gamma=0.5, tau=tau)
    for r in rows[n_value:]:
        mem.enqueue(r)
    return mem


class TestInitMemory:
    def test_rows_unit_norm(self):
        mem = init_memory(50, 8, 7, gamma=0.5, tau=0.1, rng=np.random.default_rng(1))
        np.testing.assert_allclose(np.linalg.norm(mem.V, axis=1), 1.0, atol=1e-9)

    def test_same_seed_identical(self):
        a = init_memory(10, 4, 5, 0.5, 0.1, np.random.default_rng(7))
        b = init_memory(10, 4, 5, 0.5, 0.1, np.random.default_rng(7))
        np.testing.assert_array_equal(a.V, b.V)

    def test_sphere_uniformity(self):
        mem = init_memory(10_000, 1, 3, 0.5, 0.1, np.random.default_rng(2))
        assert np.abs(mem.V.mean(axis=0)).max() < 0.05

    def test_parameter_validation(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            init_memory(0, 1, 3, 0.5, 0.1, rng)
        with pytest.raises(ValueError, match="gamma"):
            init_memory(2, 1, 3, 1.5, 0.1, rng)
        with pytest.raises(ValueError, match="tau"):
            init_memory(2, 1, 3, 0.5, 0.0, rng)


class TestProbabilities:
    def test_symmetric_case_full_queue(self):
        mem = _symmetric_memory(n_value=3, n_queue_filled=2)
        z = np.zeros(6)
        z[0] = 1.0
        assert mem.positive_prob(z, 1) == pytest.approx(1 / 5, abs=1e-9)
        assert mem.negative_prob(z, 0) == pytest.approx(1 / 5, abs=1e-9)

    def test_symmetric_case_empty_queue(self):
        mem = _symmetric_memory(n_value=4, n_queue_filled=0)
        z = np.zeros(6)
        z[0] = 1.0
        assert mem.positive_prob(z, 2) == pytest.approx(1 / 4, abs=1e-9)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(3)
        for trial in range(20):
            mem = init_memory(5, 3, 4, 0.5, 0.07, rng)
            for _ in range(3):
                mem.enqueue(_unit(rng.standard_normal(4)))
            z = _unit(rng.standard_normal(4))
            total = sum(mem.positive_prob(z, i) for i in range(5)) \
                + sum(mem.negative_prob(z, n) for n in range(3))
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_matches_extended_precision_oracle(self):
        rng = np.random.default_rng(4)
        mem = init_memory(3, 2, 5, 0.5, 0.07, rng)
        for _ in range(2):
            mem.enqueue(_unit(rng.standard_normal(5)))
        z = _unit(rng.standard_normal(5))
        with mpmath.workdps(50):
            stacked = np.concatenate((mem.V, mem.queue_array()))
            exps = [mpmath.e ** (mpmath.mpf(float(row @ z)) / mpmath.mpf(0.07))
                    for row in stacked]
            total = mpmath.fsum(exps)
            expected = [float(e / total) for e in exps]
        for i in range(3):
            assert mem.positive_prob(z, i) == pytest.approx(expected[i], abs=1e-12)
        for n in range(2):
            assert mem.negative_prob(z, n) == pytest.approx(expected[3 + n], abs=1e-12)

    def test_temperature_monotonicity(self):
        """Lower tau raises p_i when row i has the unique best dot product."""
        rng = np.random.default_rng(5)
        v = np.array([_unit([1.0, 0.1, 0.0]), _unit([0.2, 1.0, 0.0]),
                      _unit([-0.3, 0.2, 1.0])])
        z = _unit(np.array([1.0, 0.05, 0.0]))
        probs = []
        for tau in (1.0, 0.5, 0.2, 0.07):
            mem = ContrastMemory(v, n_queue=2, gamma=0.5, tau=tau)
            mem.enqueue(_unit(rng.standard_normal(3)))
            probs.append(mem.positive_prob(z, 0))
        assert all(a < b for a, b in zip(probs, probs[1:]))

    def test_non_unit_query_rejected(self):
        mem = _symmetric_memory(2, 1)
        with pytest.raises(ValueError, match="unit"):
            mem.positive_prob(np.full(6, 0.9), 0)

    def test_slot_bounds(self):
        mem = _symmetric_memory(2, 1)
        z = np.zeros(6)
        z[0] = 1.0
        with pytest.raises(ValueError, match="slot"):
            mem.negative_prob(z, 1)
        with pytest.raises(ValueError, match="row"):
            mem.positive_prob(z, 2)


class TestNceLossAndGrad:
    def test_symmetric_loss_is_log_k(self):
        mem = _symmetric_memory(n_value=3, n_queue_filled=2)
        z = np.zeros(6)
        z[0] = 1.0
        ev = mem.nce_loss_and_grad(z, 0)
        assert ev.value == pytest.approx(math.log(5), abs=1e-9)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        mem = init_memory(4, 3, 5, 0.5, 0.07, rng)
        for _ in range(2):
            mem.enqueue(_unit(rng.standard_normal(5)))
        queue = mem.queue_array()
        rep = check_gradient(
            lambda d: nce_value_and_grad(mem.V, queue, d["z"], 1, mem.tau),
            {"z": _unit(rng.standard_normal(5))}, tolerance=1e-6)
        assert rep.passed

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(7)
        mem = init_memory(4, 2, 4, 0.5, 0.1, rng)
        for _ in range(2):
            mem.enqueue(_unit(rng.standard_normal(4)))
        z = _unit(rng.standard_normal(4))
        q, r = np.linalg.qr(rng.standard_normal((4, 4)))
        q = q * np.sign(np.diag(r))
        g = mem.nce_loss_and_grad(z, 2).grads["z"]
        rot = ContrastMemory(mem.V @ q.T, n_queue=2, gamma=0.5, tau=0.1)
        for row in mem.queue_array():
            rot.enqueue(row @ q.T)
        g_rot = rot.nce_loss_and_grad(q @ z, 2).grads["z"]
        np.testing.assert_allclose(g_rot, q @ g, atol=1e-9)

    def test_matches_negated_log_prob(self):
        mem = _symmetric_memory(3, 2, dot=0.45, seed=9)
        z = np.zeros(6)
        z[0] = 1.0
        ev = mem.nce_loss_and_grad(z, 1)
        assert ev.value == pytest.approx(-math.log(mem.positive_prob(z, 1)), abs=1e-12)


class TestMomentumUpdate:
    def test_gamma_zero_replaces(self):
        mem = _symmetric_memory(2, 0)
        mem.gamma = 0.0
        z = _unit(np.arange(1.0, 7.0))
        mem.momentum_update(0, z)
        np.testing.assert_allclose(mem.V[0], z, atol=1e-12)

    def test_gamma_one_keeps(self):
        mem = _symmetric_memory(2, 0)
        mem.gamma = 1.0
        before = mem.V[1].copy()
        mem.momentum_update(1, _unit(np.arange(1.0, 7.0)))
        np.testing.assert_array_equal(mem.V[1], before)

    def test_halfway_renormalized(self):
        v = np.array([[1.0, 0.0], [0.0, 1.0]])
        mem = ContrastMemory(v, n_queue=1, gamma=0.5, tau=0.1)
        mem.momentum_update(0, np.array([0.0, 1.0]))
        np.testing.assert_allclose(mem.V[0], [math.sqrt(0.5), math.sqrt(0.5)],
                                   atol=1e-4)
        assert np.linalg.norm(mem.V[0]) == pytest.approx(1.0, abs=1e-12)

    def test_antipodal_update_rejected(self):
        v = np.array([[1.0, 0.0], [0.0, 1.0]])
        mem = ContrastMemory(v, n_queue=1, gamma=0.5, tau=0.1)
        with pytest.raises(ValueError, match="antipodal"):
            mem.momentum_update(0, np.array([-1.0, 0.0]))

    def test_update_locality(self):
        rng = np.random.default_rng(8)
        mem = init_memory(6, 2, 4, 0.5, 0.1, rng)
        before = mem.V.copy()
        mem.momentum_update(3, _unit(rng.standard_normal(4)))
        changed = np.flatnonzero(np.abs(mem.V - before).sum(axis=1) > 0)
        np.testing.assert_array_equal(changed, [3])


class TestQueue:
    def test_fifo_eviction(self):
        mem = ContrastMemory(np.eye(3), n_queue=2, gamma=0.5, tau=0.1)
        a, b, c = np.eye(3)
        mem.enqueue(a)
        mem.enqueue(b)
        mem.enqueue(c)
        np.testing.assert_array_equal(mem.queue_array(), np.array([b, c]))

    def test_length_never_exceeds_capacity(self):
        rng = np.random.default_rng(9)
        mem = ContrastMemory(np.eye(4), n_queue=5, gamma=0.5, tau=0.1)
        for _ in range(10_000):
            mem.enqueue(_unit(rng.standard_normal(4)))
            assert mem.queue_size <= 5

    def test_model_based_against_list_oracle(self):
        rng = np.random.default_rng(10)
        mem = ContrastMemory(np.eye(4), n_queue=3, gamma=0.5, tau=0.1)
        oracle = []
        for step in range(500):
            v = _unit(rng.standard_normal(4))
            mem.enqueue(v)
            oracle.append(v)
            oracle = oracle[-3:]
            if step % 7 == 0:
                np.testing.assert_array_equal(mem.queue_array(), np.array(oracle))
                z = _unit(rng.standard_normal(4))
                got = [mem.negative_prob(z, n) for n in range(len(oracle))]
                stacked = np.concatenate((mem.V, np.array(oracle)))
                logits = stacked @ z / mem.tau
                ref = np.exp(logits - logits.max())
                ref /= ref.sum()
                np.testing.assert_allclose(got, ref[4:], atol=1e-12)


class TestCheckpoint:
    def test_csv_dump_layout(self, tmp_path):
        mem = _symmetric_memory(2, 2, dim=3)
        path = tmp_path / "mem.csv"
        memory_to_csv(mem, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "kind,slot,f0,f1,f2"
        kinds = [ln.split(",")[0] for ln in lines[1:]]
        assert kinds == ["V", "V", "Q", "Q"]
