import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayes_ood.exceptions import InvalidArgumentError
from bayes_ood.net import (NetworkArch, PointWeights, VariationalPosterior, backward_batch,
                           forward_batch, forward_logits, init_posterior, init_std, inverse_softplus,
                           load_posterior, load_weights, load_weights_csv, save_posterior,
                           save_weights, save_weights_csv, sample_weights, sigma_from_rho)


class TestSigmaFromRho:
    def test_zero_is_log2(self):
        assert sigma_from_rho([0.0])[0] == pytest.approx(math.log(2.0), rel=1e-15)

    def test_large_rho_asymptote(self):
        assert sigma_from_rho([40.0])[0] == pytest.approx(40.0, rel=1e-12)

    def test_negative_five(self):
        # mpmath, 40 digits: log(1 + e^-5)
        assert sigma_from_rho([-5.0])[0] == pytest.approx(0.006715348489118068616, rel=1e-14)

    def test_extreme_values_stay_positive_and_finite(self):
        s = sigma_from_rho([-800.0, -40.0, 800.0])
        assert np.all(s > 0) and np.all(np.isfinite(s))

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidArgumentError):
            sigma_from_rho([0.0, np.nan])
        with pytest.raises(InvalidArgumentError):
            sigma_from_rho([np.inf])

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=50))
    def test_monotone_and_positive(self, xs):
        xs = np.sort(np.array(xs))
        s = sigma_from_rho(xs)
        assert np.all(s > 0)
        assert np.all(np.diff(s) >= 0)

    def test_inverse_roundtrip(self):
        y = np.array([1e-6, 0.02, 0.7, 5.0, 30.0])
        np.testing.assert_allclose(sigma_from_rho(inverse_softplus(y)), y, rtol=1e-10)


class TestArch:
    def test_weight_count(self):
        arch = NetworkArch(3, (5, 4), 2)
        assert arch.num_weights == (3 + 1) * 5 + (5 + 1) * 4 + (4 + 1) * 2

    @pytest.mark.parametrize("kwargs", [
        dict(input_dim=2, hidden_dims=(), num_classes=1),
        dict(input_dim=0, hidden_dims=(), num_classes=2),
        dict(input_dim=2, hidden_dims=(0,), num_classes=2),
        dict(input_dim=2, hidden_dims=(), num_classes=2, beta=0.0),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            NetworkArch(**kwargs)

    def test_flatten_roundtrip(self):
        arch = NetworkArch(3, (4,), 2)
        v = np.arange(arch.num_weights, dtype=float)
        np.testing.assert_array_equal(arch.flatten(arch.unflatten(v)), v)


class TestInitPosterior:
    def test_seeded_determinism(self):
        arch = NetworkArch(4, (8,), 3)
        a, b = init_posterior(arch, 11), init_posterior(arch, 11)
        assert np.array_equal(a.mu, b.mu) and np.array_equal(a.rho, b.rho)
        assert not np.array_equal(a.mu, init_posterior(arch, 12).mu)

    def test_statistics(self):
        arch = NetworkArch(99, (100,), 2)  # 10202 weights
        assert arch.num_weights >= 10_000
        q = init_posterior(arch, 3)
        se = init_std() / math.sqrt(arch.num_weights)
        assert abs(q.mu.mean()) < 5 * se
        assert abs(q.rho.mean() + 5.0) < 5 * se
        assert np.std(q.mu) == pytest.approx(0.1, rel=0.05)

    def test_std_reading_switch(self):
        assert init_std(0.01, True) == pytest.approx(0.1)
        assert init_std(0.01, False) == pytest.approx(0.01)


class TestSampleWeights:
    def setup_method(self):
        self.arch = NetworkArch(2, (3,), 2)
        self.q = init_posterior(self.arch, 0)

    def test_zero_noise_is_mean(self):
        w = sample_weights(self.q, np.zeros(self.arch.num_weights))
        assert np.array_equal(w.values, self.q.mu)

    def test_antithetic_symmetry(self):
        eps = np.random.default_rng(1).standard_normal(self.arch.num_weights)
        a = sample_weights(self.q, eps).values
        b = sample_weights(self.q, -eps).values
        np.testing.assert_allclose((a + b) / 2, self.q.mu, atol=1e-15)

    def test_single_weight_value(self):
        arch = NetworkArch(1, (), 2)
        q = VariationalPosterior(np.ones(arch.num_weights), np.zeros(arch.num_weights), arch)
        w = sample_weights(q, np.full(arch.num_weights, 2.0))
        np.testing.assert_allclose(w.values, 2.386294361119890618834, rtol=1e-15)

    def test_linearity_in_noise(self):
        rng = np.random.default_rng(2)
        e1, e2 = rng.standard_normal((2, self.arch.num_weights))
        w0 = sample_weights(self.q, np.zeros_like(e1)).values
        lhs = sample_weights(self.q, e1 + e2).values - w0
        rhs = (sample_weights(self.q, e1).values - w0) + (sample_weights(self.q, e2).values - w0)
        np.testing.assert_allclose(lhs, rhs, atol=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            sample_weights(self.q, np.zeros(3))


def _hand_forward(w1, b1, w2, b2, x, beta=1.0):
    hidden = []
    for j in range(len(b1)):
        a = b1[j] + sum(w1[j][i] * x[i] for i in range(len(x)))
        hidden.append(math.log(1.0 + math.exp(beta * a)) / beta)
    return [b2[k] + sum(w2[k][j] * hidden[j] for j in range(len(hidden))) for k in range(len(b2))]


class TestForward:
    def test_zero_weights_give_zero_logits(self):
        for hidden in [(), (4,), (5, 3)]:
            arch = NetworkArch(3, hidden, 4)
            out = forward_logits(PointWeights(np.zeros(arch.num_weights), arch), [1.0, -2.0, 3.0])
            assert np.array_equal(out, np.zeros(4))

    def test_affine_without_hidden_layers(self):
        arch = NetworkArch(2, (), 2)
        w = np.eye(2)
        b = np.array([0.5, -1.0])
        pw = PointWeights(arch.flatten([(w, b)]), arch)
        np.testing.assert_allclose(forward_logits(pw, [3.0, 4.0]), [3.5, 3.0])

    def test_hand_evaluated_2_3_2(self):
        arch = NetworkArch(2, (3,), 2)
        w1 = [[0.1, -0.2], [0.3, 0.05], [-0.4, 0.25]]
        b1 = [0.01, -0.02, 0.03]
        w2 = [[0.2, -0.1, 0.4], [-0.3, 0.15, 0.05]]
        b2 = [0.1, -0.1]
        pw = PointWeights(arch.flatten([(np.array(w1), np.array(b1)), (np.array(w2), np.array(b2))]), arch)
        x = [0.7, -1.3]
        np.testing.assert_allclose(forward_logits(pw, x), _hand_forward(w1, b1, w2, b2, x), rtol=1e-14)

    def test_beta_sharpness(self):
        arch = NetworkArch(2, (3,), 2, beta=2.5)
        rng = np.random.default_rng(0)
        w1, b1 = rng.normal(size=(3, 2)), rng.normal(size=3)
        w2, b2 = rng.normal(size=(2, 3)), rng.normal(size=2)
        pw = PointWeights(arch.flatten([(w1, b1), (w2, b2)]), arch)
        x = [0.3, 0.9]
        expected = _hand_forward(w1.tolist(), b1.tolist(), w2.tolist(), b2.tolist(), x, beta=2.5)
        np.testing.assert_allclose(forward_logits(pw, x), expected, rtol=1e-13)

    def test_dimension_mismatch(self):
        arch = NetworkArch(2, (), 2)
        with pytest.raises(InvalidArgumentError):
            forward_logits(PointWeights(np.zeros(arch.num_weights), arch), [1.0, 2.0, 3.0])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        arch = NetworkArch(int(rng.integers(1, 4)), tuple(int(h) for h in rng.integers(1, 5, size=rng.integers(0, 3))),
                           int(rng.integers(2, 4)))
        w = rng.normal(0, 0.7, arch.num_weights)
        x = rng.normal(size=(4, arch.input_dim))
        proj = rng.normal(size=(4, arch.num_classes))
        out, cache = forward_batch(w, arch, x, keep=True)
        grad = backward_batch(w, arch, cache, proj)
        h = 1e-5
        fd = np.empty_like(w)
        for i in range(w.size):
            wp, wm = w.copy(), w.copy()
            wp[i] += h
            wm[i] -= h
            fd[i] = (np.sum(forward_batch(wp, arch, x) * proj) - np.sum(forward_batch(wm, arch, x) * proj)) / (2 * h)
        assert np.linalg.norm(grad - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-12)


class TestSerialization:
    def test_binary_roundtrip(self, tmp_path):
        v = np.random.default_rng(0).normal(size=37)
        save_weights(v, tmp_path / "w.bin")
        raw = (tmp_path / "w.bin").read_bytes()
        assert len(raw) == 16 + 8 * 37
        assert raw[:4] == b"BOW1"
        np.testing.assert_array_equal(load_weights(tmp_path / "w.bin"), v)

    def test_binary_is_little_endian_float64(self, tmp_path):
        save_weights([1.0], tmp_path / "w.bin")
        assert (tmp_path / "w.bin").read_bytes()[16:] == np.array([1.0], dtype="<f8").tobytes()

    def test_bad_magic_and_truncation(self, tmp_path):
        save_weights([1.0, 2.0], tmp_path / "w.bin")
        raw = (tmp_path / "w.bin").read_bytes()
        (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(InvalidArgumentError):
            load_weights(tmp_path / "bad.bin")
        (tmp_path / "short.bin").write_bytes(raw[:-3])
        with pytest.raises(InvalidArgumentError):
            load_weights(tmp_path / "short.bin")

    def test_csv_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        mu, rho = rng.normal(size=5), rng.normal(size=5)
        save_weights_csv({"mu": mu, "rho": rho}, tmp_path / "w.csv")
        back = load_weights_csv(tmp_path / "w.csv")
        np.testing.assert_array_equal(back["mu"], mu)
        np.testing.assert_array_equal(back["rho"], rho)

    def test_posterior_roundtrip(self, tmp_path):
        arch = NetworkArch(2, (3,), 2)
        q = init_posterior(arch, 5)
        save_posterior(q, tmp_path / "q.bin")
        back = load_posterior(tmp_path / "q.bin", arch)
        assert np.array_equal(back.mu, q.mu) and np.array_equal(back.rho, q.rho)


def test_containers_reject_bad_vectors():
    arch = NetworkArch(2, (), 2)
    with pytest.raises(InvalidArgumentError):
        PointWeights(np.zeros(arch.num_weights + 1), arch)
    with pytest.raises(InvalidArgumentError):
        PointWeights(np.full(arch.num_weights, np.nan), arch)
    with pytest.raises(InvalidArgumentError):
        VariationalPosterior(np.zeros(arch.num_weights), np.full(arch.num_weights, np.inf), arch)


def test_containers_are_immutable():
    arch = NetworkArch(2, (), 2)
    q = init_posterior(arch, 0)
    with pytest.raises(ValueError):
        q.mu[0] = 1.0
