import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bayes_ood.exceptions import ConfigError, InvalidArgumentError
from bayes_ood.knn import LogitIndex
from bayes_ood.net import NetworkArch, PointWeights
from bayes_ood.scores import (ALL_METHODS, ModelArtifacts, ScoreMethod, deterministic_logits, knn_plus_score, knn_score,
                              max_logit_score, mutual_information, predictive_entropy, score_all,
                              score_dataset, softmax, softmax_entropy, write_scores_csv)

finite = st.floats(-30, 30, allow_nan=False)


class TestSoftmaxEntropy:
    def test_uniform_is_log_k(self):
        for k in (2, 3, 10):
            assert softmax_entropy(np.full(k, 0.7)) == pytest.approx(math.log(k), rel=1e-15)

    def test_known_value(self):
        # mpmath: entropy of softmax([1, 0, -1])
        assert softmax_entropy([1.0, 0.0, -1.0]) == pytest.approx(0.83239558183993887302, rel=1e-14)

    def test_one_hot_limit(self):
        assert softmax_entropy([1000.0, 0.0, 0.0]) == 0.0

    @given(arrays(np.float64, st.integers(2, 8), elements=finite), finite)
    def test_shift_invariant_and_bounded(self, z, c):
        h = softmax_entropy(z)
        assert 0.0 <= h <= math.log(z.size) + 1e-12
        assert softmax_entropy(z + c) == pytest.approx(h, abs=1e-9)

    def test_softmax_overflow_safe(self):
        p = softmax([1000.0, 1000.0])
        np.testing.assert_allclose(p, [0.5, 0.5])

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidArgumentError):
            softmax_entropy([np.inf, 0.0])


def test_max_logit_orientation():
    assert max_logit_score([1.0, 4.0, -2.0]) == -4.0
    np.testing.assert_array_equal(max_logit_score(np.array([[1.0, 2.0], [5.0, 0.0]])), [-2.0, -5.0])


class TestEnsembleScores:
    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(2, 6)), elements=finite))
    def test_mi_pe_log_k_chain(self, ens):
        pe, mi = predictive_entropy(ens), mutual_information(ens)
        assert 0.0 <= mi <= pe + 1e-12
        assert pe <= math.log(ens.shape[1]) + 1e-12

    def test_identical_samples_have_zero_mi(self):
        ens = np.tile([2.0, -1.0, 0.5], (30, 1))
        assert mutual_information(ens) == 0.0
        assert predictive_entropy(ens) == pytest.approx(softmax_entropy([2.0, -1.0, 0.5]), rel=1e-14)

    def test_disagreeing_confident_samples(self):
        ens = np.array([[50.0, 0.0], [0.0, 50.0]])
        assert predictive_entropy(ens) == pytest.approx(math.log(2), rel=1e-12)
        assert mutual_information(ens) == pytest.approx(math.log(2), rel=1e-12)

    def test_batched_matches_single(self):
        ens = np.random.default_rng(0).normal(size=(4, 9, 3))
        np.testing.assert_allclose(mutual_information(ens), [mutual_information(e) for e in ens], rtol=1e-14)
        np.testing.assert_allclose(predictive_entropy(ens), [predictive_entropy(e) for e in ens], rtol=1e-14)


def _brute_knn_plus(vectors, labels, q, k, num_classes):
    d = np.sqrt(((vectors - q) ** 2).sum(axis=1))
    d_knn = np.sort(d)[k - 1]
    per_class = [np.sort(d[labels == c])[k - 1] for c in range(num_classes)]
    best = min(range(num_classes), key=lambda c: (per_class[c], c))
    rest = [per_class[c] for c in range(num_classes) if c != best]
    return d_knn + per_class[best] - sum(rest) / len(rest)


class TestKnnPlus:
    def test_symmetric_classes_reduce_to_knn(self):
        # four classes placed symmetrically around the origin, same layout in each
        pts, labels = [], []
        for c, (dx, dy) in enumerate([(1, 0), (0, 1), (-1, 0), (0, -1)]):
            for r in (1.0, 2.0, 3.5):
                pts.append((r * dx, r * dy))
                labels.append(c)
        idx = LogitIndex(pts, labels)
        for k in (1, 2, 3):
            assert knn_plus_score(idx, [0.0, 0.0], k) == pytest.approx(knn_score(idx, [0.0, 0.0], k), abs=1e-12)

    def test_three_class_enumeration(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(9, 40))
            vecs = rng.normal(size=(n, 3))
            labels = np.concatenate([np.arange(3).repeat(3), rng.integers(0, 3, n - 9)])
            idx = LogitIndex(vecs, labels, 3)
            q = rng.normal(size=3)
            k = int(rng.integers(1, 4))
            assert knn_plus_score(idx, q, k) == pytest.approx(_brute_knn_plus(vecs, labels, q, k, 3), abs=1e-12)

    def test_tie_picks_lowest_class(self):
        idx = LogitIndex([[1.0, 0.0], [-1.0, 0.0], [0.0, 3.0]], [1, 0, 2])
        # classes 0 and 1 tie at distance 1; the score is the same either way but must be finite
        assert knn_plus_score(idx, [0.0, 0.0], 1) == pytest.approx(1.0 + 1.0 - (1.0 + 3.0) / 2)

    def test_needs_two_classes(self):
        with pytest.raises(InvalidArgumentError):
            knn_plus_score(LogitIndex([[0.0], [1.0]], [0, 0]), [0.0], 1)


def test_parse_is_case_insensitive():
    assert ScoreMethod.parse("knnplus_ELV") is ScoreMethod.KNNPLUS_ELV
    with pytest.raises(ConfigError):
        ScoreMethod.parse("energy")
    assert len(ALL_METHODS) == 9
    assert sum(m.bayesian for m in ALL_METHODS) == 5


@pytest.fixture
def artifacts():
    arch = NetworkArch(2, (4,), 3)
    rng = np.random.default_rng(0)
    w = PointWeights(rng.normal(size=arch.num_weights), arch)
    train_x = rng.normal(size=(30, 2))
    det = deterministic_logits(w, train_x)
    index = LogitIndex(det, np.arange(30) % 3, 3)
    return ModelArtifacts(point_weights=w, weight_samples=[w], det_index=index, elv_index=index, k=3)


def test_single_draw_bayesian_scores_match_deterministic(artifacts):
    x = np.random.default_rng(1).normal(size=(8, 2))
    s = score_all(ALL_METHODS, artifacts, x)
    np.testing.assert_allclose(s[ScoreMethod.ML_ELV], s[ScoreMethod.ML_DET], rtol=1e-14)
    np.testing.assert_allclose(s[ScoreMethod.KNN_ELV], s[ScoreMethod.KNN_DET], rtol=1e-14)
    np.testing.assert_allclose(s[ScoreMethod.KNNPLUS_ELV], s[ScoreMethod.KNNPLUS_DET], rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(s[ScoreMethod.PE], s[ScoreMethod.SE], rtol=1e-12)
    np.testing.assert_allclose(s[ScoreMethod.MI], 0.0, atol=1e-12)
    for v in s.values():
        assert v.shape == (8,)


def test_missing_artifacts_raise_config_error(artifacts):
    x = np.zeros((1, 2))
    with pytest.raises(ConfigError):
        score_dataset("PE", ModelArtifacts(point_weights=artifacts.point_weights), x)
    with pytest.raises(ConfigError):
        score_dataset("SE", ModelArtifacts(weight_samples=artifacts.weight_samples), x)
    with pytest.raises(ConfigError):
        score_dataset("KNN_elv", ModelArtifacts(weight_samples=artifacts.weight_samples), x)
    with pytest.raises(ConfigError):
        ModelArtifacts(k=0)


def test_scores_csv(tmp_path, artifacts):
    x = np.zeros((2, 2))
    s = score_all(["SE", "ML_det"], artifacts, x)
    write_scores_csv(tmp_path / "s.csv", s, [False, True], input_ids=["id:0", "ood:0"])
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "input_id,method,score,is_ood_label"
    assert len(lines) == 5
    assert lines[2].startswith("ood:0,SE,") and lines[2].endswith(",1")
