import numpy as np
import pytest
from scipy.special import softmax

from bayes_ood.exceptions import InvalidArgumentError
from bayes_ood.net import NetworkArch, PointWeights, VariationalPosterior, forward_logits, init_posterior
from bayes_ood.sampler import (SamplerConfig, draw_weight_samples, expected_logit_vector,
                               iter_ensembles, logit_ensemble, posterior_predictive,
                               read_ensemble_csv, write_ensemble_csv)


@pytest.fixture
def posterior():
    arch = NetworkArch(3, (5,), 3)
    q = init_posterior(arch, 1)
    # widen sigma so samples actually differ
    return VariationalPosterior(q.mu, np.full(arch.num_weights, -1.0), arch)


def test_draws_are_deterministic(posterior):
    a = draw_weight_samples(posterior, SamplerConfig(20, seed=3))
    b = draw_weight_samples(posterior, SamplerConfig(20, seed=3))
    c = draw_weight_samples(posterior, SamplerConfig(20, seed=4))
    assert len(a) == 20
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))
    assert not np.array_equal(a[0].values, c[0].values)


def test_draw_statistics(posterior):
    samples = np.stack([w.values for w in draw_weight_samples(posterior, SamplerConfig(4000, seed=0))])
    se = posterior.sigma / np.sqrt(4000)
    assert np.all(np.abs(samples.mean(axis=0) - posterior.mu) < 5 * se)
    np.testing.assert_allclose(samples.std(axis=0), posterior.sigma, rtol=0.08)


def test_ensemble_matches_per_sample_forward(posterior):
    samples = draw_weight_samples(posterior, SamplerConfig(7, seed=0))
    x = np.random.default_rng(0).normal(size=(4, 3))
    ens = logit_ensemble(samples, x)
    assert ens.shape == (4, 7, 3)
    for i in range(4):
        for m in range(7):
            np.testing.assert_allclose(ens[i, m], forward_logits(samples[m], x[i]), rtol=1e-12)
    np.testing.assert_allclose(logit_ensemble(samples, x[1]), ens[1], rtol=1e-12, atol=1e-15)


def test_iter_ensembles_concatenates_to_full(posterior):
    samples = draw_weight_samples(posterior, SamplerConfig(5, seed=0))
    x = np.random.default_rng(1).normal(size=(11, 3))
    blocks = list(iter_ensembles(samples, x, block=4))
    assert [b.shape[0] for b in blocks] == [4, 4, 3]
    np.testing.assert_array_equal(np.concatenate(blocks), logit_ensemble(samples, x))


def test_single_sample_elv_equals_deterministic():
    arch = NetworkArch(2, (3,), 2)
    w = PointWeights(np.random.default_rng(0).normal(size=arch.num_weights), arch)
    x = np.array([0.4, -0.3])
    ens = logit_ensemble([w], x)
    np.testing.assert_array_equal(expected_logit_vector(ens), forward_logits(w, x))


def test_expected_logit_vector_is_column_mean():
    ens = np.array([[1.0, 2.0, 3.0], [3.0, 0.0, -1.0]])
    np.testing.assert_allclose(expected_logit_vector(ens), [2.0, 1.0, 1.0])


def test_posterior_predictive_is_mean_softmax():
    ens = np.random.default_rng(0).normal(0, 3, size=(50, 4))
    p = posterior_predictive(ens)
    np.testing.assert_allclose(p, softmax(ens, axis=1).mean(axis=0), rtol=1e-14)
    assert p.sum() == pytest.approx(1.0, abs=1e-15)


def test_ensemble_validation(posterior):
    samples = draw_weight_samples(posterior, SamplerConfig(2))
    with pytest.raises(InvalidArgumentError):
        logit_ensemble(samples, np.zeros(4))
    with pytest.raises(InvalidArgumentError):
        logit_ensemble([], np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        expected_logit_vector(np.array([[np.nan, 0.0]]))
    with pytest.raises(InvalidArgumentError):
        SamplerConfig(0)


def test_ensemble_csv_roundtrip(tmp_path):
    ens = np.random.default_rng(0).normal(size=(3, 4, 2))
    write_ensemble_csv(tmp_path / "e.csv", ens, input_ids=[10, 11, 12])
    ids, back = read_ensemble_csv(tmp_path / "e.csv")
    assert ids == [10, 11, 12]
    np.testing.assert_array_equal(back, ens)
