"""scikit-learn compatible wrappers around the training, sampling and scoring functions."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y
from scipy.special import softmax

from .knn import LogitIndex
from .net import NetworkArch, forward_batch
from .priors import DiagonalGaussianPrior, ScaleMixturePrior
from .sampler import (SamplerConfig, draw_weight_samples, iter_ensembles, logit_ensemble,
                      posterior_predictive)
from .scores import ModelArtifacts, ScoreMethod, bayesian_summaries, score_all
from .trainer import LabeledDataset, TrainConfig, split_train_val, train_bnn, train_mle


class _MLPBase(ClassifierMixin, BaseEstimator):

    def _prepare(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        y_enc = np.searchsorted(self.classes_, y)
        self.n_features_in_ = X.shape[1]
        self.arch_ = NetworkArch(X.shape[1], tuple(self.hidden_dims), self.classes_.size, self.beta)
        data = LabeledDataset(X, y_enc, self.classes_.size)
        train, val = split_train_val(data, 1.0 - self.validation_fraction, self.random_state)
        self.history_ = []
        return train, val

    def _train_config(self):
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           epochs=self.epochs, seed=self.random_state, **self._extra_train_kwargs())

    def _extra_train_kwargs(self):
        return {}

    def _check(self, X):
        check_is_fitted(self, "arch_")
        return check_array(X, dtype=np.float64)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]


class MLEMLPClassifier(_MLPBase):
    """Softplus MLP trained by cross-entropy (the deterministic baseline)."""

    def __init__(self, hidden_dims=(64,), beta=1.0, learning_rate=0.001, batch_size=256,
                 epochs=200, validation_fraction=0.2, random_state=0):
        self.hidden_dims = hidden_dims
        self.beta = beta
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y):
        train, val = self._prepare(X, y)
        self.weights_ = train_mle(train, val, self.arch_, self._train_config(), history=self.history_)
        return self

    def decision_function(self, X):
        """Logits, shape ``(n_samples, n_classes)``."""
        X = self._check(X)
        return forward_batch(self.weights_.values, self.arch_, X)

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)


class BayesianMLPClassifier(_MLPBase):
    """Mean-field variational softplus MLP.

    ``prior`` is ``"scale_mixture"`` (with ``prior_pi``, ``prior_sigma1``, ``prior_sigma2``)
    or ``"gaussian"`` (zero mean, ``prior_sigma1`` std). Predictions average
    ``num_samples`` posterior draws, shared across all inputs.
    """

    def __init__(self, hidden_dims=(64,), beta=1.0, prior="scale_mixture", prior_pi=0.75,
                 prior_sigma1=0.1, prior_sigma2=0.5, learning_rate=0.001, batch_size=256,
                 epochs=200, kl_weight=0.1, kl_mode="per_example", mc_samples_per_batch=1,
                 num_samples=500, validation_fraction=0.2, random_state=0):
        self.hidden_dims = hidden_dims
        self.beta = beta
        self.prior = prior
        self.prior_pi = prior_pi
        self.prior_sigma1 = prior_sigma1
        self.prior_sigma2 = prior_sigma2
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.kl_weight = kl_weight
        self.kl_mode = kl_mode
        self.mc_samples_per_batch = mc_samples_per_batch
        self.num_samples = num_samples
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _extra_train_kwargs(self):
        return {"kl_weight": self.kl_weight, "kl_mode": self.kl_mode,
                "mc_samples_per_batch": self.mc_samples_per_batch}

    def _prior(self):
        if self.prior == "scale_mixture":
            return ScaleMixturePrior(self.prior_pi, self.prior_sigma1, self.prior_sigma2)
        if self.prior == "gaussian":
            n = self.arch_.num_weights
            return DiagonalGaussianPrior(np.zeros(n), np.full(n, self.prior_sigma1))
        raise ValueError(f"unknown prior {self.prior!r}")

    def fit(self, X, y):
        train, val = self._prepare(X, y)
        self.posterior_ = train_bnn(train, val, self.arch_, self._prior(), self._train_config(),
                                    history=self.history_)
        self.weight_samples_ = draw_weight_samples(
            self.posterior_, SamplerConfig(self.num_samples, self.random_state))
        return self

    def sample_logits(self, X):
        """Logit ensembles, shape ``(n_samples, num_samples, n_classes)``."""
        X = self._check(X)
        return logit_ensemble(self.weight_samples_, X)

    def decision_function(self, X):
        """Expected logit vectors."""
        X = self._check(X)
        return bayesian_summaries(self.weight_samples_, X)["elv"]

    def predict_proba(self, X):
        X = self._check(X)
        return np.concatenate([posterior_predictive(e) for e in iter_ensembles(self.weight_samples_, X, 64)])


class LogitOODDetector(BaseEstimator):
    """Post-hoc OOD scorer on top of an MLP classifier.

    ``fit`` trains a clone of ``estimator`` and indexes the logits (or expected
    logits) of the training inputs. ``score_samples`` returns one score per
    input where higher means more likely OOD.
    """

    def __init__(self, estimator=None, method="KNNplus_elv", k=5):
        self.estimator = estimator
        self.method = method
        self.k = k

    def fit(self, X, y):
        method = ScoreMethod.parse(self.method)
        est = self.estimator
        if est is None:
            est = BayesianMLPClassifier() if method.bayesian else MLEMLPClassifier()
        if method.bayesian != isinstance(est, BayesianMLPClassifier):
            raise ValueError(f"{method.value} needs a {'Bayesian' if method.bayesian else 'deterministic'} estimator")
        X, y = check_X_y(X, y, dtype=np.float64)
        self.estimator_ = clone(est).fit(X, y)
        self.method_ = method
        index = None
        if method.uses_index:
            index = LogitIndex(self.estimator_.decision_function(X),
                               np.searchsorted(self.estimator_.classes_, y), self.estimator_.classes_.size)
        if method.bayesian:
            self.artifacts_ = ModelArtifacts(weight_samples=self.estimator_.weight_samples_,
                                             elv_index=index, k=self.k)
        else:
            self.artifacts_ = ModelArtifacts(point_weights=self.estimator_.weights_, det_index=index, k=self.k)
        return self

    def score_samples(self, X):
        check_is_fitted(self, "artifacts_")
        X = check_array(X, dtype=np.float64)
        return score_all([self.method_], self.artifacts_, X)[self.method_]
