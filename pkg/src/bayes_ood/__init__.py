"""Bayesian post-hoc OOD detection with expected logit vectors."""

from .estimators import BayesianMLPClassifier, LogitOODDetector, MLEMLPClassifier
from .exceptions import (BayesOODError, ConfigError, DataError, InsufficientClassSamplesError,
                         InvalidArgumentError, TrainingDivergedError)
from .knn import LogitIndex, build_index
from .metrics import MetricReport, ScoredEvalSet, auc_roc, fpr_at_tpr, roc_curve, summarize
from .net import (NetworkArch, PointWeights, VariationalPosterior, forward_logits, init_posterior,
                  sample_weights, sigma_from_rho)
from .priors import (DiagonalGaussianPrior, ScaleMixturePrior, kl_gaussian_gaussian,
                     kl_mixture_upper_bound, kl_posterior_prior_diagonal, log_prior_density,
                     moped_prior_from_pretrained)
from .sampler import (SamplerConfig, draw_weight_samples, expected_logit_vector, logit_ensemble,
                      posterior_predictive)
from .scores import (ScoreMethod, knn_plus_score, knn_score, max_logit_score, mutual_information,
                     predictive_entropy, score_dataset, softmax, softmax_entropy)
from .trainer import LabeledDataset, TrainConfig, elbo_loss, split_train_val, train_bnn, train_mle

__version__ = "0.1.0"

__all__ = [
    "BayesOODError",
    "BayesianMLPClassifier",
    "ConfigError",
    "DataError",
    "DiagonalGaussianPrior",
    "InsufficientClassSamplesError",
    "InvalidArgumentError",
    "LabeledDataset",
    "LogitIndex",
    "LogitOODDetector",
    "MLEMLPClassifier",
    "MetricReport",
    "NetworkArch",
    "PointWeights",
    "SamplerConfig",
    "ScaleMixturePrior",
    "ScoreMethod",
    "ScoredEvalSet",
    "TrainConfig",
    "TrainingDivergedError",
    "VariationalPosterior",
    "auc_roc",
    "build_index",
    "draw_weight_samples",
    "elbo_loss",
    "expected_logit_vector",
    "forward_logits",
    "fpr_at_tpr",
    "init_posterior",
    "kl_gaussian_gaussian",
    "kl_mixture_upper_bound",
    "kl_posterior_prior_diagonal",
    "knn_plus_score",
    "knn_score",
    "log_prior_density",
    "logit_ensemble",
    "max_logit_score",
    "moped_prior_from_pretrained",
    "mutual_information",
    "posterior_predictive",
    "predictive_entropy",
    "roc_curve",
    "sample_weights",
    "score_dataset",
    "sigma_from_rho",
    "softmax",
    "softmax_entropy",
    "split_train_val",
    "summarize",
    "train_bnn",
    "train_mle",
]
