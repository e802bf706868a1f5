"""Weight priors, their log-densities and KL terms against the mean-field posterior."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy.special import logsumexp

from .exceptions import InvalidArgumentError
from .net import PointWeights, VariationalPosterior, inverse_softplus

_LOG_2PI = float(np.log(2.0 * np.pi))
MOPED_STD_FLOOR = 1e-6


@dataclass(frozen=True)
class ScaleMixturePrior:
    """Two zero-mean Gaussian components per weight: ``pi N(0, s1^2) + (1 - pi) N(0, s2^2)``."""

    pi: float = 0.75
    sigma1: float = 0.1
    sigma2: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.pi < 1.0:
            raise InvalidArgumentError(f"mixture weight pi must lie in (0, 1), got {self.pi}")
        if not (self.sigma1 > 0 and self.sigma2 > 0 and np.isfinite(self.sigma1) and np.isfinite(self.sigma2)):
            raise InvalidArgumentError("mixture scales must be positive and finite")


@dataclass(frozen=True)
class DiagonalGaussianPrior:
    """Independent Gaussian per weight with its own mean and standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).ravel()
        std = np.array(self.std, dtype=np.float64).ravel()
        if mean.shape != std.shape:
            raise InvalidArgumentError("prior mean and std must have the same length")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std)) and np.all(std > 0)):
            raise InvalidArgumentError("prior mean must be finite and std finite and positive")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def __len__(self):
        return self.mean.shape[0]


PriorSpec = Union[ScaleMixturePrior, DiagonalGaussianPrior]


def _gauss_logpdf(x, mean, std):
    z = (x - mean) / std
    return -0.5 * z * z - np.log(std) - 0.5 * _LOG_2PI


def _weights_array(weights) -> np.ndarray:
    w = weights.values if isinstance(weights, PointWeights) else np.asarray(weights, dtype=np.float64).ravel()
    if not np.all(np.isfinite(w)):
        raise InvalidArgumentError("weights contain non-finite entries")
    return w


def _check_diag_len(prior: DiagonalGaussianPrior, n: int):
    if len(prior) != n:
        raise InvalidArgumentError(f"prior has {len(prior)} entries, expected {n}")


def log_prior_density(prior: PriorSpec, weights) -> float:
    """Sum over weights of the per-weight log prior density."""
    w = _weights_array(weights)
    if isinstance(prior, DiagonalGaussianPrior):
        _check_diag_len(prior, w.shape[0])
        return float(np.sum(_gauss_logpdf(w, prior.mean, prior.std)))
    comps = np.stack([
        np.log(prior.pi) + _gauss_logpdf(w, 0.0, prior.sigma1),
        np.log1p(-prior.pi) + _gauss_logpdf(w, 0.0, prior.sigma2),
    ])
    return float(np.sum(logsumexp(comps, axis=0)))


def _kl_gauss(mu_m, sigma_m, mu_n, sigma_n):
    return (np.log(sigma_n / sigma_m)
            + (sigma_m ** 2 + (mu_m - mu_n) ** 2) / (2.0 * sigma_n ** 2) - 0.5)


def kl_gaussian_gaussian(mu_m: float, sigma_m: float, mu_n: float, sigma_n: float) -> float:
    """``KL(N(mu_m, sigma_m^2) || N(mu_n, sigma_n^2))``."""
    if not (sigma_m > 0 and sigma_n > 0):
        raise InvalidArgumentError("standard deviations must be positive")
    # clamp tiny negative rounding residue
    return max(float(_kl_gauss(mu_m, sigma_m, mu_n, sigma_n)), 0.0)


def kl_mixture_upper_bound(posterior: VariationalPosterior, prior: ScaleMixturePrior) -> float:
    """Jensen upper bound on ``KL(q || p)`` for a scale-mixture prior.

    Uses ``log sum_i pi_i p_i >= sum_i pi_i log p_i`` inside the expectation, which
    gives ``sum_k sum_i pi_i KL(q_k || N(0, sigma_i^2))``.
    """
    mu, sigma = posterior.mu, posterior.sigma
    kl1 = _kl_gauss(mu, sigma, 0.0, prior.sigma1)
    kl2 = _kl_gauss(mu, sigma, 0.0, prior.sigma2)
    return max(float(np.sum(prior.pi * kl1 + (1.0 - prior.pi) * kl2)), 0.0)


def kl_posterior_prior_diagonal(posterior: VariationalPosterior, prior: DiagonalGaussianPrior) -> float:
    _check_diag_len(prior, posterior.mu.shape[0])
    kl = _kl_gauss(posterior.mu, posterior.sigma, prior.mean, prior.std)
    return max(float(np.sum(kl)), 0.0)


def kl_divergence(posterior: VariationalPosterior, prior: PriorSpec) -> float:
    """KL term used in training: exact for diagonal priors, the Jensen bound for mixtures."""
    if isinstance(prior, DiagonalGaussianPrior):
        return kl_posterior_prior_diagonal(posterior, prior)
    return kl_mixture_upper_bound(posterior, prior)


def kl_and_grad(mu: np.ndarray, sigma: np.ndarray, prior: PriorSpec) -> Tuple[float, np.ndarray, np.ndarray]:
    """KL value with its gradients w.r.t. ``mu`` and ``sigma``."""
    if isinstance(prior, DiagonalGaussianPrior):
        _check_diag_len(prior, mu.shape[0])
        var_p = prior.std ** 2
        kl = np.sum(_kl_gauss(mu, sigma, prior.mean, prior.std))
        return float(kl), (mu - prior.mean) / var_p, -1.0 / sigma + sigma / var_p
    inv_var = prior.pi / prior.sigma1 ** 2 + (1.0 - prior.pi) / prior.sigma2 ** 2
    kl = np.sum(prior.pi * _kl_gauss(mu, sigma, 0.0, prior.sigma1)
                + (1.0 - prior.pi) * _kl_gauss(mu, sigma, 0.0, prior.sigma2))
    return float(kl), mu * inv_var, -1.0 / sigma + sigma * inv_var


def moped_prior_from_pretrained(pretrained: PointWeights, delta: float = 0.01,
                                floor: float = MOPED_STD_FLOOR
                                ) -> Tuple[DiagonalGaussianPrior, VariationalPosterior]:
    """Empirical-Bayes prior centred on pretrained weights with std ``delta * |w|``.

    Returns the prior and a posterior initialised to coincide with it.
    """
    if not delta > 0:
        raise InvalidArgumentError(f"delta must be positive, got {delta}")
    w = _weights_array(pretrained)
    std = np.maximum(delta * np.abs(w), floor)
    prior = DiagonalGaussianPrior(w, std)
    posterior = VariationalPosterior(w, inverse_softplus(std), pretrained.arch)
    return prior, posterior


def prior_to_dict(prior: PriorSpec) -> dict:
    if isinstance(prior, ScaleMixturePrior):
        return {"type": "scale_mixture", "pi": prior.pi, "sigma1": prior.sigma1, "sigma2": prior.sigma2}
    return {"type": "diagonal_gaussian", "size": len(prior)}
