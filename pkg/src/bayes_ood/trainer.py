"""SGVB training of the variational posterior and cross-entropy training of point weights."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from .exceptions import InvalidArgumentError, TrainingDivergedError
from .net import (NetworkArch, PointWeights, VariationalPosterior, backward_batch,
                  forward_batch, init_point_weights, init_posterior, sigmoid)
from .priors import PriorSpec, kl_and_grad

logger = logging.getLogger(__name__)

# How the KL term is scaled against the batch-mean likelihood in each minibatch loss:
#   per_example: kl_weight / N_train, an unbiased minibatch estimate of
#                (sum of NLL + kl_weight * KL) / N_train
#   per_epoch:   kl_weight / num_batches, so the KL weights add up to kl_weight per epoch
#   per_batch:   kl_weight in every minibatch
KL_PER_EXAMPLE = "per_example"
KL_PER_EPOCH = "per_epoch"
KL_PER_BATCH = "per_batch"
KL_MODES = (KL_PER_EXAMPLE, KL_PER_EPOCH, KL_PER_BATCH)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 256
    epochs: int = 200
    kl_weight: float = 0.1
    kl_mode: str = KL_PER_EXAMPLE
    mc_samples_per_batch: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1 or self.mc_samples_per_batch < 1:
            raise InvalidArgumentError("batch_size, epochs and mc_samples_per_batch must be >= 1")
        if not self.kl_weight >= 0:
            raise InvalidArgumentError("kl_weight must be non-negative")
        if self.kl_mode not in KL_MODES:
            raise InvalidArgumentError(f"unknown kl_mode {self.kl_mode!r}")


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with integer labels.

    ``ids`` identifies rows in their source file so that derived subsets can be
    checked for overlap.
    """

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: Optional[int] = None
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] == 0:
            raise InvalidArgumentError("inputs must be a non-empty 2-D array")
        if y.shape != (x.shape[0],):
            raise InvalidArgumentError("labels must have one entry per input row")
        if not np.all(np.isfinite(x)):
            raise InvalidArgumentError("inputs contain non-finite values")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise InvalidArgumentError("labels must be integers")
        y = y.astype(np.int64)
        if np.any(y < 0):
            raise InvalidArgumentError("labels must be non-negative")
        if self.num_classes is not None and np.any(y >= self.num_classes):
            raise InvalidArgumentError(f"label out of range for {self.num_classes} classes")
        ids = np.arange(x.shape[0]) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != y.shape:
            raise InvalidArgumentError("ids must have one entry per input row")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index, dtype=np.int64)
        return LabeledDataset(self.inputs[index], self.labels[index], self.num_classes, self.ids[index])


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    kl_term: float
    val_accuracy: float
    checkpoint: bool


def split_train_val(dataset: LabeledDataset, ratio: float = 0.8, seed: int = 0
                    ) -> Tuple[LabeledDataset, LabeledDataset]:
    """Random disjoint split with ``ceil(ratio * N)`` rows in the first part."""
    n = len(dataset)
    if not 0.0 < ratio < 1.0:
        raise InvalidArgumentError(f"ratio must lie in (0, 1), got {ratio}")
    if n < 2:
        raise InvalidArgumentError("need at least two rows to split")
    n_train = min(max(math.ceil(ratio * n), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(perm[:n_train])), dataset.subset(np.sort(perm[n_train:]))


def _nll_and_grad_logits(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    n = logits.shape[0]
    logp = log_softmax(logits, axis=1)
    loss = -float(np.mean(logp[np.arange(n), labels]))
    grad = softmax(logits, axis=1)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def nll_loss(weights: np.ndarray, arch: NetworkArch, x: np.ndarray, y: np.ndarray
             ) -> Tuple[float, np.ndarray]:
    """Batch-mean negative log softmax likelihood and its gradient w.r.t. flat weights."""
    logits, cache = forward_batch(weights, arch, x, keep=True)
    loss, g_logits = _nll_and_grad_logits(logits, y)
    return loss, backward_batch(weights, arch, cache, g_logits)


def _check_batch(batch: LabeledDataset, arch: NetworkArch):
    if batch is None or len(batch) == 0:
        raise InvalidArgumentError("empty batch")
    if batch.dim != arch.input_dim:
        raise InvalidArgumentError(f"batch dimension {batch.dim} != arch input_dim {arch.input_dim}")
    if np.any(batch.labels >= arch.num_classes):
        raise InvalidArgumentError("batch label exceeds arch num_classes")


def elbo_loss(posterior: VariationalPosterior, prior: PriorSpec, batch: LabeledDataset, noise,
              kl_weight: float = 0.1, num_batches: int = 1, kl_mode: str = KL_PER_EPOCH,
              num_train: Optional[int] = None):
    """Negative ELBO estimate for one minibatch.

    Parameters
    ----------
    noise : array, shape (S, num_weights) or (num_weights,)
        Standard normal draws, one row per Monte Carlo sample.
    num_batches : int
        Minibatches per epoch; the KL term is divided by it in ``per_epoch`` mode.
    num_train : int, optional
        Training-set size; the KL term is divided by it in ``per_example`` mode.

    Returns
    -------
    loss : float
    grad_mu, grad_rho : ndarray
    """
    _check_batch(batch, posterior.arch)
    arch = posterior.arch
    noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    if noise.shape[1] != arch.num_weights or noise.shape[0] < 1:
        raise InvalidArgumentError(
            f"noise must have shape (S, {arch.num_weights}), got {noise.shape}")
    mu, rho, sigma = posterior.mu, posterior.rho, posterior.sigma
    s = noise.shape[0]
    nll = 0.0
    g_mu = np.zeros_like(mu)
    g_sigma = np.zeros_like(mu)
    for eps in noise:
        w = mu + sigma * eps
        loss_s, g_w = nll_loss(w, arch, batch.inputs, batch.labels)
        nll += loss_s / s
        g_mu += g_w / s
        g_sigma += g_w * eps / s
    scale = kl_scale(kl_weight, num_batches, kl_mode, num_train)
    kl, kl_g_mu, kl_g_sigma = kl_and_grad(mu, sigma, prior)
    loss = nll + scale * kl
    g_mu += scale * kl_g_mu
    g_sigma += scale * kl_g_sigma
    return loss, g_mu, g_sigma * sigmoid(rho)


def kl_scale(kl_weight: float, num_batches: int, kl_mode: str = KL_PER_EPOCH,
             num_train: Optional[int] = None) -> float:
    if kl_mode == KL_PER_BATCH:
        return float(kl_weight)
    if kl_mode == KL_PER_EPOCH:
        return float(kl_weight) / num_batches
    if kl_mode == KL_PER_EXAMPLE:
        if not num_train:
            raise InvalidArgumentError("per_example KL scaling needs num_train")
        return float(kl_weight) / num_train
    raise InvalidArgumentError(f"unknown kl_mode {kl_mode!r}")


class Adam:
    """Adam over a flat parameter vector."""

    def __init__(self, size, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def accuracy(weights: np.ndarray, arch: NetworkArch, data: LabeledDataset) -> float:
    logits = forward_batch(weights, arch, data.inputs)
    return float(np.mean(np.argmax(logits, axis=1) == data.labels))


def _check_datasets(train: LabeledDataset, val: LabeledDataset, arch: NetworkArch):
    for name, d in (("train", train), ("val", val)):
        if d.dim != arch.input_dim:
            raise InvalidArgumentError(f"{name} dimension {d.dim} != arch input_dim {arch.input_dim}")
        if np.any(d.labels >= arch.num_classes):
            raise InvalidArgumentError(f"{name} labels exceed arch num_classes {arch.num_classes}")


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train_bnn(train: LabeledDataset, val: LabeledDataset, arch: NetworkArch, prior: PriorSpec,
              config: TrainConfig = TrainConfig(), init: Optional[VariationalPosterior] = None,
              history: Optional[List[EpochRecord]] = None) -> VariationalPosterior:
    """Minibatch Adam on ``(mu, rho)``; returns the posterior with the best validation accuracy.

    Validation accuracy is measured with the posterior-mean weights. Per-epoch records are
    appended to ``history`` when given.
    """
    _check_datasets(train, val, arch)
    rng = np.random.default_rng(config.seed)
    posterior = init if init is not None else init_posterior(arch, int(rng.integers(2 ** 63)))
    n_w = arch.num_weights
    params = np.concatenate([posterior.mu, posterior.rho])
    opt = Adam(2 * n_w, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    best, best_acc = posterior, -1.0
    num_batches = math.ceil(len(train) / config.batch_size)
    scale = kl_scale(config.kl_weight, num_batches, config.kl_mode, len(train))
    for epoch in range(1, config.epochs + 1):
        losses = []
        for idx in _batches(len(train), config.batch_size, rng):
            noise = rng.standard_normal((config.mc_samples_per_batch, n_w))
            q = VariationalPosterior(params[:n_w], params[n_w:], arch)
            with np.errstate(over="ignore", invalid="ignore"):
                loss, g_mu, g_rho = elbo_loss(q, prior, train.subset(idx), noise,
                                              config.kl_weight, num_batches, config.kl_mode, len(train))
            if not np.isfinite(loss) or not (np.all(np.isfinite(g_mu)) and np.all(np.isfinite(g_rho))):
                raise TrainingDivergedError(epoch, f"loss={loss}")
            losses.append(loss)
            params = opt.step(params, np.concatenate([g_mu, g_rho]))
            if not np.all(np.isfinite(params)):
                raise TrainingDivergedError(epoch, "non-finite parameters")
        q = VariationalPosterior(params[:n_w], params[n_w:], arch)
        kl_epoch = scale * kl_and_grad(q.mu, q.sigma, prior)[0]
        acc = accuracy(q.mu, arch, val)
        improved = acc > best_acc
        if improved:
            best, best_acc = q, acc
        if history is not None:
            history.append(EpochRecord(epoch, float(np.mean(losses)), float(kl_epoch), acc, improved))
        logger.debug("bnn epoch %d loss %.6f val_acc %.4f", epoch, np.mean(losses), acc)
    return best


def train_mle(train: LabeledDataset, val: LabeledDataset, arch: NetworkArch,
              config: TrainConfig = TrainConfig(), init: Optional[PointWeights] = None,
              history: Optional[List[EpochRecord]] = None) -> PointWeights:
    """Cross-entropy training of point weights with best-validation checkpointing."""
    _check_datasets(train, val, arch)
    rng = np.random.default_rng(config.seed)
    weights = init if init is not None else init_point_weights(arch, int(rng.integers(2 ** 63)))
    params = weights.values.copy()
    opt = Adam(arch.num_weights, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    best, best_acc = weights, -1.0
    for epoch in range(1, config.epochs + 1):
        losses = []
        for idx in _batches(len(train), config.batch_size, rng):
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grad = nll_loss(params, arch, train.inputs[idx], train.labels[idx])
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(epoch, f"loss={loss}")
            losses.append(loss)
            params = opt.step(params, grad)
        acc = accuracy(params, arch, val)
        improved = acc > best_acc
        if improved:
            best, best_acc = PointWeights(params, arch), acc
        if history is not None:
            history.append(EpochRecord(epoch, float(np.mean(losses)), 0.0, acc, improved))
        logger.debug("mle epoch %d loss %.6f val_acc %.4f", epoch, np.mean(losses), acc)
    return best
