"""Posterior weight draws, per-input logit ensembles and their summaries."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np
from scipy.special import softmax

from .exceptions import InvalidArgumentError
from .net import PointWeights, VariationalPosterior, forward_batch, sample_weights


@dataclass(frozen=True)
class SamplerConfig:
    num_samples: int = 500
    seed: int = 0
    share_samples_across_inputs: bool = True

    def __post_init__(self):
        if self.num_samples < 1:
            raise InvalidArgumentError("num_samples must be >= 1")


def draw_weight_samples(posterior: VariationalPosterior, config: SamplerConfig = SamplerConfig()
                        ) -> List[PointWeights]:
    """``M`` reparameterised draws from ``posterior``, deterministic in ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    noise = rng.standard_normal((config.num_samples, posterior.mu.shape[0]))
    return [sample_weights(posterior, eps) for eps in noise]


def _stack(weight_samples: Sequence[PointWeights]):
    if len(weight_samples) == 0:
        raise InvalidArgumentError("need at least one weight sample")
    arch = weight_samples[0].arch
    return arch, np.stack([w.values for w in weight_samples])


def logit_ensemble(weight_samples: Sequence[PointWeights], inputs) -> np.ndarray:
    """Logits of one input under every weight sample, shape ``(M, K)``.

    A 2-D ``inputs`` batch of ``n`` rows yields shape ``(n, M, K)``.
    """
    arch, _ = _stack(weight_samples)
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != arch.input_dim:
        raise InvalidArgumentError(
            f"input dimension {x.shape[1]} does not match arch input_dim {arch.input_dim}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("inputs contain non-finite values")
    out = np.empty((x.shape[0], len(weight_samples), arch.num_classes))
    for m, w in enumerate(weight_samples):
        out[:, m, :] = forward_batch(w.values, arch, x)
    return out[0] if single else out


def iter_ensembles(weight_samples: Sequence[PointWeights], inputs, block: int = 256) -> Iterable[np.ndarray]:
    """Yield ensembles for blocks of ``inputs`` to bound memory at ``block * M * K``."""
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    for start in range(0, x.shape[0], block):
        yield logit_ensemble(weight_samples, x[start:start + block])


def _check_ensemble(ensemble) -> np.ndarray:
    e = np.asarray(ensemble, dtype=np.float64)
    if e.ndim < 2 or e.shape[-2] < 1 or e.shape[-1] < 1:
        raise InvalidArgumentError("ensemble must have shape (..., M, K) with M, K >= 1")
    if not np.all(np.isfinite(e)):
        raise InvalidArgumentError("ensemble contains non-finite logits")
    return e


def expected_logit_vector(ensemble) -> np.ndarray:
    """Mean logit vector over posterior samples (works on stacked ensembles too)."""
    return _check_ensemble(ensemble).mean(axis=-2)


def posterior_predictive(ensemble) -> np.ndarray:
    """Monte Carlo average of per-sample softmax probabilities."""
    p = softmax(_check_ensemble(ensemble), axis=-1).mean(axis=-2)
    return p / p.sum(axis=-1, keepdims=True)


def write_ensemble_csv(path, ensembles, input_ids=None) -> None:
    """Columns ``input_id, sample_id, logit_0..logit_{K-1}``."""
    ensembles = np.asarray(ensembles, dtype=np.float64)
    if ensembles.ndim == 2:
        ensembles = ensembles[None]
    n, m, k = ensembles.shape
    ids = range(n) if input_ids is None else input_ids
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["input_id", "sample_id"] + [f"logit_{j}" for j in range(k)])
        for i, ens in zip(ids, ensembles):
            for s in range(m):
                writer.writerow([i, s] + [repr(float(v)) for v in ens[s]])


def read_ensemble_csv(path):
    """Inverse of :func:`write_ensemble_csv`; returns ``(input_ids, ensembles)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        k = len(header) - 2
        rows = {}
        for row in reader:
            rows.setdefault(int(row[0]), []).append((int(row[1]), [float(v) for v in row[2:2 + k]]))
    ids = sorted(rows)
    ensembles = np.array([[vals for _, vals in sorted(rows[i])] for i in ids])
    return ids, ensembles
