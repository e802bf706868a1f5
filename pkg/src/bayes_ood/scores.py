"""OOD scores on logits and logit ensembles. Every score is oriented so that higher means more OOD."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.special import log_softmax
from scipy.special import softmax as _softmax

from .exceptions import ConfigError, InvalidArgumentError
from .knn import LogitIndex
from .net import PointWeights, forward_batch
from .sampler import iter_ensembles

MI_CLAMP = 1e-9


class ScoreMethod(str, enum.Enum):
    SE = "SE"
    PE = "PE"
    MI = "MI"
    ML_DET = "ML_det"
    ML_ELV = "ML_elv"
    KNN_DET = "KNN_det"
    KNN_ELV = "KNN_elv"
    KNNPLUS_DET = "KNNplus_det"
    KNNPLUS_ELV = "KNNplus_elv"

    @property
    def bayesian(self) -> bool:
        return self in _BAYESIAN

    @property
    def uses_index(self) -> bool:
        return self in (ScoreMethod.KNN_DET, ScoreMethod.KNN_ELV,
                        ScoreMethod.KNNPLUS_DET, ScoreMethod.KNNPLUS_ELV)

    @classmethod
    def parse(cls, name: str) -> "ScoreMethod":
        for m in cls:
            if name.lower() == m.value.lower():
                return m
        raise ConfigError(f"unknown score method {name!r}; choose from {[m.value for m in cls]}")


_BAYESIAN = frozenset({ScoreMethod.PE, ScoreMethod.MI, ScoreMethod.ML_ELV,
                       ScoreMethod.KNN_ELV, ScoreMethod.KNNPLUS_ELV})
ALL_METHODS = tuple(ScoreMethod)


def _finite(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] == 0:
        raise InvalidArgumentError("logits must have at least one class")
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError("logits must be finite")
    return z


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax along the last axis."""
    return _softmax(_finite(logits), axis=-1)


def _entropy_from_logits(z: np.ndarray) -> np.ndarray:
    logp = log_softmax(z, axis=-1)
    p = np.exp(logp)
    # p * logp is exactly 0 where p underflows, matching the 0 log 0 = 0 convention
    return np.maximum(-np.sum(p * logp, axis=-1), 0.0)


def softmax_entropy(logits):
    """Natural-log entropy of ``softmax(logits)``."""
    h = _entropy_from_logits(_finite(logits))
    return float(h) if np.ndim(h) == 0 else h


def max_logit_score(logits):
    """Negated maximum logit."""
    s = -np.max(_finite(logits), axis=-1)
    return float(s) if np.ndim(s) == 0 else s


def _predictive(ens: np.ndarray) -> np.ndarray:
    return _softmax(ens, axis=-1).mean(axis=-2)


def _entropy(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return np.maximum(-terms.sum(axis=-1), 0.0)


def _check_ens(ensemble) -> np.ndarray:
    e = _finite(ensemble)
    if e.ndim < 2 or e.shape[-2] < 1:
        raise InvalidArgumentError("ensemble must have shape (..., M, K)")
    return e


def predictive_entropy(ensemble):
    """Entropy of the Monte Carlo posterior predictive."""
    h = _entropy(_predictive(_check_ens(ensemble)))
    return float(h) if np.ndim(h) == 0 else h


def mutual_information(ensemble):
    """Predictive entropy minus the mean per-sample softmax entropy.

    Values within ``MI_CLAMP`` below zero (rounding) are returned as 0.
    """
    e = _check_ens(ensemble)
    mi = _entropy(_predictive(e)) - _entropy_from_logits(e).mean(axis=-1)
    mi = np.where(mi < 0, np.where(mi >= -MI_CLAMP, 0.0, mi), mi)
    return float(mi) if np.ndim(mi) == 0 else mi


def knn_score(index: LogitIndex, query_vector, k: int, exclude_self: bool = False):
    """Distance to the k-th nearest reference logit vector."""
    return index.kth_neighbor_distance(query_vector, k, exclude_self)


def knn_plus_score(index: LogitIndex, query_vector, k: int, exclude_self: bool = False):
    """Class-conditioned k-NN score.

    ``d_knn + d_class(c*) - mean_{c != c*} d_class(c)``, with ``c*`` the class whose
    k-th in-class neighbour is closest (ties go to the lowest class id).
    """
    if index.num_classes < 2:
        raise InvalidArgumentError("kNN+ needs at least two classes")
    q = np.asarray(query_vector, dtype=np.float64)
    single = q.ndim == 1
    d_knn = np.atleast_1d(index.kth_neighbor_distance(q, k, exclude_self))
    d_class = index.class_distances(q, k, exclude_self)
    c = index.num_classes
    best = np.argmin(d_class, axis=1)  # first minimum on ties
    d_min = d_class[np.arange(d_class.shape[0]), best]
    others = (d_class.sum(axis=1) - d_min) / (c - 1)
    s = d_knn + d_min - others
    return float(s[0]) if single else s


@dataclass
class ModelArtifacts:
    """Everything a scoring run may need.

    Deterministic methods need ``point_weights``; Bayesian ones need ``weight_samples``.
    kNN variants also need the matching reference index.
    """

    point_weights: Optional[PointWeights] = None
    weight_samples: Optional[Sequence[PointWeights]] = None
    det_index: Optional[LogitIndex] = None
    elv_index: Optional[LogitIndex] = None
    k: int = 5
    exclude_self: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")


def deterministic_logits(weights: PointWeights, inputs) -> np.ndarray:
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    return forward_batch(weights.values, weights.arch, x)


def bayesian_summaries(weight_samples: Sequence[PointWeights], inputs, block: int = 64) -> Dict[str, np.ndarray]:
    """Expected logits, predictive entropy and mutual information in one streaming pass."""
    elv, pe, mi = [], [], []
    for ens in iter_ensembles(weight_samples, inputs, block):
        elv.append(ens.mean(axis=1))
        pe.append(predictive_entropy(ens))
        mi.append(mutual_information(ens))
    return {"elv": np.concatenate(elv), "pe": np.concatenate(pe), "mi": np.concatenate(mi)}


def _require(artifacts: ModelArtifacts, method: ScoreMethod):
    if method.bayesian and not artifacts.weight_samples:
        raise ConfigError(f"{method.value} needs posterior weight samples")
    if not method.bayesian and artifacts.point_weights is None:
        raise ConfigError(f"{method.value} needs point weights")
    if method in (ScoreMethod.KNN_DET, ScoreMethod.KNNPLUS_DET) and artifacts.det_index is None:
        raise ConfigError(f"{method.value} needs a deterministic logit index")
    if method in (ScoreMethod.KNN_ELV, ScoreMethod.KNNPLUS_ELV) and artifacts.elv_index is None:
        raise ConfigError(f"{method.value} needs an expected-logit index")


def score_all(methods: Iterable[ScoreMethod], artifacts: ModelArtifacts, inputs) -> Dict[ScoreMethod, np.ndarray]:
    """Score ``inputs`` with several methods, sharing forward passes between them."""
    methods: List[ScoreMethod] = [ScoreMethod.parse(m) if isinstance(m, str) else m for m in methods]
    for m in methods:
        _require(artifacts, m)
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    det = deterministic_logits(artifacts.point_weights, x) if any(not m.bayesian for m in methods) else None
    bay = bayesian_summaries(artifacts.weight_samples, x) if any(m.bayesian for m in methods) else None
    k, ex = artifacts.k, artifacts.exclude_self
    out = {}
    for m in methods:
        if m is ScoreMethod.SE:
            s = softmax_entropy(det)
        elif m is ScoreMethod.ML_DET:
            s = max_logit_score(det)
        elif m is ScoreMethod.KNN_DET:
            s = knn_score(artifacts.det_index, det, k, ex)
        elif m is ScoreMethod.KNNPLUS_DET:
            s = knn_plus_score(artifacts.det_index, det, k, ex)
        elif m is ScoreMethod.PE:
            s = bay["pe"]
        elif m is ScoreMethod.MI:
            s = bay["mi"]
        elif m is ScoreMethod.ML_ELV:
            s = max_logit_score(bay["elv"])
        elif m is ScoreMethod.KNN_ELV:
            s = knn_score(artifacts.elv_index, bay["elv"], k, ex)
        else:
            s = knn_plus_score(artifacts.elv_index, bay["elv"], k, ex)
        out[m] = np.asarray(s, dtype=np.float64).reshape(x.shape[0])
    return out


def score_dataset(method, artifacts: ModelArtifacts, inputs) -> np.ndarray:
    method = ScoreMethod.parse(method) if isinstance(method, str) else method
    return score_all([method], artifacts, inputs)[method]


def write_scores_csv(path, scores: Dict, is_ood, input_ids=None) -> None:
    """Score dump with columns ``input_id, method, score, is_ood_label``."""
    is_ood = np.asarray(is_ood, dtype=bool)
    ids = np.arange(is_ood.shape[0]) if input_ids is None else input_ids
    with open(path, "w") as fh:
        fh.write("input_id,method,score,is_ood_label\n")
        for m, s in scores.items():
            name = m.value if isinstance(m, ScoreMethod) else str(m)
            for i, v, y in zip(ids, s, is_ood):
                fh.write(f"{i},{name},{float(v)!r},{int(y)}\n")
