"""ROC analysis with OOD as the positive class."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .exceptions import InvalidArgumentError

TPR_TARGETS = (0.90, 0.95, 0.99)
# absorbs rounding in count / total when comparing against a target rate
_RATE_TOL = 1e-12
_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class ScoredEvalSet:
    scores: np.ndarray
    is_ood: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).ravel()
        y = np.asarray(self.is_ood, dtype=bool).ravel()
        if s.shape != y.shape:
            raise InvalidArgumentError("scores and is_ood must have equal length")
        if not np.all(np.isfinite(s)):
            raise InvalidArgumentError("scores must be finite")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "is_ood", y)

    @classmethod
    def from_split(cls, id_scores, ood_scores) -> "ScoredEvalSet":
        id_scores = np.asarray(id_scores, dtype=np.float64).ravel()
        ood_scores = np.asarray(ood_scores, dtype=np.float64).ravel()
        return cls(np.concatenate([id_scores, ood_scores]),
                   np.concatenate([np.zeros(id_scores.size, bool), np.ones(ood_scores.size, bool)]))

    @property
    def n_pos(self) -> int:
        return int(self.is_ood.sum())

    @property
    def n_neg(self) -> int:
        return int((~self.is_ood).sum())

    def _require_both(self):
        if self.n_pos == 0 or self.n_neg == 0:
            raise InvalidArgumentError("ROC metrics need at least one OOD and one ID record")


@dataclass
class MetricReport:
    auc_roc: float
    fpr_at: Dict[float, float] = field(default_factory=dict)
    n_pos: int = 0
    n_neg: int = 0


def _as_set(data) -> ScoredEvalSet:
    if isinstance(data, ScoredEvalSet):
        return data
    scores, is_ood = data
    return ScoredEvalSet(scores, is_ood)


def _operating_points(es: ScoredEvalSet) -> Tuple[np.ndarray, np.ndarray]:
    """TP/FP counts when flagging ``score >= t``, for each distinct t in decreasing order."""
    order = np.argsort(-es.scores, kind="mergesort")
    s = es.scores[order]
    y = es.is_ood[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last position of each run of equal scores
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.size - 1]
    return np.r_[0, tp[last]], np.r_[0, fp[last]]


def roc_curve(data) -> List[Tuple[float, float]]:
    """ROC points ``(fpr, tpr)`` from ``(0, 0)`` to ``(1, 1)`` over all distinct thresholds."""
    es = _as_set(data)
    es._require_both()
    tp, fp = _operating_points(es)
    return list(zip((fp / es.n_neg).tolist(), (tp / es.n_pos).tolist()))


def auc_roc(data) -> float:
    """Mann-Whitney estimate ``P(s_ood > s_id) + 0.5 P(tie)`` from mid-ranks."""
    es = _as_set(data)
    es._require_both()
    ranks = rankdata(es.scores, method="average")
    n_pos, n_neg = es.n_pos, es.n_neg
    u = ranks[es.is_ood].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_trapezoid(data) -> float:
    pts = np.array(roc_curve(data))
    return float(_trapezoid(pts[:, 1], pts[:, 0]))


def fpr_at_tpr(data, tpr_target: float = 0.95) -> float:
    """Lowest FPR over thresholds whose TPR reaches ``tpr_target``; no interpolation."""
    if not 0.0 < tpr_target <= 1.0:
        raise InvalidArgumentError(f"tpr_target must lie in (0, 1], got {tpr_target}")
    es = _as_set(data)
    es._require_both()
    tp, fp = _operating_points(es)
    ok = tp / es.n_pos >= tpr_target - _RATE_TOL
    # fp is non-decreasing, so the first qualifying (largest) threshold has the smallest FPR
    return float(fp[np.argmax(ok)] / es.n_neg)


def evaluate(data, tpr_targets: Sequence[float] = TPR_TARGETS) -> MetricReport:
    es = _as_set(data)
    return MetricReport(auc_roc(es), {t: fpr_at_tpr(es, t) for t in tpr_targets}, es.n_pos, es.n_neg)


def summarize(reports: Sequence[MetricReport]) -> Dict[str, Tuple[float, float]]:
    """Mean and population standard deviation of every metric across reports."""
    if len(reports) == 0:
        raise InvalidArgumentError("summarize needs at least one report")
    fields = {"auc_roc": [r.auc_roc for r in reports]}
    for t in reports[0].fpr_at:
        fields[f"fpr{int(round(t * 100))}"] = [r.fpr_at[t] for r in reports]
    return {name: (float(np.mean(v)), float(np.std(v))) for name, v in fields.items()}
