"""End-to-end experiment pipeline: config, training, scoring, metrics and report files."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml

from .data import balanced_subsample, load_dataset
from .exceptions import ConfigError, DataError, InvalidArgumentError
from .knn import LogitIndex
from .metrics import TPR_TARGETS, MetricReport, evaluate, summarize
from .net import (NetworkArch, PointWeights, VariationalPosterior, load_posterior, load_weights,
                  save_posterior, save_weights)
from .priors import DiagonalGaussianPrior, ScaleMixturePrior, moped_prior_from_pretrained
from .sampler import SamplerConfig, draw_weight_samples
from .scores import (ALL_METHODS, ModelArtifacts, ScoreMethod, bayesian_summaries,
                     deterministic_logits, score_all)
from .trainer import EpochRecord, LabeledDataset, TrainConfig, split_train_val, train_bnn, train_mle

logger = logging.getLogger(__name__)

HIST_BINS = 50


def derive_seed(master_seed: int, stage: str) -> int:
    """Child seed for a named stage; independent of which other stages exist."""
    digest = hashlib.sha256(f"{int(master_seed)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# -- config ------------------------------------------------------------------

_SCHEMA = {
    "seed": None,
    "arch": {"hidden_dims", "beta"},
    "prior": {"type", "pi", "sigma1", "sigma2", "mean", "std", "delta", "floor", "pretrained"},
    "train": {"learning_rate", "batch_size", "epochs", "kl_weight", "kl_mode", "mc_samples_per_batch"},
    "sampler": {"num_samples", "share_samples_across_inputs"},
    "scores": {"methods", "k", "exclude_self"},
    "data": {"format", "num_classes", "id_train", "id_test", "ood", "train_size",
             "eval_id", "eval_ood", "split_ratio"},
}


@dataclass
class DataSource:
    path: str
    labels: Optional[str] = None


@dataclass
class ExperimentConfig:
    id_train: DataSource
    id_test: DataSource
    ood: Dict[str, DataSource]
    format: str = "csv"
    num_classes: Optional[int] = None
    train_size: int = 500
    eval_id: int = 5000
    eval_ood: int = 5000
    split_ratio: float = 0.8
    hidden_dims: Tuple[int, ...] = (64,)
    beta: float = 1.0
    prior: Dict[str, Any] = field(default_factory=lambda: {"type": "scale_mixture"})
    train: Dict[str, Any] = field(default_factory=dict)
    num_samples: int = 500
    share_samples_across_inputs: bool = True
    methods: Tuple[ScoreMethod, ...] = ALL_METHODS
    k: int = 5
    exclude_self: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.train_size < 1 or self.eval_id < 1 or self.eval_ood < 1:
            raise ConfigError("train_size and eval counts must be >= 1")
        if not 0 < self.split_ratio < 1:
            raise ConfigError("split_ratio must lie in (0, 1)")
        if self.num_samples < 1 or self.k < 1:
            raise ConfigError("num_samples and k must be >= 1")
        if not self.ood:
            raise ConfigError("at least one OOD dataset is required")
        if self.format not in ("csv", "idx"):
            raise ConfigError(f"unknown data format {self.format!r}")
        try:
            TrainConfig(**self.train)
        except (TypeError, InvalidArgumentError) as exc:
            raise ConfigError(f"train: {exc}") from None

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.train)


def _source(value, base: Path, where: str) -> DataSource:
    if isinstance(value, str):
        return DataSource(str(base / value))
    if isinstance(value, dict) and set(value) <= {"path", "images", "labels"}:
        path = value.get("path") or value.get("images")
        if not path:
            raise ConfigError(f"{where}: needs 'path' or 'images'")
        labels = value.get("labels")
        return DataSource(str(base / path), str(base / labels) if labels else None)
    raise ConfigError(f"{where}: expected a path or a mapping with path/images/labels")


def parse_config(raw: Dict[str, Any], base_dir=".") -> ExperimentConfig:
    """Validate a nested config mapping; unknown keys are errors."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    base = Path(base_dir)
    for key, value in raw.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config section {key!r}")
        allowed = _SCHEMA[key]
        if allowed is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be a mapping")
            unknown = set(value) - allowed
            if unknown:
                raise ConfigError(f"unknown keys in {key!r}: {sorted(unknown)}")
    data = raw.get("data")
    if not data:
        raise ConfigError("missing 'data' section")
    for req in ("id_train", "id_test", "ood"):
        if req not in data:
            raise ConfigError(f"data.{req} is required")
    if not isinstance(data["ood"], dict):
        raise ConfigError("data.ood must map dataset names to paths")
    arch = raw.get("arch", {})
    sampler = raw.get("sampler", {})
    scores = raw.get("scores", {})
    prior = dict(raw.get("prior", {"type": "scale_mixture"}))
    if prior.get("pretrained"):
        prior["pretrained"] = str(base / prior["pretrained"])
    methods = scores.get("methods", [m.value for m in ALL_METHODS])
    if isinstance(methods, str):
        methods = [m.strip() for m in methods.split(",") if m.strip()]
    try:
        return ExperimentConfig(
            id_train=_source(data["id_train"], base, "data.id_train"),
            id_test=_source(data["id_test"], base, "data.id_test"),
            ood={str(k): _source(v, base, f"data.ood.{k}") for k, v in data["ood"].items()},
            format=data.get("format", "csv"),
            num_classes=data.get("num_classes"),
            train_size=int(data.get("train_size", 500)),
            eval_id=int(data.get("eval_id", 5000)),
            eval_ood=int(data.get("eval_ood", 5000)),
            split_ratio=float(data.get("split_ratio", 0.8)),
            hidden_dims=tuple(int(h) for h in arch.get("hidden_dims", (64,))),
            beta=float(arch.get("beta", 1.0)),
            prior=prior,
            train=dict(raw.get("train", {})),
            num_samples=int(sampler.get("num_samples", 500)),
            share_samples_across_inputs=bool(sampler.get("share_samples_across_inputs", True)),
            methods=tuple(ScoreMethod.parse(str(m)) for m in methods),
            k=int(scores.get("k", 5)),
            exclude_self=bool(scores.get("exclude_self", False)),
            seed=int(raw.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(raw, path.parent)


def build_prior(spec: Dict[str, Any], arch: NetworkArch):
    """Prior plus an optional posterior initialisation (MOPED)."""
    kind = spec.get("type", "scale_mixture")
    try:
        if kind == "scale_mixture":
            return ScaleMixturePrior(spec.get("pi", 0.75), spec.get("sigma1", 0.1), spec.get("sigma2", 0.5)), None
        if kind == "diagonal_gaussian":
            n = arch.num_weights
            return DiagonalGaussianPrior(np.broadcast_to(spec.get("mean", 0.0), n),
                                         np.broadcast_to(spec.get("std", 1.0), n)), None
        if kind == "moped":
            if not spec.get("pretrained"):
                raise ConfigError("moped prior needs a 'pretrained' weight file")
            pre = PointWeights(load_weights(spec["pretrained"]), arch)
            return moped_prior_from_pretrained(pre, spec.get("delta", 0.01), spec.get("floor", 1e-6))
    except InvalidArgumentError as exc:
        raise ConfigError(f"prior: {exc}") from None
    raise ConfigError(f"unknown prior type {kind!r}")


# -- pipeline ----------------------------------------------------------------

@dataclass
class EvalSet:
    id_inputs: np.ndarray
    id_ids: np.ndarray
    ood_inputs: Dict[str, np.ndarray]
    ood_ids: Dict[str, np.ndarray]


@dataclass
class ExperimentRecord:
    config: ExperimentConfig
    arch: Optional[NetworkArch] = None
    train_ids: Optional[np.ndarray] = None
    posterior: Optional[VariationalPosterior] = None
    mle_weights: Optional[PointWeights] = None
    bnn_history: List[EpochRecord] = field(default_factory=list)
    mle_history: List[EpochRecord] = field(default_factory=list)
    id_scores: Dict[ScoreMethod, np.ndarray] = field(default_factory=dict)
    ood_scores: Dict[str, Dict[ScoreMethod, np.ndarray]] = field(default_factory=dict)
    eval_set: Optional[EvalSet] = None
    reports: Dict[Tuple[ScoreMethod, str], MetricReport] = field(default_factory=dict)
    summary: Dict[ScoreMethod, Dict[str, Tuple[float, float]]] = field(default_factory=dict)
    stage: str = "init"
    error: Optional[str] = None


def _load(src: DataSource, cfg: ExperimentConfig, num_classes=None) -> LabeledDataset:
    try:
        return load_dataset(src.path, cfg.format, num_classes, src.labels)
    except OSError as exc:
        raise DataError(f"{src.path}: {exc}") from None
    except InvalidArgumentError as exc:
        raise DataError(f"{src.path}: {exc}") from None


def _same_file(a: DataSource, b: DataSource) -> bool:
    return os.path.realpath(a.path) == os.path.realpath(b.path)


def _sample_rows(pool: np.ndarray, n: int, seed: int, what: str) -> np.ndarray:
    if n > pool.size:
        logger.warning("%s: requested %d samples, only %d available", what, n, pool.size)
        n = pool.size
    return np.sort(np.random.default_rng(seed).choice(pool, size=n, replace=False))


def assemble_eval_set(cfg: ExperimentConfig, id_test: LabeledDataset, ood_sets: Dict[str, LabeledDataset],
                      exclude_ids=()) -> EvalSet:
    """Sample ID negatives and OOD positives.

    Rows listed in ``exclude_ids`` (training rows drawn from the same file) never enter
    the ID pool. An OOD source that is the ID test file itself is drawn from the half
    of the ID pool not used for negatives.
    """
    pool = np.setdiff1d(np.arange(len(id_test)), np.asarray(exclude_ids, dtype=np.int64))
    if pool.size == 0:
        raise DataError("no ID test rows left after removing training rows")
    self_ood = [name for name, src in cfg.ood.items() if _same_file(src, cfg.id_test)]
    ood_pool = None
    if self_ood:
        perm = np.random.default_rng(derive_seed(cfg.seed, "eval:self_split")).permutation(pool)
        half = perm.size // 2
        pool, ood_pool = np.sort(perm[:half]), np.sort(perm[half:])
    id_rows = _sample_rows(pool, cfg.eval_id, derive_seed(cfg.seed, "eval:id"), "ID test")
    ood_inputs, ood_ids = {}, {}
    for name, data in ood_sets.items():
        rows_pool = ood_pool if name in self_ood else np.arange(len(data))
        rows = _sample_rows(rows_pool, cfg.eval_ood, derive_seed(cfg.seed, f"eval:ood:{name}"), f"OOD {name}")
        ood_inputs[name] = data.inputs[rows]
        ood_ids[name] = data.ids[rows]
    return EvalSet(id_test.inputs[id_rows], id_test.ids[id_rows], ood_inputs, ood_ids)


def prepare_stage(cfg: ExperimentConfig, record: ExperimentRecord) -> Tuple[LabeledDataset, LabeledDataset]:
    """Load the ID training file, subsample it and split off validation rows."""
    record.stage = "load"
    full = _load(cfg.id_train, cfg, cfg.num_classes)
    num_classes = cfg.num_classes or int(full.labels.max()) + 1
    record.stage = "subsample"
    try:
        subset = balanced_subsample(full, cfg.train_size, derive_seed(cfg.seed, "subsample"))
        train, val = split_train_val(subset, cfg.split_ratio, derive_seed(cfg.seed, "split"))
    except InvalidArgumentError as exc:
        raise DataError(str(exc)) from None
    record.train_ids = subset.ids
    try:
        arch = NetworkArch(full.dim, cfg.hidden_dims, num_classes, cfg.beta)
    except InvalidArgumentError as exc:
        raise ConfigError(f"arch: {exc}") from None
    record.arch = arch
    return train, val


def train_stage(cfg: ExperimentConfig, record: ExperimentRecord, train: LabeledDataset,
                val: LabeledDataset) -> None:
    arch = record.arch
    prior, init = build_prior(cfg.prior, arch)
    record.stage = "train_mle"
    record.mle_weights = train_mle(train, val, arch, cfg.train_config(derive_seed(cfg.seed, "train_mle")),
                                   history=record.mle_history)
    record.stage = "train_bnn"
    record.posterior = train_bnn(train, val, arch, prior, cfg.train_config(derive_seed(cfg.seed, "train_bnn")),
                                 init=init, history=record.bnn_history)


def build_artifacts(cfg: ExperimentConfig, record: ExperimentRecord, train: LabeledDataset) -> ModelArtifacts:
    methods = cfg.methods
    samples = None
    if any(m.bayesian for m in methods):
        samples = draw_weight_samples(
            record.posterior, SamplerConfig(cfg.num_samples, derive_seed(cfg.seed, "sampler"),
                                            cfg.share_samples_across_inputs))
    det_index = elv_index = None
    c = record.arch.num_classes
    if ScoreMethod.KNN_DET in methods or ScoreMethod.KNNPLUS_DET in methods:
        det_index = LogitIndex(deterministic_logits(record.mle_weights, train.inputs), train.labels, c)
    if ScoreMethod.KNN_ELV in methods or ScoreMethod.KNNPLUS_ELV in methods:
        elv_index = LogitIndex(bayesian_summaries(samples, train.inputs)["elv"], train.labels, c)
    return ModelArtifacts(record.mle_weights, samples, det_index, elv_index, cfg.k, cfg.exclude_self)


def score_stage(cfg: ExperimentConfig, record: ExperimentRecord, train: LabeledDataset) -> None:
    record.stage = "load_eval"
    id_test = _load(cfg.id_test, cfg, None)
    ood_sets = {name: _load(src, cfg, None) for name, src in cfg.ood.items()}
    for name, d in [("id_test", id_test), *ood_sets.items()]:
        if d.dim != record.arch.input_dim:
            raise DataError(f"{name}: dimension {d.dim} != training dimension {record.arch.input_dim}")
    exclude = record.train_ids if _same_file(cfg.id_test, cfg.id_train) else ()
    record.eval_set = es = assemble_eval_set(cfg, id_test, ood_sets, exclude)
    record.stage = "score"
    artifacts = build_artifacts(cfg, record, train)
    if not cfg.share_samples_across_inputs:
        record.id_scores = _score_unshared(cfg, record, artifacts, es.id_inputs, es.id_ids, "id")
        record.ood_scores = {name: _score_unshared(cfg, record, artifacts, x, es.ood_ids[name], f"ood:{name}")
                             for name, x in es.ood_inputs.items()}
    else:
        record.id_scores = score_all(cfg.methods, artifacts, es.id_inputs)
        record.ood_scores = {name: score_all(cfg.methods, artifacts, x) for name, x in es.ood_inputs.items()}


def _score_unshared(cfg, record, artifacts: ModelArtifacts, inputs, ids, tag) -> Dict[ScoreMethod, np.ndarray]:
    """Bayesian scores with a fresh set of posterior draws per input (reference indices stay shared)."""
    det = [m for m in cfg.methods if not m.bayesian]
    bay = [m for m in cfg.methods if m.bayesian]
    out = score_all(det, artifacts, inputs) if det else {}
    if bay:
        rows = []
        for x, i in zip(inputs, ids):
            seed = derive_seed(cfg.seed, f"sampler:{tag}:{int(i)}")
            own = draw_weight_samples(record.posterior, SamplerConfig(cfg.num_samples, seed, False))
            local = ModelArtifacts(artifacts.point_weights, own, artifacts.det_index, artifacts.elv_index,
                                   artifacts.k, artifacts.exclude_self)
            rows.append(score_all(bay, local, x[None, :]))
        for m in bay:
            out[m] = np.concatenate([r[m] for r in rows])
    return {m: out[m] for m in cfg.methods}


def metrics_stage(cfg: ExperimentConfig, record: ExperimentRecord) -> None:
    record.stage = "metrics"
    for m in cfg.methods:
        per = []
        for name in cfg.ood:
            rep = evaluate((np.r_[record.id_scores[m], record.ood_scores[name][m]],
                            np.r_[np.zeros(record.id_scores[m].size, bool),
                                  np.ones(record.ood_scores[name][m].size, bool)]))
            record.reports[(m, name)] = rep
            per.append(rep)
        record.summary[m] = summarize(per)
    record.stage = "done"


def run_experiment(cfg: ExperimentConfig) -> ExperimentRecord:
    """Full pipeline; on failure the partial record is attached to the raised error as ``record``."""
    record = ExperimentRecord(cfg)
    try:
        train, val = prepare_stage(cfg, record)
        train_stage(cfg, record, train, val)
        score_stage(cfg, record, train)
        metrics_stage(cfg, record)
    except Exception as exc:
        record.error = f"{record.stage}: {exc}"
        exc.record = record
        raise
    return record


# -- reports -----------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def _write(path: Path, text: str, manifest: List[Path]) -> None:
    path.write_text(text)
    manifest.append(path)


def _history_csv(history: List[EpochRecord]) -> str:
    lines = ["epoch,train_loss,kl_term,val_accuracy,checkpoint_flag"]
    for r in history:
        lines.append(f"{r.epoch},{_fmt(r.train_loss)},{_fmt(r.kl_term)},{_fmt(r.val_accuracy)},{int(r.checkpoint)}")
    return "\n".join(lines) + "\n"


def metrics_csv(reports: Dict[Tuple[ScoreMethod, str], MetricReport], targets=TPR_TARGETS) -> str:
    cols = ["method", "dataset", "auc_roc"] + [f"fpr{int(round(t * 100))}" for t in targets] + ["n_id", "n_ood"]
    lines = [",".join(cols)]
    for (m, name), r in reports.items():
        vals = [_fmt(r.auc_roc)] + [_fmt(r.fpr_at[t]) for t in targets] + [str(r.n_neg), str(r.n_pos)]
        lines.append(",".join([m.value, name] + vals))
    return "\n".join(lines) + "\n"


def summary_csv(summary: Dict[ScoreMethod, Dict[str, Tuple[float, float]]]) -> str:
    if not summary:
        return "method\n"
    keys = list(next(iter(summary.values())))
    lines = [",".join(["method"] + [f"{k}_{s}" for k in keys for s in ("mean", "std")])]
    for m, stats in summary.items():
        lines.append(",".join([m.value] + [_fmt(v) for k in keys for v in stats[k]]))
    return "\n".join(lines) + "\n"


def histogram_csv(record: ExperimentRecord, bins: int = HIST_BINS) -> str:
    """Per-method score histograms for the ID split and each OOD split on shared bin edges.

    ``density`` is the fraction of the split's scores falling in the bin.
    """
    lines = ["method,split,bin,bin_left,bin_right,density"]
    for m in record.config.methods:
        if m not in record.id_scores:
            continue
        splits = {"id": record.id_scores[m]}
        splits.update({f"ood:{n}": s[m] for n, s in record.ood_scores.items()})
        allv = np.concatenate(list(splits.values()))
        lo, hi = float(allv.min()), float(allv.max())
        if hi <= lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, bins + 1)
        for split, vals in splits.items():
            counts, _ = np.histogram(vals, bins=edges)
            frac = counts / vals.size
            for b in range(bins):
                lines.append(f"{m.value},{split},{b},{_fmt(edges[b])},{_fmt(edges[b + 1])},{_fmt(frac[b])}")
    return "\n".join(lines) + "\n"


def _scores_csv(record: ExperimentRecord, m: ScoreMethod) -> str:
    lines = ["input_id,method,score,is_ood_label"]
    es = record.eval_set
    for i, s in zip(es.id_ids, record.id_scores[m]):
        lines.append(f"id:{int(i)},{m.value},{_fmt(s)},0")
    for name, scores in record.ood_scores.items():
        for i, s in zip(es.ood_ids[name], scores[m]):
            lines.append(f"{name}:{int(i)},{m.value},{_fmt(s)},1")
    return "\n".join(lines) + "\n"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def emit_reports(record: ExperimentRecord, out_dir) -> Dict[str, str]:
    """Write every available artifact of ``record`` and a checksum manifest; returns the manifest."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise DataError(f"output directory {out} is not writable")
    files: List[Path] = []
    if record.bnn_history:
        _write(out / "train_log_bnn.csv", _history_csv(record.bnn_history), files)
    if record.mle_history:
        _write(out / "train_log_mle.csv", _history_csv(record.mle_history), files)
    if record.posterior is not None:
        save_posterior(record.posterior, out / "posterior.bin")
        files.append(out / "posterior.bin")
    if record.mle_weights is not None:
        save_weights(record.mle_weights.values, out / "mle_weights.bin")
        files.append(out / "mle_weights.bin")
    if record.arch is not None:
        meta = {"arch": asdict(record.arch), "stage": record.stage, "error": record.error,
                "train_ids": [int(i) for i in record.train_ids]}
        _write(out / "model.json", json.dumps(meta, indent=2, sort_keys=True) + "\n", files)
    if record.ood_scores:
        for m in record.config.methods:
            _write(out / f"scores_{m.value}.csv", _scores_csv(record, m), files)
        _write(out / "score_histogram.csv", histogram_csv(record), files)
    if record.reports:
        _write(out / "metrics.csv", metrics_csv(record.reports), files)
        _write(out / "summary.csv", summary_csv(record.summary), files)
    manifest = {p.name: sha256_file(p) for p in files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_trained(out_dir) -> Tuple[NetworkArch, VariationalPosterior, PointWeights, np.ndarray]:
    """Reload models written by :func:`emit_reports` after the training stage."""
    out = Path(out_dir)
    try:
        meta = json.loads((out / "model.json").read_text())
        a = meta["arch"]
        arch = NetworkArch(a["input_dim"], tuple(a["hidden_dims"]), a["num_classes"], a["beta"])
        posterior = load_posterior(out / "posterior.bin", arch)
        mle = PointWeights(load_weights(out / "mle_weights.bin"), arch)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"{out}: no trained models found ({exc})") from None
    return arch, posterior, mle, np.asarray(meta["train_ids"], dtype=np.int64)
