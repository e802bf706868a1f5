"""Synthetic desk-scale benchmark: 2-D Gaussian blobs with a translated copy as OOD."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .data import make_blobs, square_centers, write_csv

BLOB_STD = 1.0
BLOB_RADIUS = 3.0
SHIFT_SIGMAS = 4.0
SHIFT_DIRECTION = (1.0, 0.0)


def blob_benchmark(seed: int = 0, num_classes: int = 4, n_train: int = 4000, n_test: int = 10000,
                   n_ood: int = 10000, shift_sigmas: float = SHIFT_SIGMAS):
    """ID train/test pools and an OOD pool whose blobs are translated by ``shift_sigmas`` std."""
    centers = square_centers(num_classes, BLOB_RADIUS)
    shift = shift_sigmas * BLOB_STD * np.asarray(SHIFT_DIRECTION)
    rng = np.random.default_rng(seed)
    s_train, s_test, s_ood = (int(v) for v in rng.integers(2 ** 31, size=3))
    return (make_blobs(n_train, centers, BLOB_STD, s_train),
            make_blobs(n_test, centers, BLOB_STD, s_test),
            make_blobs(n_ood, centers + shift, BLOB_STD, s_ood))


def write_blob_benchmark(out_dir, seed: int = 0, self_ood: bool = False, **config_overrides):
    """Write the blob CSVs and a ready-to-run experiment config; returns the config path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test, ood = blob_benchmark(seed)
    write_csv(train, out / "id_train.csv")
    write_csv(test, out / "id_test.csv")
    write_csv(ood, out / "ood_shifted.csv")
    config = {
        "seed": seed,
        "arch": {"hidden_dims": [64], "beta": 1.0},
        "prior": {"type": "scale_mixture", "pi": 0.75, "sigma1": 0.1, "sigma2": 0.5},
        "train": {"epochs": 200, "batch_size": 256, "learning_rate": 0.001, "kl_weight": 0.1},
        "sampler": {"num_samples": 500},
        "scores": {"k": 5},
        "data": {
            "format": "csv",
            "id_train": "id_train.csv",
            "id_test": "id_test.csv",
            "ood": {"id_test_copy": "id_test.csv"} if self_ood else {"shifted": "ood_shifted.csv"},
            "train_size": 500,
            "eval_id": 5000,
            "eval_ood": 5000,
        },
    }
    for section, values in config_overrides.items():
        if isinstance(values, dict):
            config.setdefault(section, {}).update(values)
        else:
            config[section] = values
    path = out / "config.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=True))
    return path
