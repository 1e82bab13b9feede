#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Test builders shared by the test modules

Small datasets, bundles and config files that keep every test fast.
"""

import sys
from pathlib import Path

import numpy as np
import yaml

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from xvfl.tools.dataset import SplitSpec, build_vertical_dataset, generate_synthetic, minmax_normalize
from xvfl.tools.losses import LossConfig, evaluate_objective
from xvfl.tools.models import ModelConfig, build_bundle


def create_test_dataset(
    n=40,
    m=6,
    n_classes=3,
    k=2,
    overlap=0.5,
    missing=0.5,
    seed=0,
    imbalance=None,
    fractions=None
):
    """Scaled synthetic blobs split across k clients"""
    features, labels = generate_synthetic(n, m, n_classes, seed)
    features = minmax_normalize(features)[0]
    split = SplitSpec(overlap, missing, tuple(imbalance) if imbalance else None, seed)
    return build_vertical_dataset(features, labels, k, split, n_classes, fractions)


def create_test_bundle(dataset, seed=0, embed_dim=4, hidden=(5,)):
    config = ModelConfig(embed_dim=embed_dim, bottom_hidden=tuple(hidden), top_hidden=tuple(hidden))
    return build_bundle(dataset.client_dims, dataset.n_classes, config, seed)


def create_kink_safe_bundle(dataset, loss_config, margin=1e-3, embed_dim=3, hidden=(3,), seeds=range(200)):
    """
    First bundle whose hidden pre-activations all sit at least margin away
    from the ReLU kink on this batch, so central differences are valid
    """
    for seed in seeds:
        bundle = create_test_bundle(dataset, seed=seed, embed_dim=embed_dim, hidden=hidden)
        breakdown = evaluate_objective(bundle, dataset, loss_config)
        if breakdown.kink_margin > margin:
            return bundle
    raise AssertionError("No kink-safe initialisation found")


def loss_at(bundle, dataset, loss_config, **kwargs):
    """Scalar loss as a function of the flat θ"""
    scratch = bundle.copy()

    def value(theta):
        scratch.load_flat(np.asarray(theta, dtype=np.float64))
        return evaluate_objective(scratch, dataset, loss_config, **kwargs).loss

    return value


SMALL_CONFIG = {
    "data": {
        "n_samples": 80,
        "n_features": 6,
        "n_classes": 3,
        "n_clients": 2,
        "overlap_ratio": 0.5,
        "missing_rate": 0.5,
    },
    "model": {"embed_dim": 4, "bottom_hidden": [6], "top_hidden": [6]},
    "loss": {"lambda1": 0.01, "lambda2": 0.01, "xcom_self_input": True},
    "optimizer": {"kind": "sgd", "eta": 0.05, "steps": 4, "batch_size": 10},
    "sweep": {
        "missing_grid": [0.0, 0.5],
        "overlap_grid": [0.4, 0.8],
        "seeds": [0],
        "fixed_missing_rate": 0.5,
        "gap_missing_rate": 0.5,
    },
    "convergence": {"t_exponents": [4, 5], "seeds": 1},
    "runtime": {"seed": 0, "threads": 1, "log_level": "WARNING"},
}


def create_test_config(directory, overrides=None, name="config.yaml"):
    """Write SMALL_CONFIG (section-wise updated by overrides) and return its path"""
    payload = {section: dict(values) for section, values in SMALL_CONFIG.items()}
    for section, values in (overrides or {}).items():
        payload.setdefault(section, {}).update(values)
    path = Path(directory) / name
    path.write_text(yaml.safe_dump(payload, sort_keys=True), encoding="utf-8")
    return str(path)


def create_test_run_config(overrides=None):
    """RunConfig built from SMALL_CONFIG without touching the filesystem"""
    from xvfl.config import RunConfig, _apply_section

    config = RunConfig()
    payload = {section: dict(values) for section, values in SMALL_CONFIG.items()}
    for section, values in (overrides or {}).items():
        payload.setdefault(section, {}).update(values)
    for section, values in payload.items():
        _apply_section(config, section, values)
    return config.validate()


UNIT_LOSS = LossConfig(lambda1=1.0, lambda2=1.0)
