#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Experiment Runner

Missing-rate, overlap and imbalance sweeps over X-VFL and the two baselines,
the convergence-rate study, λ grid search, the completion ablation, and the
report writer. Sweep results use one long-format table:

    sweep, method, seed, n_clients, missing_rate, overlap_ratio, imbalance,
    mode, client, accuracy, config_hash

mode is 'independent' (client = its index) or 'collaborative' (client = -1).
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..config import SWEEP, RunConfig, config_hash as compute_config_hash
from ..errors import ConfigError, DivergenceError, ValidationError
from .base_tool import BaseTool
from .baselines import baseline_train
from .dataset import (
    SplitSpec,
    TabularEncoder,
    VerticalDataset,
    build_vertical_dataset,
    generate_synthetic,
    minmax_normalize,
    read_frame,
    train_test_split,
)
from .inference import (
    evaluate_accuracy,
    infer_collaborative,
    infer_independent_with_missing,
    infer_zero_fill,
)
from .losses import LossConfig
from .models import ModelBundle, ModelConfig, build_bundle
from .objectives import NoisyQuadratic, StochasticObjective, XVFLObjective
from .optim import RngStreams, OptimizerSpec, PageParams, estimate_constants, run_optimizer, theorem_defaults
from .parallel_executor import ParallelExecutor, SweepTask
from .protocol import resolve_optimizer, train

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = [
    "sweep", "method", "seed", "n_clients", "missing_rate", "overlap_ratio",
    "imbalance", "mode", "client", "accuracy", "config_hash",
]
GROUP_COLUMNS = ["sweep", "method", "n_clients", "missing_rate", "overlap_ratio", "imbalance", "mode", "client"]
CONVERGENCE_COLUMNS = ["optimizer", "T", "seed", "avg_grad_norm_sq", "grad_evals", "diverged", "config_hash"]

# λ₁ / λ₂ search ranges per dataset family
LAMBDA_GRIDS: Dict[str, Dict[str, Tuple[float, ...]]] = {
    "cifar10": {
        "lambda1": (0.01, 0.02, 0.05, 0.1, 0.2, 0.5),
        "lambda2": (1e-5, 2e-5, 5e-5, 1e-4, 2e-4, 5e-4),
    },
    "tinyimagenet": {
        "lambda1": (1.0, 2.0, 5.0, 10.0, 20.0),
        "lambda2": (5e-4, 1e-3, 2e-3, 5e-3),
    },
    "utkface": {
        "lambda1": (1.0, 2.0, 5.0, 10.0, 20.0),
        "lambda2": (5e-4, 1e-3, 2e-3, 5e-3),
    },
    "mimic3": {
        "lambda1": (5e-4, 1e-3, 2e-3, 5e-3, 1e-2),
        "lambda2": (0.02, 0.05, 0.1),
    },
    "bank": {
        "lambda1": (1e-4, 2e-4, 5e-4, 1e-3),
        "lambda2": (5e-5, 1e-4, 2e-4, 5e-4),
    },
    "avazu": {
        "lambda1": (1e-4, 2e-4, 5e-4, 1e-3),
        "lambda2": (1e-5, 2e-5, 5e-5, 1e-4, 2e-4),
    },
}

MULTI_CLIENT_MISSING_GRID = tuple(SWEEP.MULTI_CLIENT_MISSING_GRID)


@dataclass
class SweepSpec:
    """Grid, methods and seeds of one sweep, plus the run config it came from"""
    missing_grid: List[float]
    overlap_grid: List[float]
    imbalance_fractions: List[float]
    n_clients: int
    optimizer_kind: str
    seeds: List[int]
    methods: List[str]
    fixed_missing_rate: float
    gap_missing_rate: float
    run_config: RunConfig = field(default_factory=RunConfig)
    config_hash: str = ""
    threads: int = 1

    @classmethod
    def from_config(cls, config: RunConfig) -> "SweepSpec":
        config.validate()
        return cls(
            missing_grid=config.missing_grid(),
            overlap_grid=[float(v) for v in config.sweep.overlap_grid],
            imbalance_fractions=[float(v) for v in config.sweep.imbalance_fractions],
            n_clients=config.data.n_clients,
            optimizer_kind=config.optimizer.kind,
            seeds=list(config.sweep.seeds),
            methods=list(config.sweep.methods),
            fixed_missing_rate=config.sweep.fixed_missing_rate,
            gap_missing_rate=config.gap_missing_rate(),
            run_config=config,
            config_hash=compute_config_hash(config),
            threads=config.runtime.threads,
        )

    def validate(self) -> "SweepSpec":
        if not self.seeds:
            raise ConfigError("A sweep needs at least one seed")
        unknown = set(self.methods) - set(SWEEP.METHODS)
        if unknown:
            raise ConfigError(f"Unknown methods: {sorted(unknown)}")
        if self.n_clients != self.run_config.data.n_clients:
            raise ConfigError("SweepSpec.n_clients disagrees with the data section")
        return self

    @property
    def model_config(self) -> ModelConfig:
        model = self.run_config.model
        return ModelConfig(
            embed_dim=model.embed_dim,
            bottom_hidden=tuple(model.bottom_hidden),
            top_hidden=tuple(model.top_hidden),
            xcom_hidden=tuple(model.xcom_hidden) if model.xcom_hidden is not None else None,
        )

    @property
    def loss_config(self) -> LossConfig:
        loss = self.run_config.loss
        return LossConfig(lambda1=loss.lambda1, lambda2=loss.lambda2, xcom_self_input=loss.xcom_self_input)


# ---------------------------------------------------------------------------
# Data and training for one cell
# ---------------------------------------------------------------------------

def load_features(config: RunConfig, seed: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]:
    """
    Train / test feature matrices scaled with training statistics

    Returns:
        (train_x, train_y, test_x, test_y, n_classes)
    """
    data = config.data
    if data.source == "synthetic":
        features, labels = generate_synthetic(data.n_samples, data.n_features, data.n_classes, seed, data.separation)
        train_x, train_y, test_x, test_y = train_test_split(features, labels, data.test_fraction, seed)
        train_x, test_x = minmax_normalize(train_x, test_x)
        return train_x, train_y, test_x, test_y, data.n_classes

    frame = read_frame(data.csv_path, data.label_column)
    rows = np.arange(len(frame))
    train_rows, _, test_rows, _ = train_test_split(rows, rows, data.test_fraction, seed)
    train_frame, test_frame = frame.iloc[np.sort(train_rows)], frame.iloc[np.sort(test_rows)]
    continuous = [c for c in frame.columns if c != data.label_column and c not in data.categorical_columns]
    encoder = TabularEncoder(continuous, list(data.categorical_columns), data.label_column).fit(train_frame)
    train_x, train_y = encoder.transform(train_frame)
    test_x, test_y = encoder.transform(test_frame)
    # Test rows outside the training range are clipped into [0, 1]
    test_x = np.clip(test_x, 0.0, 1.0)
    return train_x, train_y, test_x, test_y, len(encoder.classes)


def prepare_cell(
    config: RunConfig,
    seed: int,
    overlap_ratio: float,
    missing_rate: float,
    imbalance: Optional[Sequence[float]] = None
) -> Tuple[VerticalDataset, VerticalDataset]:
    """Vertical train and test pools sharing one alignment / masking regime"""
    train_x, train_y, test_x, test_y, n_classes = load_features(config, seed)
    k = config.data.n_clients
    fractions = config.data.feature_fractions
    imbalance = tuple(imbalance) if imbalance is not None else None
    train_split = SplitSpec(overlap_ratio, missing_rate, imbalance, seed)
    test_split = SplitSpec(overlap_ratio, missing_rate, imbalance, seed + 7919)
    train_ds = build_vertical_dataset(train_x, train_y, k, train_split, n_classes, fractions)
    test_ds = build_vertical_dataset(test_x, test_y, k, test_split, n_classes, fractions)
    return train_ds, test_ds


def baseline_optimizer(config: RunConfig) -> OptimizerSpec:
    section = dataclasses.replace(config.optimizer, auto=False)
    return resolve_optimizer(section, config.batch_size())


def train_xvfl(
    config: RunConfig,
    train_ds: VerticalDataset,
    seed: int,
    loss_config: Optional[LossConfig] = None,
    model_config: Optional[ModelConfig] = None
) -> ModelBundle:
    model_config = model_config or SweepSpec.from_config(config).model_config
    loss = config.loss
    loss_config = loss_config or LossConfig(loss.lambda1, loss.lambda2, xcom_self_input=loss.xcom_self_input)
    bundle = build_bundle(train_ds.client_dims, train_ds.n_classes, model_config, seed)
    objective = XVFLObjective(train_ds, bundle, loss_config) if config.optimizer.auto else None
    optimizer = resolve_optimizer(config.optimizer, config.batch_size(), objective, seed)
    trained, _ = train(train_ds, bundle, loss_config, optimizer, config.optimizer.steps, seed)
    return trained


def evaluate_method(model, method: str, test_ds: VerticalDataset) -> Dict[str, Any]:
    """
    Independent accuracy per client and collaborative accuracy on the test pool

    X-VFL clients complete their own masked positions (mode 2, which equals
    mode 1 on unmasked rows); baselines predict on the sentinel-filled
    blocks.
    """
    labels = test_ds.labels
    independent = []
    for i in range(test_ds.k):
        if method == "xvfl":
            predictions = infer_independent_with_missing(model, i, test_ds.blocks[i], test_ds.missing_masks[i])
        else:
            predictions = model.predict_independent(i, test_ds.blocks[i])
        independent.append(evaluate_accuracy(predictions, labels))
    if method == "xvfl":
        collaborative = infer_collaborative(model, test_ds.blocks, test_ds.missing_masks)
    else:
        collaborative = model.predict_collaborative(test_ds.blocks)
    return {
        "independent": independent,
        "collaborative": evaluate_accuracy(collaborative, labels),
    }


def run_cell(
    config: RunConfig,
    sweep: str,
    methods: Sequence[str],
    seed: int,
    overlap_ratio: float,
    missing_rate: float,
    imbalance: Optional[Sequence[float]] = None,
    config_hash: str = ""
) -> List[Dict[str, Any]]:
    """Train every method on one shared split and return long-format rows"""
    train_ds, test_ds = prepare_cell(config, seed, overlap_ratio, missing_rate, imbalance)
    model_config = SweepSpec.from_config(config).model_config
    rows = []
    for method in methods:
        if method == "xvfl":
            model = train_xvfl(config, train_ds, seed, model_config=model_config)
        else:
            model = baseline_train(method, train_ds, model_config, baseline_optimizer(config), config.optimizer.steps, seed)
        metrics = evaluate_method(model, method, test_ds)
        base = {
            "sweep": sweep,
            "method": method,
            "seed": seed,
            "n_clients": train_ds.k,
            "missing_rate": missing_rate,
            "overlap_ratio": overlap_ratio,
            "imbalance": "/".join(f"{f:g}" for f in imbalance) if imbalance is not None else "",
            "config_hash": config_hash,
        }
        for i, accuracy in enumerate(metrics["independent"]):
            rows.append({**base, "mode": "independent", "client": i, "accuracy": accuracy})
        rows.append({**base, "mode": "collaborative", "client": -1, "accuracy": metrics["collaborative"]})
    logger.info(f"{sweep} cell seed={seed} overlap={overlap_ratio} missing={missing_rate} done")
    return rows


def _run_cells(spec: SweepSpec, sweep: str, cells: List[Dict[str, Any]]) -> pd.DataFrame:
    tasks = []
    for cell in cells:
        key = (cell["seed"], cell["overlap_ratio"], cell["missing_rate"])
        tasks.append(SweepTask(
            task_id=f"{sweep}-s{cell['seed']}-o{cell['overlap_ratio']:g}-m{cell['missing_rate']:g}",
            kind=sweep,
            key=key,
            fn=run_cell,
            kwargs=dict(
                config=spec.run_config,
                sweep=sweep,
                methods=spec.methods,
                config_hash=spec.config_hash,
                **cell,
            ),
        ))
    batch = ParallelExecutor(spec.threads).run(tasks)
    error = batch.first_error()
    if error is not None:
        raise error
    rows = [row for result in batch.results for row in result.result]
    return sort_table(pd.DataFrame(rows, columns=SWEEP_COLUMNS))


def sort_table(table: pd.DataFrame) -> pd.DataFrame:
    keys = ["method", "missing_rate", "overlap_ratio", "imbalance", "seed", "mode", "client"]
    return table.sort_values(keys, kind="mergesort").reset_index(drop=True)[SWEEP_COLUMNS]


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def run_missing_sweep(spec: SweepSpec) -> pd.DataFrame:
    """Every method at every missing rate, overlap fixed at data.overlap_ratio"""
    spec.validate()
    overlap = spec.run_config.data.overlap_ratio
    cells = [
        {"seed": seed, "overlap_ratio": overlap, "missing_rate": rate}
        for rate in spec.missing_grid for seed in spec.seeds
    ]
    return _run_cells(spec, "missing", cells)


def run_overlap_sweep(spec: SweepSpec) -> pd.DataFrame:
    """Every method at every overlap ratio, missing rate fixed"""
    spec.validate()
    cells = [
        {"seed": seed, "overlap_ratio": overlap, "missing_rate": spec.fixed_missing_rate}
        for overlap in spec.overlap_grid for seed in spec.seeds
    ]
    return _run_cells(spec, "overlap", cells)


def run_imbalance(spec: SweepSpec) -> pd.DataFrame:
    """Per-client independent accuracy under uneven sample ownership"""
    spec.validate()
    if len(spec.imbalance_fractions) != spec.n_clients:
        raise ConfigError(f"Need {spec.n_clients} imbalance fractions, got {spec.imbalance_fractions}")
    overlap = spec.run_config.data.overlap_ratio
    cells = [
        {
            "seed": seed,
            "overlap_ratio": overlap,
            "missing_rate": spec.fixed_missing_rate,
            "imbalance": tuple(spec.imbalance_fractions),
        }
        for seed in spec.seeds
    ]
    return _run_cells(spec, "imbalance", cells)


def summarize(table: pd.DataFrame) -> pd.DataFrame:
    """Mean / population std / count of accuracy per grid point"""
    if table.empty:
        raise ValidationError("Cannot summarize an empty results table")
    grouped = table.groupby(GROUP_COLUMNS, sort=True)["accuracy"]
    summary = grouped.agg(mean="mean", std=lambda x: float(np.std(x, ddof=0)), n="count").reset_index()
    return summary


def imbalance_gaps(table: pd.DataFrame) -> pd.DataFrame:
    """Per method and seed: client 0 minus client 1 independent accuracy"""
    independent = table[table["mode"] == "independent"]
    pivot = independent.pivot_table(index=["method", "seed"], columns="client", values="accuracy")
    gaps = (pivot[0] - pivot[1]).rename("gap").reset_index()
    return gaps


def gap_summary(table: pd.DataFrame, missing_rate: float) -> pd.DataFrame:
    """
    Independent-vs-collaborative gap per method at one missing rate

    gap = collaborative − mean independent accuracy, averaged over seeds.
    """
    cell = table[np.isclose(table["missing_rate"], missing_rate)]
    if cell.empty:
        raise ValidationError(f"No rows at missing rate {missing_rate}")
    independent = cell[cell["mode"] == "independent"].groupby(["method", "seed"])["accuracy"].mean()
    collaborative = cell[cell["mode"] == "collaborative"].groupby(["method", "seed"])["accuracy"].mean()
    per_seed = pd.DataFrame({"independent": independent, "collaborative": collaborative})
    per_seed["gap"] = per_seed["collaborative"] - per_seed["independent"]
    return per_seed.groupby("method")[["independent", "collaborative", "gap"]].mean().reset_index()


# ---------------------------------------------------------------------------
# Convergence study
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    rows: pd.DataFrame
    slopes: Dict[str, float]
    evaluations_to_target: Dict[str, Dict[str, Any]]
    target_eps_sq: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "slopes": self.slopes,
            "evaluations_to_target": self.evaluations_to_target,
            "target_eps_sq": self.target_eps_sq,
        }


def fit_loglog_slope(ts: Sequence[float], values: Sequence[float]) -> Tuple[float, float]:
    """Least-squares fit of log v = intercept + slope·log T; returns (slope, intercept)"""
    ts = np.asarray(ts, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    keep = np.isfinite(values) & (values > 0)
    if keep.sum() < 2:
        raise ValidationError("A slope needs at least two finite positive points")
    slope, intercept = np.polyfit(np.log(ts[keep]), np.log(values[keep]), 1)
    return float(slope), float(intercept)


def evaluations_to_target(means: pd.DataFrame, target: float, slope: float, intercept: float) -> Dict[str, Any]:
    """
    Stochastic-gradient evaluations needed for (1/T)Σ‖∇L‖² ≤ target

    Uses the first grid T that meets the target; otherwise extrapolates T
    from the fitted power law and scales the per-step evaluation rate.
    """
    means = means.sort_values("T")
    hit = means[means["avg_grad_norm_sq"] <= target]
    if not hit.empty:
        first = hit.iloc[0]
        return {"T": int(first["T"]), "grad_evals": float(first["grad_evals"]), "extrapolated": False}
    if slope >= 0:
        return {"T": None, "grad_evals": math.inf, "extrapolated": True}
    t_needed = math.exp((math.log(target) - intercept) / slope)
    last = means.iloc[-1]
    per_step = float(last["grad_evals"]) / float(last["T"])
    return {"T": t_needed, "grad_evals": t_needed * per_step, "extrapolated": True}


def _quadratic_spec(problem: NoisyQuadratic, kind: str, T: int, page_eps: float) -> OptimizerSpec:
    sgd, page = theorem_defaults(page_eps, problem.beta, math.sqrt(problem.sigma_sq), problem.delta0, T)
    if kind == "sgd":
        return OptimizerSpec(kind="sgd", eta=sgd.eta, batch_size=1)
    return OptimizerSpec(kind="page", eta=page.eta, batch_size=1, page=page)


def _small_xvfl_problem(config: RunConfig, seed: int) -> XVFLObjective:
    data = config.data
    n = min(data.n_samples, 256)
    features, labels = generate_synthetic(n, data.n_features, data.n_classes, seed, data.separation)
    features = minmax_normalize(features)[0]
    split = SplitSpec(data.overlap_ratio, data.missing_rate, None, seed)
    dataset = build_vertical_dataset(features, labels, data.n_clients, split, data.n_classes, data.feature_fractions)
    spec = SweepSpec.from_config(config)
    bundle = build_bundle(dataset.client_dims, dataset.n_classes, spec.model_config, seed)
    return XVFLObjective(dataset, bundle, spec.loss_config)


def _xvfl_spec(objective: XVFLObjective, kind: str, T: int, page_eps: float, seed: int, batch_size: int) -> OptimizerSpec:
    estimates = estimate_constants(objective, objective.initial_theta(), RngStreams(seed), pilot_batch=batch_size)
    sgd, page = theorem_defaults(page_eps, estimates.beta_hat, estimates.sigma_hat, estimates.delta0_hat, T)
    if kind == "sgd":
        return OptimizerSpec(kind="sgd", eta=sgd.eta, batch_size=batch_size)
    if page.b > objective.n_samples:
        page = PageParams.auto(eta=page.eta, b=objective.n_samples)
    return OptimizerSpec(kind="page", eta=page.eta, batch_size=batch_size, page=page)


def convergence_cell(
    objective: StochasticObjective,
    spec: OptimizerSpec,
    T: int,
    seed: int
) -> Dict[str, Any]:
    """(1/T)Σ‖∇L(θᵗ)‖² with exact full gradients, plus the evaluation count"""
    total = [0.0]

    def on_step(t, theta, record):
        grad = objective.full_grad(theta)
        total[0] += float(grad @ grad)

    try:
        _, records = run_optimizer(objective, objective.initial_theta(), spec, T, RngStreams(seed), on_step)
    except DivergenceError as e:
        logger.error(f"{spec.kind} diverged at T={T}, seed={seed}, step {e.step}")
        return {"avg_grad_norm_sq": math.nan, "grad_evals": math.nan, "diverged": True}
    evals = sum(record.grad_evals for record in records)
    if spec.kind == "page":
        evals += spec.page.b
    return {"avg_grad_norm_sq": total[0] / T, "grad_evals": float(evals), "diverged": False}


def _convergence_task(config: RunConfig, kind: str, T: int, seed: int, config_hash: str) -> Dict[str, Any]:
    section = config.convergence
    if section.problem == "quadratic":
        problem = NoisyQuadratic(dim=section.dim, sigma_sq=section.sigma_sq, seed=seed)
        spec = _quadratic_spec(problem, kind, T, section.page_eps)
    else:
        problem = _small_xvfl_problem(config, seed)
        spec = _xvfl_spec(problem, kind, T, section.page_eps, seed, config.batch_size())
    result = convergence_cell(problem, spec, T, seed)
    return {"optimizer": kind, "T": T, "seed": seed, "config_hash": config_hash, **result}


def run_convergence_study(
    config: RunConfig,
    optimizers: Optional[Sequence[str]] = None,
    t_grid: Optional[Sequence[int]] = None,
    seeds: Optional[Sequence[int]] = None
) -> ConvergenceReport:
    """
    Stationarity decay of SGD and PAGE over a grid of horizons T

    Args:
        config: Run config; the convergence section picks the problem
        optimizers: Defaults to convergence.optimizers
        t_grid: Defaults to 2**e for e in convergence.t_exponents
        seeds: Defaults to range(convergence.seeds)

    Returns:
        ConvergenceReport with raw rows, log-log slopes and evaluations to
        reach convergence.target_eps_sq
    """
    section = config.convergence
    section.validate()
    optimizers = list(optimizers or section.optimizers)
    t_grid = list(t_grid or [2 ** e for e in section.t_exponents])
    seeds = list(seeds if seeds is not None else range(section.seeds))
    digest = compute_config_hash(config)

    tasks = [
        SweepTask(
            task_id=f"convergence-{kind}-T{T}-s{seed}",
            kind="convergence",
            key=(kind, T, seed),
            fn=_convergence_task,
            kwargs=dict(config=config, kind=kind, T=T, seed=seed, config_hash=digest),
        )
        for kind in optimizers for T in t_grid for seed in seeds
    ]
    batch = ParallelExecutor(config.runtime.threads).run(tasks)
    error = batch.first_error()
    if error is not None:
        raise error
    rows = pd.DataFrame([result.result for result in batch.results], columns=CONVERGENCE_COLUMNS)

    slopes, to_target = {}, {}
    for kind in optimizers:
        ok = rows[(rows["optimizer"] == kind) & (~rows["diverged"])]
        means = ok.groupby("T")[["avg_grad_norm_sq", "grad_evals"]].mean().reset_index()
        try:
            slope, intercept = fit_loglog_slope(means["T"], means["avg_grad_norm_sq"])
        except ValidationError:
            logger.warning(f"Not enough converged cells to fit a slope for {kind}")
            slopes[kind] = math.nan
            to_target[kind] = {"T": None, "grad_evals": math.inf, "extrapolated": True}
            continue
        slopes[kind] = slope
        to_target[kind] = evaluations_to_target(means, section.target_eps_sq, slope, intercept)
        logger.info(f"{kind}: slope {slope:.3f}, evals to target {to_target[kind]['grad_evals']:.4g}")
    return ConvergenceReport(rows, slopes, to_target, section.target_eps_sq)


# ---------------------------------------------------------------------------
# λ search and completion ablation
# ---------------------------------------------------------------------------

def search_lambdas(
    config: RunConfig,
    grid: str,
    seed: int = 0,
    validation_fraction: float = 0.2
) -> Tuple[Tuple[float, float], pd.DataFrame]:
    """
    Grid search over one declared λ grid on a validation split of the training pool

    Returns:
        ((best λ₁, best λ₂), table of every candidate's validation accuracy)
    """
    if grid not in LAMBDA_GRIDS:
        raise ConfigError(f"Unknown lambda grid {grid!r}; choose from {sorted(LAMBDA_GRIDS)}")
    train_ds, _ = prepare_cell(config, seed, config.data.overlap_ratio, config.data.missing_rate)
    rows = np.arange(train_ds.n_samples)
    fit_rows, _, val_rows, _ = train_test_split(rows, rows, validation_fraction, seed)
    fit_ds, val_ds = train_ds.subset(np.sort(fit_rows)), train_ds.subset(np.sort(val_rows))

    candidates = []
    for lambda1 in LAMBDA_GRIDS[grid]["lambda1"]:
        for lambda2 in LAMBDA_GRIDS[grid]["lambda2"]:
            loss_config = LossConfig(lambda1, lambda2, xcom_self_input=config.loss.xcom_self_input)
            bundle = train_xvfl(config, fit_ds, seed, loss_config=loss_config)
            accuracy = evaluate_method(bundle, "xvfl", val_ds)["collaborative"]
            candidates.append({"lambda1": lambda1, "lambda2": lambda2, "accuracy": accuracy})
            logger.info(f"lambda1={lambda1:g} lambda2={lambda2:g}: validation accuracy {accuracy:.4f}")
    table = pd.DataFrame(candidates, columns=["lambda1", "lambda2", "accuracy"])
    best = table.loc[table["accuracy"].idxmax()]
    return (float(best["lambda1"]), float(best["lambda2"])), table


def run_completion_ablation(config: RunConfig, seed: int = 0, missing_rate: Optional[float] = None) -> pd.DataFrame:
    """
    XCom-completed vs zero-filled independent predictions of one trained bundle

    Accuracies are measured on the test rows where the client has masked
    positions.
    """
    rate = config.sweep.fixed_missing_rate if missing_rate is None else missing_rate
    train_ds, test_ds = prepare_cell(config, seed, config.data.overlap_ratio, rate)
    loss = config.loss
    bundle = train_xvfl(config, train_ds, seed, loss_config=LossConfig(loss.lambda1, loss.lambda2, xcom_self_input=True))
    rows = []
    for i in range(test_ds.k):
        masked = np.flatnonzero(test_ds.missing_masks[i].any(axis=1))
        if masked.size == 0:
            continue
        block, mask, labels = test_ds.blocks[i][masked], test_ds.missing_masks[i][masked], test_ds.labels[masked]
        completed = evaluate_accuracy(infer_independent_with_missing(bundle, i, block, mask), labels)
        zero_fill = evaluate_accuracy(infer_zero_fill(bundle, i, block), labels)
        rows.append({
            "seed": seed, "client": i, "missing_rate": rate, "n_rows": int(masked.size),
            "completed": completed, "zero_fill": zero_fill, "difference": completed - zero_fill,
        })
    return pd.DataFrame(rows, columns=["seed", "client", "missing_rate", "n_rows", "completed", "zero_fill", "difference"])


# ---------------------------------------------------------------------------
# Directional checks
# ---------------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: Optional[bool]  # None: not evaluable from the given tables
    detail: str


def directional_checks(
    missing_table: Optional[pd.DataFrame] = None,
    imbalance_table: Optional[pd.DataFrame] = None,
    gap_missing_rate: float = 0.9,
    margin: float = 0.05,
    gap_ratio: float = 0.5
) -> List[CheckResult]:
    """
    Directional comparisons between X-VFL and the baselines

    - independent_superiority: at gap_missing_rate, X-VFL mean independent
      accuracy beats standalone by at least margin
    - gap_closing: X-VFL's |collaborative − independent| gap is at most
      gap_ratio times every baseline's gap
    - imbalance_gap: X-VFL's mean |A − B| gap is at most gap_ratio times
      standalone's
    """
    checks: List[CheckResult] = []

    gaps = None
    if missing_table is not None and not missing_table.empty:
        try:
            gaps = gap_summary(missing_table, gap_missing_rate).set_index("method")
        except ValidationError:
            gaps = None
    if gaps is not None and {"xvfl", "standalone"} <= set(gaps.index):
        difference = gaps.loc["xvfl", "independent"] - gaps.loc["standalone", "independent"]
        checks.append(CheckResult(
            "independent_superiority",
            bool(difference >= margin),
            f"xvfl - standalone independent accuracy = {difference:.4f} (need >= {margin})",
        ))
    else:
        checks.append(CheckResult("independent_superiority", None, "missing-rate table lacks xvfl/standalone rows"))

    if gaps is not None and "xvfl" in gaps.index and len(gaps.index) > 1:
        own = abs(gaps.loc["xvfl", "gap"])
        others = {m: abs(gaps.loc[m, "gap"]) for m in gaps.index if m != "xvfl"}
        passed = all(own <= gap_ratio * gap for gap in others.values())
        detail = ", ".join(f"{m}={g:.4f}" for m, g in sorted(others.items()))
        checks.append(CheckResult("gap_closing", bool(passed), f"xvfl gap {own:.4f} vs {detail}"))
    else:
        checks.append(CheckResult("gap_closing", None, "missing-rate table lacks comparable methods"))

    if imbalance_table is not None and not imbalance_table.empty:
        per_seed = imbalance_gaps(imbalance_table)
        mean_abs = per_seed.assign(gap=per_seed["gap"].abs()).groupby("method")["gap"].mean()
        if {"xvfl", "standalone"} <= set(mean_abs.index):
            passed = mean_abs["xvfl"] <= gap_ratio * mean_abs["standalone"]
            checks.append(CheckResult(
                "imbalance_gap",
                bool(passed),
                f"xvfl |A-B| {mean_abs['xvfl']:.4f} vs standalone {mean_abs['standalone']:.4f}",
            ))
        else:
            checks.append(CheckResult("imbalance_gap", None, "imbalance table lacks xvfl/standalone rows"))
    else:
        checks.append(CheckResult("imbalance_gap", None, "no imbalance table"))
    return checks


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

class ReportWriter(BaseTool):
    """CSV + JSON summary per sweep under <out_dir>/reports/"""

    def __init__(self, output_dir: str):
        super().__init__(tool_name="reports", output_dir=output_dir)

    def write_sweep(self, name: str, table: pd.DataFrame, config_hash: str, extra: Optional[Dict[str, Any]] = None):
        summary = summarize(table)
        csv_path = self._save_table(f"{name}.csv", table, SWEEP_COLUMNS)
        payload = {
            "sweep": name,
            "config_hash": config_hash,
            "seeds": sorted(int(s) for s in table["seed"].unique()),
            "columns": SWEEP_COLUMNS,
            "groups": summary.to_dict(orient="records"),
        }
        payload.update(extra or {})
        json_path = self._save_result(f"{name}_summary.json", payload)
        return csv_path, json_path

    def write_convergence(self, name: str, report: ConvergenceReport, config_hash: str):
        csv_path = self._save_table(f"{name}.csv", report.rows, CONVERGENCE_COLUMNS)
        payload = {"sweep": name, "config_hash": config_hash, "columns": CONVERGENCE_COLUMNS, **report.to_dict()}
        json_path = self._save_result(f"{name}_summary.json", _json_safe(payload))
        return csv_path, json_path


def _json_safe(value):
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def emit_report(results, path: str, name: str, config_hash: str = "", extra: Optional[Dict[str, Any]] = None):
    """
    Write one sweep's CSV and JSON summary

    Args:
        results: Long-format sweep table or a ConvergenceReport
        path: Output root (files go to <path>/reports/)
        name: File stem

    Returns:
        (csv path, json path)

    Raises:
        ValidationError: Empty results
        OSError: Unwritable path
    """
    writer = ReportWriter(path)
    if isinstance(results, ConvergenceReport):
        if results.rows.empty:
            raise ValidationError("No convergence rows to report")
        return writer.write_convergence(name, results, config_hash)
    if results is None or results.empty:
        raise ValidationError("No results to report")
    return writer.write_sweep(name, results, config_hash, _json_safe(extra or {}))
