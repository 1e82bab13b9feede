#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Optimizers

SGD-type and PAGE-type parameter updates over a flat θ, the learning-rate
and batch-size rules that come with their convergence guarantees, and
estimation of the smoothness / noise / initial-gap constants those rules
consume.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from ..config import TRAIN
from ..errors import ConfigError, DivergenceError
from .numkit import named_rng

logger = logging.getLogger(__name__)


class RngStreams:
    """
    Independent named generators derived from one master seed

    Names in use: 'batch' (minibatch sampling), 'coin' (PAGE branch draws),
    'page_init' (the initial PAGE estimator batch), 'estimate' (constant
    estimation).
    """

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)
        self._streams: Dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = named_rng(self.master_seed, name)
        return self._streams[name]


@dataclass
class Batch:
    """Sample indices with an id for estimator bookkeeping"""
    batch_id: int
    indices: np.ndarray


class BatchSampler:
    """Uniform sampling with replacement from a pool of n samples"""

    def __init__(self, n_samples: int, rng: np.random.Generator):
        if n_samples < 1:
            raise ConfigError("Cannot sample batches from an empty pool")
        self.n_samples = n_samples
        self.rng = rng
        self.drawn = 0

    def __call__(self, size: int) -> Batch:
        indices = self.rng.integers(0, self.n_samples, size=size)
        batch = Batch(self.drawn, indices)
        self.drawn += 1
        return batch


GradFn = Callable[[np.ndarray, Batch], np.ndarray]
Sampler = Callable[[int], Batch]


@dataclass
class StepRecord:
    """One optimizer step"""
    step: int
    branch: str  # 'sgd', 'refresh' or 'correction'
    grad_evals: int
    grad_norm_sq: float
    batch_ids: Tuple[int, ...]
    evaluated_at: Tuple[str, ...]  # 'theta' / 'theta_prev' per gradient evaluation
    loss: float = float("nan")


@dataclass
class SgdConfig:
    eta: float
    beta_hat: Optional[float] = None
    sigma_hat: Optional[float] = None
    T: Optional[int] = None
    batch_size: int = 1

    def validate(self) -> "SgdConfig":
        if not self.eta > 0:
            raise ConfigError(f"SGD learning rate must be > 0, got {self.eta}")
        if self.batch_size < 1:
            raise ConfigError(f"SGD batch size must be >= 1, got {self.batch_size}")
        return self


@dataclass
class PageParams:
    eta: float
    b: int
    b_prime: int
    p: float

    def validate(self) -> "PageParams":
        if not self.eta > 0:
            raise ConfigError(f"PAGE learning rate must be > 0, got {self.eta}")
        if not 0.0 < self.p <= 1.0:
            raise ConfigError(f"PAGE switch probability must be in (0, 1], got {self.p}")
        if not self.b >= self.b_prime >= 1:
            raise ConfigError(f"PAGE needs b >= b' >= 1, got b={self.b}, b'={self.b_prime}")
        return self

    @classmethod
    def auto(cls, eta: float, b: int, b_prime: Optional[int] = None) -> "PageParams":
        """p = b′/(b+b′) with b′ = ⌈√b⌉ unless given"""
        b_prime = b_prime if b_prime is not None else int(math.ceil(math.sqrt(b)))
        return cls(eta=eta, b=b, b_prime=b_prime, p=b_prime / (b + b_prime)).validate()


@dataclass
class PageState:
    """
    Running PAGE estimator

    g_prev is the estimate at theta_prev; the coin stream is consumed once per
    step.
    """
    g_prev: np.ndarray
    theta_prev: np.ndarray
    p: float
    b: int
    b_prime: int
    eta: float
    coin: np.random.Generator
    steps: int = 0

    @property
    def params(self) -> PageParams:
        return PageParams(self.eta, self.b, self.b_prime, self.p)


def _check_finite(vector: np.ndarray, step: int, theta: np.ndarray, what: str = "gradient") -> None:
    if not np.all(np.isfinite(vector)):
        logger.error(f"Non-finite {what} at step {step}")
        raise DivergenceError(f"Non-finite {what} at step {step}", step=step, last_good_theta=theta.copy())


def sgd_step(
    theta: np.ndarray,
    grad_fn: GradFn,
    eta: float,
    batch_sampler: Sampler,
    batch_size: int = 1,
    step: int = 0
) -> Tuple[np.ndarray, StepRecord]:
    """
    θ′ = θ − η·g with g a minibatch gradient

    Raises:
        DivergenceError: Non-finite gradient; θ is left untouched
    """
    batch = batch_sampler(batch_size)
    grad = np.asarray(grad_fn(theta, batch), dtype=np.float64)
    _check_finite(grad, step, theta)
    record = StepRecord(
        step=step,
        branch="sgd",
        grad_evals=batch_size,
        grad_norm_sq=float(grad @ grad),
        batch_ids=(batch.batch_id,),
        evaluated_at=("theta",),
    )
    return theta - eta * grad, record


def page_init(
    theta0: np.ndarray,
    grad_fn: GradFn,
    params: PageParams,
    streams: RngStreams,
    n_samples: int
) -> PageState:
    """g⁰ = size-b minibatch gradient at θ⁰, drawn from its own stream"""
    params.validate()
    sampler = BatchSampler(n_samples, streams.get("page_init"))
    g0 = np.asarray(grad_fn(theta0, sampler(params.b)), dtype=np.float64)
    _check_finite(g0, 0, theta0)
    return PageState(
        g_prev=g0,
        theta_prev=theta0.copy(),
        p=params.p,
        b=params.b,
        b_prime=params.b_prime,
        eta=params.eta,
        coin=streams.get("coin"),
    )


def page_step(
    theta: np.ndarray,
    state: PageState,
    grad_fn: GradFn,
    batch_sampler: Sampler,
    step: int = 0
) -> Tuple[np.ndarray, PageState, StepRecord]:
    """
    One PAGE update

    With probability p a fresh size-b gradient at θ; otherwise
    g_prev + ∇_{b′}(θ) − ∇_{b′}(θ_prev) on one shared b′-batch.

    Raises:
        DivergenceError: Non-finite estimator; θ and state are left untouched
    """
    u = state.coin.random()
    if u < state.p:
        batch = batch_sampler(state.b)
        grad = np.asarray(grad_fn(theta, batch), dtype=np.float64)
        branch, evals = "refresh", state.b
        batch_ids, evaluated_at = (batch.batch_id,), ("theta",)
    else:
        batch = batch_sampler(state.b_prime)
        current = np.asarray(grad_fn(theta, batch), dtype=np.float64)
        previous = np.asarray(grad_fn(state.theta_prev, batch), dtype=np.float64)
        grad = state.g_prev + current - previous
        branch, evals = "correction", state.b_prime
        batch_ids, evaluated_at = (batch.batch_id, batch.batch_id), ("theta", "theta_prev")
    _check_finite(grad, step, theta)

    new_state = PageState(
        g_prev=grad,
        theta_prev=theta.copy(),
        p=state.p,
        b=state.b,
        b_prime=state.b_prime,
        eta=state.eta,
        coin=state.coin,
        steps=state.steps + 1,
    )
    record = StepRecord(
        step=step,
        branch=branch,
        grad_evals=evals,
        grad_norm_sq=float(grad @ grad),
        batch_ids=batch_ids,
        evaluated_at=evaluated_at,
    )
    return theta - state.eta * grad, new_state, record


def theorem_defaults(
    target_eps: float,
    beta_hat: float,
    sigma_hat: float,
    delta0_hat: float,
    T: int
) -> Tuple[SgdConfig, PageParams]:
    """
    Step sizes and batch sizes from the convergence guarantees

    SGD: η = min{2/β̂, √(2Δ̂₀/(β̂σ̂²T))}.
    PAGE: η = 1/(2β̂), b = ⌈2σ̂²/ε²⌉, b′ = ⌈√b⌉, p = b′/(b+b′).

    Args:
        target_eps: ε, the target gradient norm
        beta_hat: Smoothness estimate
        sigma_hat: Gradient-noise standard deviation estimate
        delta0_hat: Initial gap L(θ⁰) − L*
        T: Planned steps
    """
    if min(target_eps, beta_hat, delta0_hat) <= 0 or sigma_hat < 0 or T < 1:
        raise ConfigError("theorem_defaults needs positive estimates and T >= 1")
    sigma_sq = sigma_hat ** 2

    if sigma_sq > 0:
        eta_sgd = min(2.0 / beta_hat, math.sqrt(2.0 * delta0_hat / (beta_hat * sigma_sq * T)))
    else:
        eta_sgd = 2.0 / beta_hat
    sgd = SgdConfig(eta=eta_sgd, beta_hat=beta_hat, sigma_hat=sigma_hat, T=T)

    # ε² rounding noise must not push an exact integer up by one
    b = max(1, int(math.ceil(2.0 * sigma_sq / target_eps ** 2 - 1e-9)))
    page = PageParams.auto(eta=1.0 / (2.0 * beta_hat), b=b)
    return sgd, page


@dataclass
class ConstantEstimates:
    beta_hat: float
    sigma_sq_hat: float
    delta0_hat: float
    sample_sizes: Dict[str, int] = field(default_factory=dict)

    @property
    def sigma_hat(self) -> float:
        return math.sqrt(self.sigma_sq_hat)


def estimate_constants(
    objective,
    theta0: np.ndarray,
    streams: RngStreams,
    pairs: int = TRAIN.SMOOTHNESS_PAIRS,
    noise_samples: int = TRAIN.NOISE_SAMPLES,
    pilot_steps: int = TRAIN.PILOT_STEPS,
    pair_radius: float = 0.1,
    pilot_batch: int = 1
) -> ConstantEstimates:
    """
    Estimate β̂, σ̂², Δ̂₀ for a StochasticObjective

    β̂ is the largest gradient-difference ratio over random pairs near θ⁰;
    σ̂² the sample variance of single-sample gradients at θ⁰; Δ̂₀ the drop
    from L(θ⁰) to the best full loss of a short SGD pilot with η = 1/β̂.
    """
    rng = streams.get("estimate")
    dim = theta0.shape[0]

    beta_hat = 0.0
    for _ in range(pairs):
        theta1 = theta0 + pair_radius * rng.standard_normal(dim)
        theta2 = theta0 + pair_radius * rng.standard_normal(dim)
        distance = np.linalg.norm(theta1 - theta2)
        if distance == 0:
            continue
        ratio = np.linalg.norm(objective.full_grad(theta1) - objective.full_grad(theta2)) / distance
        beta_hat = max(beta_hat, float(ratio))
    beta_hat = max(beta_hat, 1e-8)

    samples = np.stack([
        objective.grad(theta0, Batch(-1, rng.integers(0, objective.n_samples, size=1)))
        for _ in range(noise_samples)
    ])
    if noise_samples > 1:
        sigma_sq_hat = float(np.sum(np.var(samples, axis=0, ddof=1)))
    else:
        sigma_sq_hat = 0.0

    initial = objective.full_loss(theta0)
    best = initial
    theta = theta0.copy()
    sampler = BatchSampler(objective.n_samples, rng)
    for step in range(pilot_steps):
        try:
            theta, _ = sgd_step(theta, objective.grad, 1.0 / beta_hat, sampler, pilot_batch, step)
        except DivergenceError:
            logger.warning(f"Pilot run diverged at step {step}; using best loss so far")
            break
        best = min(best, objective.full_loss(theta))
    delta0_hat = max(float(initial - best), 1e-12)

    logger.info(f"Estimated constants: beta={beta_hat:.4g}, sigma^2={sigma_sq_hat:.4g}, delta0={delta0_hat:.4g}")
    return ConstantEstimates(
        beta_hat=beta_hat,
        sigma_sq_hat=sigma_sq_hat,
        delta0_hat=delta0_hat,
        sample_sizes={"pairs": pairs, "noise_samples": noise_samples, "pilot_steps": pilot_steps},
    )


@dataclass
class OptimizerSpec:
    """Resolved optimizer choice for a training run"""
    kind: str = "sgd"
    eta: float = TRAIN.LEARNING_RATE
    batch_size: int = TRAIN.BATCH_SIZE_TWO_CLIENTS
    page: Optional[PageParams] = None

    def validate(self) -> "OptimizerSpec":
        if self.kind not in ("sgd", "page"):
            raise ConfigError(f"Unknown optimizer kind: {self.kind}")
        if self.kind == "page":
            if self.page is None:
                raise ConfigError("PAGE optimizer needs PageParams")
            self.page.validate()
        else:
            SgdConfig(eta=self.eta, batch_size=self.batch_size).validate()
        return self


def run_optimizer(
    objective,
    theta0: np.ndarray,
    spec: OptimizerSpec,
    T: int,
    streams: RngStreams,
    on_step: Optional[Callable[[int, np.ndarray, StepRecord], None]] = None
) -> Tuple[np.ndarray, List[StepRecord]]:
    """
    T steps of SGD or PAGE on a StochasticObjective

    on_step(t, θ_before, record) is called after every step, before θ is
    replaced.
    """
    spec.validate()
    sampler = BatchSampler(objective.n_samples, streams.get("batch"))
    theta = theta0.copy()
    records: List[StepRecord] = []
    state = None
    if spec.kind == "page" and T > 0:
        state = page_init(theta, objective.grad, spec.page, streams, objective.n_samples)

    begin_round = getattr(objective, "begin_round", None)
    for t in range(T):
        if begin_round is not None:
            begin_round(t)
        if spec.kind == "sgd":
            new_theta, record = sgd_step(theta, objective.grad, spec.eta, sampler, spec.batch_size, t)
        else:
            new_theta, state, record = page_step(theta, state, objective.grad, sampler, t)
        if on_step is not None:
            on_step(t, theta, record)
        records.append(record)
        theta = new_theta
    return theta, records
