#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Stochastic Objectives

Finite-sum problems the optimizers run on: a noisy quadratic whose
smoothness, noise and initial gap are known exactly, and the X-VFL training
loss over a vertical dataset.
"""

import logging
from abc import ABC, abstractmethod
from typing import Optional

import numpy as np

from ..config import CONVERGENCE
from ..errors import ValidationError
from .dataset import VerticalDataset
from .losses import LossConfig, evaluate_objective
from .message_ledger import MessageLedger
from .models import ModelBundle
from .numkit import named_rng
from .optim import Batch

logger = logging.getLogger(__name__)


class StochasticObjective(ABC):
    """L(θ) = mean over a sample pool of per-sample losses"""

    @property
    @abstractmethod
    def n_params(self) -> int:
        pass

    @property
    @abstractmethod
    def n_samples(self) -> int:
        pass

    @abstractmethod
    def initial_theta(self) -> np.ndarray:
        pass

    @abstractmethod
    def loss(self, theta: np.ndarray, batch: Batch) -> float:
        pass

    @abstractmethod
    def grad(self, theta: np.ndarray, batch: Batch) -> np.ndarray:
        pass

    def full_batch(self) -> Batch:
        return Batch(-1, np.arange(self.n_samples))

    def full_loss(self, theta: np.ndarray) -> float:
        return self.loss(theta, self.full_batch())

    def full_grad(self, theta: np.ndarray) -> np.ndarray:
        return self.grad(theta, self.full_batch())


class NoisyQuadratic(StochasticObjective):
    """
    Per-sample loss ½θᵀDθ − c_sᵀθ over a finite pool of c_s

    D is diagonal with curvatures spread over [0.5, 2.0], so β = 2. The pool
    offsets are standardized so that the per-sample gradient noise has total
    variance exactly sigma_sq. θ⁰ sits at unit gradient norm from the
    minimizer.
    """

    def __init__(
        self,
        dim: int = CONVERGENCE.DIM,
        sigma_sq: float = CONVERGENCE.SIGMA_SQ,
        pool_size: int = CONVERGENCE.POOL_SIZE,
        seed: int = 0
    ):
        if dim < 1 or pool_size < 2 or sigma_sq < 0:
            raise ValidationError(f"Invalid quadratic: dim={dim}, pool={pool_size}, sigma_sq={sigma_sq}")
        rng = named_rng(seed, "quadratic")
        self.dim = dim
        self.curvatures = np.linspace(0.5, 2.0, dim)
        self.c_mean = rng.standard_normal(dim)

        noise = rng.standard_normal((pool_size, dim))
        noise -= noise.mean(axis=0)
        noise /= noise.std(axis=0)
        noise *= np.sqrt(sigma_sq / dim)
        self.pool = self.c_mean + noise
        # Exact pool mean after standardization
        self.c_mean = self.pool.mean(axis=0)

        self.theta_star = self.c_mean / self.curvatures
        direction = rng.standard_normal(dim)
        offset = direction / np.linalg.norm(self.curvatures * direction)
        self.theta0 = self.theta_star + offset

        self.beta = float(self.curvatures.max())
        self.sigma_sq = float(np.sum(np.var(self.pool, axis=0)))
        self.delta0 = self.full_loss(self.theta0) - self.full_loss(self.theta_star)

    @property
    def n_params(self) -> int:
        return self.dim

    @property
    def n_samples(self) -> int:
        return self.pool.shape[0]

    def initial_theta(self) -> np.ndarray:
        return self.theta0.copy()

    def loss(self, theta: np.ndarray, batch: Batch) -> float:
        offsets = self.pool[batch.indices].mean(axis=0)
        return float(0.5 * theta @ (self.curvatures * theta) - offsets @ theta)

    def grad(self, theta: np.ndarray, batch: Batch) -> np.ndarray:
        return self.curvatures * theta - self.pool[batch.indices].mean(axis=0)

    def full_loss(self, theta: np.ndarray) -> float:
        return float(0.5 * theta @ (self.curvatures * theta) - self.c_mean @ theta)

    def full_grad(self, theta: np.ndarray) -> np.ndarray:
        return self.curvatures * theta - self.c_mean


class XVFLObjective(StochasticObjective):
    """
    The X-VFL training loss as a function of the flat parameter vector

    Batches are row indices into the training pool. Every gradient
    evaluation is one cut-layer round; when a ledger is attached, traffic is
    recorded under the current round index.
    """

    def __init__(
        self,
        dataset: VerticalDataset,
        bundle: ModelBundle,
        loss_config: LossConfig,
        ledger: Optional[MessageLedger] = None
    ):
        loss_config.validate()
        if dataset.client_dims != bundle.client_dims:
            raise ValidationError(f"Dataset dims {dataset.client_dims} do not match model dims {bundle.client_dims}")
        self.dataset = dataset
        self.loss_config = loss_config
        self.ledger = ledger
        self.round_index = 0
        self._theta0 = bundle.flatten()
        self._bundle = bundle.copy()
        self.last_breakdown = None

    @property
    def n_params(self) -> int:
        return self._bundle.n_params

    @property
    def n_samples(self) -> int:
        return self.dataset.n_samples

    @property
    def bundle(self) -> ModelBundle:
        return self._bundle

    def initial_theta(self) -> np.ndarray:
        return self._theta0.copy()

    def begin_round(self, round_index: int) -> None:
        self.round_index = round_index
        self.last_breakdown = None

    def _evaluate(self, theta: np.ndarray, batch: Batch, record: bool):
        self._bundle.load_flat(theta)
        rows = self.dataset.subset(batch.indices)
        breakdown = evaluate_objective(
            self._bundle,
            rows,
            self.loss_config,
            ledger=self.ledger if record else None,
            round_index=self.round_index,
        )
        # First evaluation of a round is the one at the current θ
        if record and self.last_breakdown is None:
            self.last_breakdown = breakdown
        return breakdown

    def loss(self, theta: np.ndarray, batch: Batch) -> float:
        return self._evaluate(theta, batch, record=False).loss

    def grad(self, theta: np.ndarray, batch: Batch) -> np.ndarray:
        return self._evaluate(theta, batch, record=batch.batch_id >= 0).grad
