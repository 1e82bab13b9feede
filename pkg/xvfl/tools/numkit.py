#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Numerical Kit

Dense float64 layers with explicit forward/backward passes, the two
elementary losses, a central finite-difference oracle, and the FeedForward
network used for every bottom, completer and top model.
"""

import hashlib
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np

from ..errors import DimensionError, ValidationError

# Row-major real matrix; every feature block, embedding, logit and gradient.
DenseMatrix = np.ndarray


def as_matrix(values) -> DenseMatrix:
    """Convert to a 2-D float64 array"""
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(1, -1)
    if matrix.ndim != 2:
        raise DimensionError("as_matrix", matrix.shape, ("n", "d"))
    return matrix


def linear_forward(inputs: DenseMatrix, weight: DenseMatrix, bias: np.ndarray) -> DenseMatrix:
    """out = inputs @ weight + bias"""
    if inputs.ndim != 2 or weight.ndim != 2 or inputs.shape[1] != weight.shape[0]:
        raise DimensionError("linear_forward", inputs.shape, weight.shape)
    if bias.shape != (weight.shape[1],):
        raise DimensionError("linear_forward bias", bias.shape, (weight.shape[1],))
    return inputs @ weight + bias


def linear_backward(
    upstream: DenseMatrix,
    inputs: DenseMatrix,
    weight: DenseMatrix
) -> Tuple[DenseMatrix, DenseMatrix, np.ndarray]:
    """
    Gradients of a linear layer

    Returns:
        (d_inputs, d_weight, d_bias)
    """
    if upstream.shape != (inputs.shape[0], weight.shape[1]):
        raise DimensionError("linear_backward", upstream.shape, (inputs.shape[0], weight.shape[1]))
    return upstream @ weight.T, inputs.T @ upstream, upstream.sum(axis=0)


def relu(inputs: DenseMatrix) -> DenseMatrix:
    return np.maximum(inputs, 0.0)


def relu_backward(upstream: DenseMatrix, pre_activation: DenseMatrix) -> DenseMatrix:
    """Zero gradient where the pre-activation is <= 0 (subgradient 0 at the kink)"""
    if upstream.shape != pre_activation.shape:
        raise DimensionError("relu_backward", upstream.shape, pre_activation.shape)
    return np.where(pre_activation > 0.0, upstream, 0.0)


def softmax(logits: DenseMatrix) -> DenseMatrix:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: DenseMatrix, labels: np.ndarray) -> Tuple[float, DenseMatrix]:
    """
    Mean cross-entropy over rows

    Args:
        logits: n x C
        labels: n class indices

    Returns:
        (loss, grad_logits) with grad = (softmax - onehot) / n
    """
    labels = np.asarray(labels)
    n, n_classes = logits.shape
    if labels.shape != (n,):
        raise DimensionError("softmax_cross_entropy labels", labels.shape, (n,))
    if n == 0:
        return 0.0, np.zeros_like(logits)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValidationError(f"Labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - shifted[rows, labels]))

    grad = softmax(logits)
    grad[rows, labels] -= 1.0
    return loss, grad / n


def mse(pred: DenseMatrix, target: DenseMatrix) -> Tuple[float, DenseMatrix, DenseMatrix]:
    """
    Mean squared error over all entries

    Returns:
        (loss, grad_pred, grad_target); both arguments get a gradient
    """
    if pred.shape != target.shape:
        raise DimensionError("mse", pred.shape, target.shape)
    if pred.size == 0:
        return 0.0, np.zeros_like(pred), np.zeros_like(target)
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad_pred = (2.0 / pred.size) * diff
    return loss, grad_pred, -grad_pred


def finite_diff_grad(scalar_fn: Callable[[np.ndarray], float], theta: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central differences (f(θ+h·e_i) − f(θ−h·e_i)) / 2h per coordinate"""
    theta = np.array(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        original = theta[i]
        theta[i] = original + step
        upper = scalar_fn(theta)
        theta[i] = original - step
        lower = scalar_fn(theta)
        theta[i] = original
        grad[i] = (upper - lower) / (2.0 * step)
    return grad


def uniform_init(rng: np.random.Generator, d_in: int, d_out: int) -> DenseMatrix:
    """Uniform in ±sqrt(6 / (d_in + d_out))"""
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


@dataclass
class LayerCache:
    """Per-layer inputs and pre-activations of one forward pass, in forward order"""
    inputs: List[DenseMatrix] = field(default_factory=list)
    pre_activations: List[DenseMatrix] = field(default_factory=list)

    def min_abs_hidden_preactivation(self) -> float:
        """Distance to the nearest ReLU kink (hidden layers only)"""
        hidden = self.pre_activations[:-1]
        if not hidden:
            return float("inf")
        return float(min(np.abs(z).min() if z.size else np.inf for z in hidden))


class FeedForward:
    """
    Fully connected network: ReLU on hidden layers, linear output

    sizes=[d] is the identity network (no parameters).
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator, name: str = "net"):
        if len(sizes) < 1 or any(int(s) < 1 for s in sizes):
            raise ValueError(f"Invalid layer sizes for {name}: {list(sizes)}")
        self.name = name
        self.sizes = [int(s) for s in sizes]
        self.weights: List[DenseMatrix] = []
        self.biases: List[np.ndarray] = []
        for d_in, d_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.weights.append(uniform_init(rng, d_in, d_out))
            self.biases.append(np.zeros(d_out))

    @property
    def d_in(self) -> int:
        return self.sizes[0]

    @property
    def d_out(self) -> int:
        return self.sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward(self, inputs: DenseMatrix) -> Tuple[DenseMatrix, LayerCache]:
        if inputs.ndim != 2 or inputs.shape[1] != self.d_in:
            raise DimensionError(f"{self.name}.forward", inputs.shape, ("n", self.d_in))
        cache = LayerCache()
        out = inputs
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            cache.inputs.append(out)
            pre = linear_forward(out, weight, bias)
            cache.pre_activations.append(pre)
            out = relu(pre) if index < self.n_layers - 1 else pre
        return out, cache

    def backward(self, upstream: DenseMatrix, cache: LayerCache) -> Tuple[DenseMatrix, List[np.ndarray]]:
        """
        Backpropagate through one recorded forward pass

        Returns:
            (d_inputs, grads) where grads lists dW, db per layer in forward order
        """
        grads: List[np.ndarray] = [None] * (2 * self.n_layers)
        delta = upstream
        for index in range(self.n_layers - 1, -1, -1):
            if index < self.n_layers - 1:
                delta = relu_backward(delta, cache.pre_activations[index])
            delta, d_weight, d_bias = linear_backward(delta, cache.inputs[index], self.weights[index])
            grads[2 * index] = d_weight
            grads[2 * index + 1] = d_bias
        return delta, grads

    def zero_grads(self) -> List[np.ndarray]:
        grads = []
        for weight, bias in zip(self.weights, self.biases):
            grads.append(np.zeros_like(weight))
            grads.append(np.zeros_like(bias))
        return grads

    def flatten(self) -> np.ndarray:
        parts = []
        for weight, bias in zip(self.weights, self.biases):
            parts.append(weight.ravel())
            parts.append(bias)
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts)

    def load_flat(self, vector: np.ndarray) -> None:
        if vector.size != self.n_params:
            raise DimensionError(f"{self.name}.load_flat", vector.shape, (self.n_params,))
        offset = 0
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            self.weights[index] = vector[offset:offset + weight.size].reshape(weight.shape).copy()
            offset += weight.size
            self.biases[index] = vector[offset:offset + bias.size].copy()
            offset += bias.size

    def shapes(self) -> List[List[int]]:
        return [list(w.shape) for w in self.weights]


def flatten_grads(grads: List[np.ndarray]) -> np.ndarray:
    if not grads:
        return np.zeros(0)
    return np.concatenate([g.ravel() for g in grads])


def named_rng(master_seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named stream under one master seed"""
    key = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), key]))
