"""Softplus MLP classifier with flat weight vectors and a mean-field Gaussian posterior.

Weights of every layer are stored in one flat float64 vector. Layer ``l`` occupies
``fan_out * fan_in`` entries for its matrix (row-major, shape ``(fan_out, fan_in)``)
followed by ``fan_out`` bias entries. Biases are treated exactly like weights by the
posterior and the priors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .exceptions import InvalidArgumentError

# Reading of "N(0, 0.01)" in the initialisation recipe: True -> 0.01 is a variance
# (std 0.1), False -> 0.01 is a standard deviation.
INIT_SCALE_IS_VARIANCE = True
INIT_MU_MEAN = 0.0
INIT_RHO_MEAN = -5.0
INIT_SCALE = 0.01

WEIGHTS_MAGIC = b"BOW1"
WEIGHTS_VERSION = 1
_HEADER = struct.Struct("<4sIQ")  # magic, version, length -> 16 bytes


def init_std(scale: float = INIT_SCALE, is_variance: bool = INIT_SCALE_IS_VARIANCE) -> float:
    return float(np.sqrt(scale)) if is_variance else float(scale)


def softplus(x, beta: float = 1.0):
    """Overflow-safe ``log(1 + exp(beta * x)) / beta``."""
    bx = beta * np.asarray(x, dtype=np.float64)
    return (np.maximum(bx, 0.0) + np.log1p(np.exp(-np.abs(bx)))) / beta


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def inverse_softplus(y):
    """Inverse of :func:`softplus` with ``beta=1``; ``y`` must be positive."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise InvalidArgumentError("inverse_softplus requires finite positive values")
    # log(exp(y) - 1) = y + log(1 - exp(-y))
    return y + np.log(-np.expm1(-y))


def sigma_from_rho(rho) -> np.ndarray:
    """Map unconstrained scale parameters to standard deviations, ``log(1 + exp(rho))``."""
    rho = np.asarray(rho, dtype=np.float64)
    if not np.all(np.isfinite(rho)):
        raise InvalidArgumentError("rho must be finite")
    sigma = softplus(rho)
    # softplus underflows to 0 below about -745; keep the strict positivity contract
    return np.maximum(sigma, np.finfo(np.float64).tiny)


@dataclass(frozen=True)
class NetworkArch:
    """Fully connected softplus network shape.

    Parameters
    ----------
    input_dim : int
        Number of input features.
    hidden_dims : tuple of int
        Widths of the hidden layers; empty for a purely affine model.
    num_classes : int
        Number of output logits, at least 2.
    beta : float
        Sharpness of the softplus activation.
    """

    input_dim: int
    hidden_dims: Tuple[int, ...] = (64,)
    num_classes: int = 2
    beta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.num_classes < 2:
            raise InvalidArgumentError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise InvalidArgumentError("all layer dimensions must be >= 1")
        if not (self.beta > 0 and np.isfinite(self.beta)):
            raise InvalidArgumentError("softplus beta must be positive")

    @property
    def layer_dims(self) -> List[Tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def num_weights(self) -> int:
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layer_dims)

    def unflatten(self, flat: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
        """Split a flat vector into ``(W, b)`` views per layer."""
        layers = []
        offset = 0
        for fan_in, fan_out in self.layer_dims:
            w = flat[offset:offset + fan_in * fan_out].reshape(fan_out, fan_in)
            offset += fan_in * fan_out
            b = flat[offset:offset + fan_out]
            offset += fan_out
            layers.append((w, b))
        return layers

    def flatten(self, layers: Sequence[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        parts = []
        for (w, b), (fan_in, fan_out) in zip(layers, self.layer_dims):
            parts.append(np.asarray(w, dtype=np.float64).reshape(fan_out, fan_in).ravel())
            parts.append(np.asarray(b, dtype=np.float64).reshape(fan_out))
        return np.concatenate(parts)


def _check_vector(values, arch: NetworkArch, name: str) -> np.ndarray:
    values = np.array(values, dtype=np.float64).ravel()
    if values.shape[0] != arch.num_weights:
        raise InvalidArgumentError(
            f"{name} has length {values.shape[0]}, architecture expects {arch.num_weights}"
        )
    if not np.all(np.isfinite(values)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class PointWeights:
    """A single flat weight vector for ``arch``."""

    values: np.ndarray
    arch: NetworkArch

    def __post_init__(self):
        object.__setattr__(self, "values", _check_vector(self.values, self.arch, "weights"))

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class VariationalPosterior:
    """Factorised Gaussian ``q(w) = prod_i N(mu_i, softplus(rho_i)^2)``."""

    mu: np.ndarray
    rho: np.ndarray
    arch: NetworkArch
    sigma: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "mu", _check_vector(self.mu, self.arch, "mu"))
        object.__setattr__(self, "rho", _check_vector(self.rho, self.arch, "rho"))
        sigma = sigma_from_rho(self.rho)
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)

    def mean_weights(self) -> PointWeights:
        return PointWeights(self.mu, self.arch)


def init_posterior(arch: NetworkArch, seed: int,
                   scale: float = INIT_SCALE,
                   scale_is_variance: bool = INIT_SCALE_IS_VARIANCE) -> VariationalPosterior:
    """Draw initial ``mu ~ N(0, s^2)`` and ``rho ~ N(-5, s^2)`` deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    std = init_std(scale, scale_is_variance)
    n = arch.num_weights
    mu = rng.normal(INIT_MU_MEAN, std, size=n)
    rho = rng.normal(INIT_RHO_MEAN, std, size=n)
    return VariationalPosterior(mu, rho, arch)


def init_point_weights(arch: NetworkArch, seed: int,
                       scale: float = INIT_SCALE,
                       scale_is_variance: bool = INIT_SCALE_IS_VARIANCE) -> PointWeights:
    rng = np.random.default_rng(seed)
    return PointWeights(rng.normal(INIT_MU_MEAN, init_std(scale, scale_is_variance),
                                   size=arch.num_weights), arch)


def sample_weights(posterior: VariationalPosterior, noise) -> PointWeights:
    """Reparameterised draw ``w = mu + sigma * eps``."""
    noise = np.asarray(noise, dtype=np.float64).ravel()
    if noise.shape[0] != posterior.mu.shape[0]:
        raise InvalidArgumentError(
            f"noise has length {noise.shape[0]}, posterior has {posterior.mu.shape[0]} weights"
        )
    return PointWeights(posterior.mu + posterior.sigma * noise, posterior.arch)


def _as_batch(inputs, arch: NetworkArch) -> Tuple[np.ndarray, bool]:
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise InvalidArgumentError(
            f"input dimension {x.shape[-1]} does not match arch input_dim {arch.input_dim}"
        )
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("inputs contain non-finite values")
    return x, single


def forward_batch(weights: np.ndarray, arch: NetworkArch, x: np.ndarray, keep: bool = False):
    """Logits for a batch ``x`` of shape ``(n, input_dim)``.

    With ``keep=True`` also returns the per-layer pre-activations and activations
    needed by :func:`backward_batch`.
    """
    layers = arch.unflatten(weights)
    h = x
    cache = [(None, x)]
    for i, (w, b) in enumerate(layers):
        a = h @ w.T + b
        if i < len(layers) - 1:
            h = softplus(a, arch.beta)
        else:
            h = a
        if keep:
            cache.append((a, h))
    if keep:
        return h, cache
    return h


def backward_batch(weights: np.ndarray, arch: NetworkArch, cache, grad_logits: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the flat weights, given ``dL/dlogits``."""
    layers = arch.unflatten(weights)
    grads = []
    delta = grad_logits
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        h_prev = cache[i][1]
        grads.append((delta.T @ h_prev, delta.sum(axis=0)))
        if i > 0:
            a_prev = cache[i][0]
            delta = (delta @ w) * sigmoid(arch.beta * a_prev)
    grads.reverse()
    return arch.flatten(grads)


def forward_logits(weights: PointWeights, inputs) -> np.ndarray:
    """Logit vector(s) of ``inputs`` under ``weights``.

    Accepts a single vector of length ``input_dim`` (returns shape ``(K,)``) or a
    2-D batch (returns shape ``(n, K)``).
    """
    x, single = _as_batch(inputs, weights.arch)
    out = forward_batch(weights.values, weights.arch, x)
    return out[0] if single else out


# -- serialisation ---------------------------------------------------------

def save_weights(values, path) -> None:
    """Write a flat vector as little-endian float64 behind a 16-byte header."""
    values = np.ascontiguousarray(np.asarray(values, dtype="<f8").ravel())
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, values.shape[0]))
        fh.write(values.tobytes())


def load_weights(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise InvalidArgumentError(f"{path}: truncated weight file header")
    magic, version, length = _HEADER.unpack_from(data)
    if magic != WEIGHTS_MAGIC:
        raise InvalidArgumentError(f"{path}: bad magic {magic!r}")
    if version != WEIGHTS_VERSION:
        raise InvalidArgumentError(f"{path}: unsupported version {version}")
    body = data[_HEADER.size:]
    if len(body) != 8 * length:
        raise InvalidArgumentError(f"{path}: expected {length} values, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64)


def save_weights_csv(columns: dict, path) -> None:
    """Debug text form: one row per weight, one column per named vector."""
    names = list(columns)
    arrays = [np.asarray(columns[n], dtype=np.float64).ravel() for n in names]
    with open(path, "w") as fh:
        fh.write("index," + ",".join(names) + "\n")
        for i, row in enumerate(zip(*arrays)):
            fh.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")


def load_weights_csv(path) -> dict:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    table = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return {name: table[:, j] for j, name in enumerate(header) if name != "index"}


def save_posterior(posterior: VariationalPosterior, path) -> None:
    """Posterior as one weight file holding ``mu`` followed by ``rho``."""
    save_weights(np.concatenate([posterior.mu, posterior.rho]), path)


def load_posterior(path, arch: NetworkArch) -> VariationalPosterior:
    values = load_weights(path)
    n = arch.num_weights
    if values.shape[0] != 2 * n:
        raise InvalidArgumentError(f"{path}: expected {2 * n} values for mu and rho")
    return VariationalPosterior(values[:n], values[n:], arch)
