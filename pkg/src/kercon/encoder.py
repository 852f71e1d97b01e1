"""Feed-forward encoder onto the unit hypersphere, Adam, and the training loop.

The encoder is a small tanh MLP whose output is projected to the sphere.
Backpropagation is written out by hand; the projection Jacobian is shared
with the losses through :func:`kercon.similarity.projection_vjp`.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .kernels import LabelKernel
from .losses import LossKind, NoPositivePairsError, batch_loss
from .similarity import EmbeddingBatch, projection_vjp

logger = logging.getLogger(__name__)

__all__ = [
    "Encoder",
    "BaselineHead",
    "TrainConfig",
    "AdamState",
    "TrainResult",
    "forward",
    "backward",
    "adam_step",
    "learning_rate_at",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "write_trace",
]

BASELINE_LOSS = "l1"


@dataclass
class Encoder:
    """tanh MLP ``x -> v -> v / |v|``.

    Inputs are standardized with the fixed ``input_mean`` / ``input_scale``
    before the first layer; training sets them from the training features.
    """

    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input_mean: Optional[np.ndarray] = None
    input_scale: Optional[np.ndarray] = None

    @classmethod
    def init(cls, layer_sizes: Sequence[int], rng) -> "Encoder":
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {layer_sizes!r}")
        if sizes[-1] < 2:
            raise ValueError("embedding dimension must be >= 2")
        rng = np.random.default_rng(rng)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.normal(0.0, bound, size=(fan_in, fan_out)))
            # nonzero biases keep the net from being odd; with zero biases two
            # standardized points (x, -x) map to antipodal embeddings forever
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(sizes, weights, biases)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def embedding_dim(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params()))

    def _standardize(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected features of shape (N, {self.input_dim}), got {x.shape}")
        if self.input_mean is not None:
            x = (x - self.input_mean) / self.input_scale
        return x

    def forward_cache(self, x):
        """Forward pass keeping every activation for :meth:`backward`."""
        h = self._standardize(x)
        acts = [h]
        last = len(self.weights) - 1
        for j, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if j < last:
                h = np.tanh(h)
            acts.append(h)
        raw = acts[-1]
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        if np.any(norms <= 1e-12):
            raise ValueError("encoder output has near-zero norm; cannot project to the sphere")
        return acts, raw / norms

    def embed(self, x) -> np.ndarray:
        """Unit embeddings for a feature matrix."""
        return self.forward_cache(x)[1]

    def backward(self, acts, grad_unit) -> List[np.ndarray]:
        """Parameter gradients given d(loss)/dz for the unit outputs."""
        g = projection_vjp(acts[-1], grad_unit)
        grads = [None] * (2 * len(self.weights))
        for j in range(len(self.weights) - 1, -1, -1):
            if j < len(self.weights) - 1:
                g = g * (1.0 - acts[j + 1] ** 2)
            grads[2 * j] = acts[j].T @ g
            grads[2 * j + 1] = g.sum(axis=0)
            if j:
                g = g @ self.weights[j].T
        return grads

    def copy(self) -> "Encoder":
        return Encoder(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            None if self.input_mean is None else self.input_mean.copy(),
            None if self.input_scale is None else self.input_scale.copy(),
        )


def forward(encoder: Encoder, features, labels=None, sites=None) -> EmbeddingBatch:
    """Embed a batch of features as an :class:`EmbeddingBatch`."""
    z = encoder.embed(features)
    if labels is None:
        labels = np.full(z.shape[0], np.nan)
    return EmbeddingBatch(z, labels, sites)


def backward(encoder: Encoder, features, upstream_grad) -> List[np.ndarray]:
    """Parameter gradients (``[W0, b0, W1, b1, ...]``) for an upstream d/dz."""
    acts, _ = encoder.forward_cache(features)
    return encoder.backward(acts, np.asarray(upstream_grad, dtype=float))


@dataclass
class BaselineHead:
    """Linear map from the embedding to a standardized age prediction."""

    weight: np.ndarray
    bias: float
    target_mean: float = 0.0
    target_scale: float = 1.0

    def predict(self, z) -> np.ndarray:
        return (np.asarray(z) @ self.weight + self.bias) * self.target_scale + self.target_mean


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    lr_decay: float = 0.9
    decay_every_epochs: int = 10
    weight_decay: float = 5e-5
    batch_size: int = 32
    epochs: int = 300
    seed: int = 0
    temperature: float = 0.1
    loss: str = "exp"
    kernel: LabelKernel = field(default_factory=lambda: LabelKernel("rbf", 2.0))
    hidden: List[int] = field(default_factory=lambda: [64, 64])
    embedding_dim: int = 8
    thr_normalization: str = "weight"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if isinstance(self.kernel, dict):
            self.kernel = LabelKernel.from_config(self.kernel)
        for name in ("learning_rate", "lr_decay", "temperature"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 1 or self.decay_every_epochs < 1:
            raise ValueError("epochs and decay_every_epochs must be >= 1")
        if self.loss != BASELINE_LOSS:
            try:
                self.loss = LossKind.parse(self.loss).value
            except ValueError:
                valid = ", ".join([k.value for k in LossKind] + [BASELINE_LOSS])
                raise ValueError(f"unknown loss {self.loss!r}; valid names: {valid}") from None

    @property
    def baseline(self) -> bool:
        return self.loss == BASELINE_LOSS

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = self.kernel.to_config()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def learning_rate_at(config: TrainConfig, epoch: int) -> float:
    """Step schedule ``lr * decay ** floor(epoch / decay_every)``."""
    return config.learning_rate * config.lr_decay ** (epoch // config.decay_every_epochs)


def adam_step(params, grads, state: AdamState, config: TrainConfig, epoch: int = 0):
    """One Adam update with decoupled weight decay, applied in place."""
    lr = learning_rate_at(config, epoch)
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if config.weight_decay:
            p -= lr * config.weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return params, state


@dataclass
class TrainResult:
    encoder: Encoder
    trace: List[tuple]
    head: Optional[BaselineHead] = None
    skipped_batches: int = 0


def _batches(order, batch_size):
    out = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if out and len(out[-1]) < 2:
        out.pop()
    return out


def train(dataset, config: TrainConfig) -> TrainResult:
    """Train an encoder on ``dataset.features`` / ``dataset.ages``.

    Contrastive losses use the configured kernel on raw ages. In baseline
    mode (``loss="l1"``) a linear head on the embedding is trained jointly
    under mean absolute error on standardized ages.
    """
    x = np.asarray(dataset.features, dtype=float)
    y = np.asarray(dataset.ages, dtype=float)
    if x.shape[0] < 2:
        raise ValueError("dataset needs at least 2 samples")
    rng = np.random.default_rng(config.seed)
    enc = Encoder.init([x.shape[1], *config.hidden, config.embedding_dim], rng)
    enc.input_mean = x.mean(axis=0)
    scale = x.std(axis=0)
    enc.input_scale = np.where(scale > 0, scale, 1.0)

    head = None
    params = enc.params()
    if config.baseline:
        head = BaselineHead(
            rng.normal(0.0, 1.0, size=config.embedding_dim), 0.0, float(y.mean()), float(y.std() or 1.0)
        )
        head_bias = np.zeros(1)
        params = params + [head.weight, head_bias]
        target = (y - head.target_mean) / head.target_scale
    state = AdamState.zeros_like(params)
    kind = None if config.baseline else LossKind.parse(config.loss)

    trace = []
    skipped = 0
    for epoch in range(config.epochs):
        lr = learning_rate_at(config, epoch)
        losses = []
        for idx in _batches(rng.permutation(x.shape[0]), config.batch_size):
            acts, z = enc.forward_cache(x[idx])
            if config.baseline:
                pred = z @ head.weight + head_bias[0]
                resid = pred - target[idx]
                value = float(np.mean(np.abs(resid)))
                gpred = np.sign(resid) / len(idx)
                grad_z = np.outer(gpred, head.weight)
                extra = [z.T @ gpred, np.array([gpred.sum()])]
            else:
                try:
                    out = batch_loss(kind, z, y[idx], config.kernel, config.temperature, config.thr_normalization)
                except NoPositivePairsError:
                    skipped += 1
                    continue
                value, grad_z, extra = out.value, out.grad, []
            grads = enc.backward(acts, grad_z) + extra
            adam_step(params, grads, state, config, epoch)
            losses.append(value)
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        trace.append((epoch + 1, mean_loss, lr))
        logger.debug("epoch %d loss %.6f lr %.3g", epoch + 1, mean_loss, lr)
    if head is not None:
        head.bias = float(head_bias[0])
    return TrainResult(enc, trace, head, skipped)


def save_checkpoint(path, encoder: Encoder, head: Optional[BaselineHead] = None):
    """JSON checkpoint: layer sizes header plus a flat parameter array."""
    flat = np.concatenate([p.ravel() for p in encoder.params()])
    doc = {
        "layer_sizes": encoder.layer_sizes,
        "params": flat.tolist(),
        "input_mean": None if encoder.input_mean is None else encoder.input_mean.tolist(),
        "input_scale": None if encoder.input_scale is None else encoder.input_scale.tolist(),
    }
    if head is not None:
        doc["head"] = {
            "weight": head.weight.tolist(),
            "bias": head.bias,
            "target_mean": head.target_mean,
            "target_scale": head.target_scale,
        }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    sizes = doc["layer_sizes"]
    flat = np.asarray(doc["params"], dtype=float)
    expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if expected != flat.size:
        raise ValueError(f"checkpoint has {flat.size} parameters, layer sizes imply {expected}")
    weights, biases, pos = [], [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out))
        pos += fan_in * fan_out
        biases.append(flat[pos : pos + fan_out].copy())
        pos += fan_out
    enc = Encoder(sizes, weights, biases)
    if doc.get("input_mean") is not None:
        enc.input_mean = np.asarray(doc["input_mean"])
        enc.input_scale = np.asarray(doc["input_scale"])
    head = None
    if "head" in doc:
        h = doc["head"]
        head = BaselineHead(np.asarray(h["weight"]), h["bias"], h["target_mean"], h["target_scale"])
    return enc, head


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "lr"])
        for epoch, loss, lr in trace:
            writer.writerow([epoch, repr(float(loss)), repr(float(lr))])
