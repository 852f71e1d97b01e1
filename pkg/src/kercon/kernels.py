"""Label-distance kernels and per-batch "degree of positiveness" matrices.

A kernel maps the difference between two continuous labels to a weight in
[0, 1]: 1 for identical labels, decaying towards 0 as labels move apart.
These weights replace the hard positive/negative split of classification
contrastive losses.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "KernelKind",
    "LabelKernel",
    "WeightMatrix",
    "kernel_eval",
    "weight_matrix",
]


class KernelKind(enum.Enum):
    GAUSSIAN = "rbf"
    CAUCHY = "cauchy"
    DELTA = "delta"


@dataclass(frozen=True)
class LabelKernel:
    """A label kernel and its bandwidth.

    ``bandwidth`` is sigma for the Gaussian kernel and gamma for the Cauchy
    kernel. It is ignored for the Delta kernel.
    """

    kind: KernelKind
    bandwidth: float = 1.0

    def __post_init__(self):
        kind = self.kind
        if isinstance(kind, str):
            kind = _parse_kind(kind)
            object.__setattr__(self, "kind", kind)
        if kind is not KernelKind.DELTA:
            bw = float(self.bandwidth)
            if not (math.isfinite(bw) and bw > 0):
                raise ValueError(f"bandwidth must be > 0 for {kind.value} kernel, got {self.bandwidth!r}")
            object.__setattr__(self, "bandwidth", bw)

    def __call__(self, u):
        return _evaluate(self, np.asarray(u, dtype=float))

    @classmethod
    def from_config(cls, cfg: dict) -> "LabelKernel":
        """Build from ``{"kernel": "rbf"|"cauchy"|"delta", "bandwidth": float}``."""
        if "kernel" not in cfg:
            raise ValueError("kernel config is missing the 'kernel' field")
        return cls(_parse_kind(cfg["kernel"]), float(cfg.get("bandwidth", 1.0)))

    def to_config(self) -> dict:
        return {"kernel": self.kind.value, "bandwidth": self.bandwidth}


def _parse_kind(name) -> KernelKind:
    if isinstance(name, KernelKind):
        return name
    aliases = {"rbf": "rbf", "gaussian": "rbf", "cauchy": "cauchy", "delta": "delta"}
    key = aliases.get(str(name).lower())
    if key is None:
        valid = ", ".join(k.value for k in KernelKind)
        raise ValueError(f"unknown kernel {name!r}; valid names: {valid}")
    return KernelKind(key)


def _evaluate(kernel: LabelKernel, u: np.ndarray) -> np.ndarray:
    if kernel.kind is KernelKind.GAUSSIAN:
        return np.exp(-(u * u) / (2.0 * kernel.bandwidth**2))
    if kernel.kind is KernelKind.CAUCHY:
        return 1.0 / (kernel.bandwidth * u * u + 1.0)
    return (u == 0).astype(float)


def kernel_eval(kernel: LabelKernel, u: float) -> float:
    """Evaluate ``K(u)`` for a scalar label difference."""
    u = float(u)
    if not math.isfinite(u):
        raise ValueError(f"invalid label difference: {u!r}")
    return float(_evaluate(kernel, np.asarray(u)))


@dataclass(frozen=True)
class WeightMatrix:
    """Symmetric N x N matrix of kernel weights with a zero diagonal.

    The zero diagonal encodes that an anchor is never its own positive.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def weight_matrix(
    kernel: LabelKernel,
    labels,
    distance: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
) -> WeightMatrix:
    """Kernel weights ``K(y_i - y_k)`` for every ordered pair of a batch.

    ``distance`` maps broadcast label arrays ``(y[:, None], y[None, :])`` to
    the kernel argument; the default is the plain difference.
    """
    y = np.asarray(labels, dtype=float).ravel()
    if y.size < 2:
        raise ValueError("batch too small for contrastive loss")
    if not np.all(np.isfinite(y)):
        raise ValueError("invalid label difference: labels must be finite")
    if distance is None:
        u = y[:, None] - y[None, :]
    else:
        u = np.asarray(distance(y[:, None], y[None, :]), dtype=float)
    w = _evaluate(kernel, u)
    # mirror the upper triangle: exact symmetry even for a custom distance
    w = np.triu(w, 1)
    w = w + w.T
    return WeightMatrix(w)
