"""Embeddings on the unit hypersphere and their scaled cosine similarities."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "EmbeddingBatch",
    "SimilarityMatrix",
    "project_to_sphere",
    "projection_vjp",
    "cosine_similarity_matrix",
    "DEFAULT_TEMPERATURE",
]

DEFAULT_TEMPERATURE = 0.1
_NORM_TOL = 1e-6
_MIN_NORM = 1e-12


def project_to_sphere(vector):
    """Scale a vector (or each row of a matrix) to unit Euclidean norm."""
    v = np.asarray(vector, dtype=float)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    bad = np.flatnonzero(norms.ravel() <= _MIN_NORM)
    if bad.size:
        raise ValueError(f"cannot project near-zero vector to the sphere (index {int(bad[0])})")
    return v / norms


def projection_vjp(raw, grad_unit):
    """Pull a gradient w.r.t. ``z = v / |v|`` back to the raw rows ``v``.

    Applies the projection Jacobian ``(I - z z^T) / |v|`` row by row.
    """
    v = np.asarray(raw, dtype=float)
    g = np.asarray(grad_unit, dtype=float)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    z = v / norms
    radial = np.sum(z * g, axis=-1, keepdims=True)
    return (g - radial * z) / norms


@dataclass(frozen=True)
class EmbeddingBatch:
    """N unit-norm embeddings with their continuous labels and site ids."""

    vectors: np.ndarray
    labels: np.ndarray
    sites: Optional[np.ndarray] = None

    def __post_init__(self):
        z = np.asarray(self.vectors, dtype=float)
        if z.ndim != 2 or z.shape[0] < 2 or z.shape[1] < 2:
            raise ValueError(f"embedding batch must be N x d with N >= 2, d >= 2; got shape {z.shape}")
        norms = np.linalg.norm(z, axis=1)
        off = np.flatnonzero(np.abs(norms - 1.0) > _NORM_TOL)
        if off.size:
            raise ValueError(f"embedding not on hypersphere (row {int(off[0])}, norm {norms[off[0]]:.3g})")
        y = np.asarray(self.labels, dtype=float).ravel()
        if y.shape[0] != z.shape[0]:
            raise ValueError("labels must have one entry per embedding")
        object.__setattr__(self, "vectors", z)
        object.__setattr__(self, "labels", y)
        if self.sites is not None:
            object.__setattr__(self, "sites", np.asarray(self.sites).ravel())

    def __len__(self):
        return self.vectors.shape[0]


@dataclass(frozen=True)
class SimilarityMatrix:
    """Pairwise ``<z_i, z_k> / temperature``.

    Keeps a reference to the unit embeddings it was computed from, so losses
    can return gradients with respect to the embeddings themselves.
    """

    values: np.ndarray
    temperature: float
    embeddings: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def cosine_similarity_matrix(batch, temperature: float = DEFAULT_TEMPERATURE) -> SimilarityMatrix:
    """Temperature-scaled cosine similarities of a batch of unit embeddings.

    ``batch`` may be an :class:`EmbeddingBatch` or a plain N x d array of unit
    vectors.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature!r}")
    z = batch.vectors if isinstance(batch, EmbeddingBatch) else np.asarray(batch, dtype=float)
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms <= _MIN_NORM) or np.any(np.abs(norms - 1.0) > _NORM_TOL):
        raise ValueError("embedding not on hypersphere")
    s = (z @ z.T) / temperature
    s = np.triu(s) + np.triu(s, 1).T
    s.setflags(write=False)
    return SimilarityMatrix(s, float(temperature), z)
