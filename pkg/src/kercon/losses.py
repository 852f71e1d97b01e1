"""Kernel-weighted contrastive losses for regression, with analytic gradients.

Every loss is evaluated per anchor ``i`` over the other samples of the batch
``A(i)``, with kernel weights ``w_k = K(y_i - y_k)`` and similarities
``s_k = <z_i, z_k> / T``:

* ``yaware``: ``-sum_k w_k / sum_t w_t * log softmax_{t in A(i)}(s)_k``
* ``thr``: like ``yaware``, but the softmax denominator for ``k`` only runs
  over samples strictly less positive than ``k`` (``w_t < w_k``)
* ``exp``: the denominator uses ``exp(s_t * (1 - w_t))``, so samples close to
  the anchor in label space are barely repelled
* ``supcon``: the classification special case (Delta kernel)

Batch values are the mean over anchors that have at least one non-zero
weight. Gradients are returned with respect to the unit embeddings; use
:func:`kercon.similarity.projection_vjp` to carry them to raw vectors.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .kernels import KernelKind, LabelKernel, WeightMatrix, weight_matrix
from .similarity import SimilarityMatrix, cosine_similarity_matrix, project_to_sphere, projection_vjp

__all__ = [
    "LossKind",
    "LossOutput",
    "NoPositivePairsError",
    "THR_NORMALIZATIONS",
    "yaware_loss",
    "thr_loss",
    "exp_loss",
    "supcon_loss",
    "contrastive_loss",
    "anchor_loss",
    "margin_oracle",
    "logsumexp_slack",
    "loss_gradient_check",
]

THR_NORMALIZATIONS = ("weight", "count")


class NoPositivePairsError(ValueError):
    def __init__(self, msg="no positive pairs in batch"):
        super().__init__(msg)


class LossKind(enum.Enum):
    YAWARE = "yaware"
    THRESHOLD = "thr"
    EXP = "exp"
    SUPCON = "supcon"

    @classmethod
    def parse(cls, name) -> "LossKind":
        if isinstance(name, cls):
            return name
        aliases = {
            "yaware": cls.YAWARE,
            "y-aware": cls.YAWARE,
            "thr": cls.THRESHOLD,
            "threshold": cls.THRESHOLD,
            "exp": cls.EXP,
            "supcon": cls.SUPCON,
        }
        try:
            return aliases[str(name).lower()]
        except KeyError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown loss {name!r}; valid names: {valid}") from None


@dataclass(frozen=True)
class LossOutput:
    """Batch loss value and its gradients.

    ``grad`` is d(loss)/dz for the unit embeddings (N x d); ``grad_sims`` is
    d(loss)/ds for the scaled similarity entries (N x N).
    """

    value: float
    grad: np.ndarray
    grad_sims: np.ndarray
    n_anchors: int


# --------------------------------------------------------------------------
# per-anchor kernels, vectorised over a stack of anchor rows
#
# s, w: (A, M) similarities / weights of each anchor to M candidates
# mask: (A, M) True where the candidate belongs to A(i)
# returns per-anchor values (A,), d value / d s (A, M), active anchors (A,)
# --------------------------------------------------------------------------


def _masked_lse(x, mask):
    """Log-sum-exp along the last axis over masked entries, plus the softmax.

    Empty rows give -inf and an all-zero softmax.
    """
    xm = np.where(mask, x, -np.inf)
    top = np.max(xm, axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(xm - top), 0.0)
    total = np.sum(e, axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        lse = np.log(total) + top
    p = np.divide(e, total, out=np.zeros_like(e), where=total > 0)
    return lse[..., 0], p


def _yaware_rows(s, w, mask):
    w = np.where(mask, w, 0.0)
    wsum = w.sum(axis=1)
    active = wsum > 0
    coef = np.divide(w, wsum[:, None], out=np.zeros_like(w), where=active[:, None])
    lse, p = _masked_lse(s, mask)
    values = np.where(active, lse - np.sum(coef * np.where(mask, s, 0.0), axis=1), 0.0)
    grad = np.where(active[:, None], p - coef, 0.0)
    return values, grad, active


def _thr_sets(w, mask):
    """Boolean (A, K, T): t is in the uniformity set of positive k."""
    return mask[:, None, :] & mask[:, :, None] & (w[:, None, :] < w[:, :, None])


def _thr_coef(w, mask, normalization):
    w = np.where(mask, w, 0.0)
    sets = _thr_sets(w, mask)
    count = sets.sum(axis=2).astype(float)
    if normalization == "weight":
        norm = np.sum(np.where(sets, w[:, None, :], 0.0), axis=2)
        norm = np.where(norm > 0, norm, count)
    elif normalization == "count":
        norm = count
    else:
        raise ValueError(f"unknown thr normalization {normalization!r}; valid: {', '.join(THR_NORMALIZATIONS)}")
    # k-terms with an empty uniformity set are dropped
    coef = np.divide(w, norm, out=np.zeros_like(w), where=count > 0)
    return coef, sets, count


def _thr_rows(s, w, mask, normalization="weight"):
    active = np.where(mask, w, 0.0).sum(axis=1) > 0
    coef, sets, _ = _thr_coef(w, mask, normalization)
    coef = np.where(active[:, None], coef, 0.0)
    lse, p = _masked_lse(np.broadcast_to(s[:, None, :], sets.shape), sets)
    used = coef > 0
    gap = np.where(used, lse - s, 0.0)
    values = np.sum(coef * gap, axis=1)
    grad = np.einsum("ak,akt->at", coef, p) - coef
    return values, grad, active


def _exp_uniformity(s, w):
    return s * (1.0 - w)


def _exp_rows(s, w, mask):
    w = np.where(mask, w, 0.0)
    wsum = w.sum(axis=1)
    active = wsum > 0
    coef = np.divide(w, wsum[:, None], out=np.zeros_like(w), where=active[:, None])
    lse, p = _masked_lse(_exp_uniformity(s, w), mask)
    values = np.where(active, lse - np.sum(coef * np.where(mask, s, 0.0), axis=1), 0.0)
    grad = np.where(active[:, None], p * (1.0 - w) - coef, 0.0)
    return values, grad, active


def _rows(kind, s, w, mask, thr_normalization="weight"):
    if kind is LossKind.YAWARE:
        return _yaware_rows(s, w, mask)
    if kind is LossKind.THRESHOLD:
        return _thr_rows(s, w, mask, thr_normalization)
    if kind is LossKind.EXP:
        return _exp_rows(s, w, mask)
    raise ValueError(f"{kind} has no kernel-weighted row form")


def anchor_loss(kind, s, w, thr_normalization="weight"):
    """Loss of a single anchor given its similarities and weights to the others.

    Returns ``(value, d value / d s)``. Anchors whose weights are all zero
    yield ``(0.0, zeros)``.
    """
    kind = LossKind.parse(kind)
    s = np.atleast_2d(np.asarray(s, dtype=float))
    w = np.atleast_2d(np.asarray(w, dtype=float))
    values, grad, _ = _rows(kind, s, w, np.ones_like(s, dtype=bool), thr_normalization)
    return float(values[0]), grad[0]


# --------------------------------------------------------------------------
# batch losses
# --------------------------------------------------------------------------


def _check_pair(sims: SimilarityMatrix, weights):
    w = weights.values if isinstance(weights, WeightMatrix) else np.asarray(weights, dtype=float)
    if w.shape != sims.values.shape:
        raise ValueError(f"similarity {sims.values.shape} and weight {w.shape} matrices differ in size")
    return w


def _reduce(sims: SimilarityMatrix, values, grad_rows, active) -> LossOutput:
    n_active = int(active.sum())
    if n_active == 0:
        raise NoPositivePairsError()
    value = float(np.sum(values[active]) / n_active)
    g = np.where(active[:, None], grad_rows, 0.0) / n_active
    np.fill_diagonal(g, 0.0)
    z = sims.embeddings
    grad = (g + g.T) @ z / sims.temperature
    return LossOutput(value, grad, g, n_active)


def _batch(kind, sims, weights, thr_normalization="weight"):
    w = _check_pair(sims, weights)
    mask = ~np.eye(sims.n, dtype=bool)
    values, grad_rows, active = _rows(kind, sims.values, w, mask, thr_normalization)
    return _reduce(sims, values, grad_rows, active)


def yaware_loss(sims: SimilarityMatrix, weights) -> LossOutput:
    """Kernel-weighted SupCon ("y-aware") loss.

    The softmax denominator runs over every sample except the anchor,
    including the aligned sample ``k`` itself.
    """
    return _batch(LossKind.YAWARE, sims, weights)


def thr_loss(sims: SimilarityMatrix, weights, normalization: str = "weight") -> LossOutput:
    """Threshold loss: repel only samples strictly less positive than ``k``.

    ``normalization`` selects the per-term weight ``w_k / Z_k``:

    ``"weight"``
        ``Z_k`` is the summed weight of the uniformity set, falling back to
        its size when all of those weights are zero.
    ``"count"``
        ``Z_k`` is the size of the uniformity set.

    Terms whose uniformity set is empty are dropped.
    """
    return _batch(LossKind.THRESHOLD, sims, weights, normalization)


def exp_loss(sims: SimilarityMatrix, weights) -> LossOutput:
    """Exponentially re-weighted loss.

    Each sample ``t`` of the denominator enters as ``exp(s_t * (1 - w_t))``;
    the sum runs over all non-anchor samples, ``k`` included.
    """
    return _batch(LossKind.EXP, sims, weights)


def supcon_loss(sims: SimilarityMatrix, discrete_labels) -> LossOutput:
    """Supervised contrastive loss over discrete class ids.

    Anchors without a same-class partner are skipped.
    """
    labels = np.asarray(discrete_labels).ravel()
    n = sims.n
    if labels.shape[0] != n:
        raise ValueError("need one class id per sample")
    not_self = ~np.eye(n, dtype=bool)
    positives = (labels[:, None] == labels[None, :]) & not_self
    n_pos = positives.sum(axis=1)
    active = n_pos > 0
    s = sims.values
    logits = np.where(not_self, s, -np.inf)
    top = logits.max(axis=1, keepdims=True)
    log_denom = np.log(np.sum(np.exp(logits - top), axis=1)) + top[:, 0]
    log_prob = s - log_denom[:, None]
    mean_log_prob_pos = np.divide(
        np.sum(np.where(positives, log_prob, 0.0), axis=1), n_pos, out=np.zeros(n), where=active
    )
    values = -mean_log_prob_pos
    softmax = np.where(not_self, np.exp(logits - log_denom[:, None]), 0.0)
    pos_frac = np.divide(positives, n_pos[:, None], out=np.zeros((n, n)), where=active[:, None])
    return _reduce(sims, values, softmax - pos_frac, active)


def contrastive_loss(kind, sims: SimilarityMatrix, weights, thr_normalization: str = "weight") -> LossOutput:
    """Dispatch on :class:`LossKind`.

    For ``supcon`` the weights must come from a Delta kernel; the classes are
    recovered from the connected groups of the weight matrix.
    """
    kind = LossKind.parse(kind)
    if kind is LossKind.SUPCON:
        w = _check_pair(sims, weights)
        return supcon_loss(sims, _classes_from_delta(w))
    return _batch(kind, sims, weights, thr_normalization)


def _classes_from_delta(w):
    w = np.asarray(w)
    off = w[~np.eye(w.shape[0], dtype=bool)]
    if not np.all((off == 0) | (off == 1)):
        raise ValueError("supcon loss is only valid with the delta kernel")
    classes = -np.ones(w.shape[0], dtype=int)
    for i in range(w.shape[0]):
        if classes[i] < 0:
            members = np.flatnonzero(w[i] == 1)
            classes[i] = i
            classes[members] = i
    return classes


def batch_loss(kind, embeddings, labels, kernel: LabelKernel, temperature: float, thr_normalization="weight"):
    """Loss of unit embeddings with continuous labels under ``kernel``."""
    kind = LossKind.parse(kind)
    sims = cosine_similarity_matrix(embeddings, temperature)
    if kind is LossKind.SUPCON:
        if kernel.kind is not KernelKind.DELTA:
            raise ValueError("supcon loss is only valid with the delta kernel")
        return supcon_loss(sims, labels)
    return _batch(kind, sims, weight_matrix(kernel, labels), thr_normalization)


# --------------------------------------------------------------------------
# hard-max counterparts
# --------------------------------------------------------------------------


def _margin_rows(kind, s, w, mask, thr_normalization="weight", hinge=True):
    """Per-anchor sum_k c_k max(...) and the LogSumExp slack sum_k c_k log n_k."""
    if kind is LossKind.THRESHOLD:
        active = np.where(mask, w, 0.0).sum(axis=1) > 0
        coef, sets, count = _thr_coef(w, mask, thr_normalization)
        coef = np.where(active[:, None], coef, 0.0)
        diffs = s[:, None, :] - s[:, :, None]
    else:
        wm = np.where(mask, w, 0.0)
        wsum = wm.sum(axis=1)
        active = wsum > 0
        coef = np.divide(wm, wsum[:, None], out=np.zeros_like(wm), where=active[:, None])
        x = _exp_uniformity(s, wm) if kind is LossKind.EXP else s
        diffs = x[:, None, :] - s[:, :, None]
        sets = np.broadcast_to(mask[:, None, :] & mask[:, :, None], diffs.shape)
        count = sets.sum(axis=2).astype(float)
    top = np.max(np.where(sets, diffs, -np.inf), axis=2)
    if hinge:
        top = np.maximum(top, 0.0)
    used = coef > 0
    oracle = np.sum(np.multiply(coef, top, out=np.zeros_like(coef), where=used), axis=1)
    slack = np.sum(np.where(used, coef * np.log(np.maximum(count, 1.0)), 0.0), axis=1)
    return oracle, slack, active


def margin_oracle(kind, sims: SimilarityMatrix, weights, thr_normalization="weight", hinge=True, per_anchor=False):
    """Weighted-max objective that each smooth loss relaxes.

    For anchor ``i``: ``sum_k c_k max{u_t - s_k}`` over the same candidate set
    ``t`` and the same coefficients ``c_k`` as the smooth loss, with
    ``u_t = s_t`` (``yaware``, ``thr``) or ``s_t (1 - w_t)`` (``exp``).
    ``hinge=True`` clamps each max at 0. Without the clamp the smooth loss is
    bounded by ``[oracle, oracle + logsumexp_slack]``; for ``yaware`` the
    candidate set contains ``t = k`` so both forms agree.
    """
    kind = LossKind.parse(kind)
    if kind is LossKind.SUPCON:
        raise ValueError("margin oracle is defined for yaware, thr and exp")
    w = _check_pair(sims, weights)
    mask = ~np.eye(sims.n, dtype=bool)
    oracle, _, active = _margin_rows(kind, sims.values, w, mask, thr_normalization, hinge)
    if not active.any():
        raise NoPositivePairsError()
    if per_anchor:
        return oracle
    return float(oracle[active].mean())


def logsumexp_slack(kind, sims: SimilarityMatrix, weights, thr_normalization="weight", per_anchor=False):
    """Upper gap ``sum_k c_k log(n_k)`` between a smooth loss and its hard max."""
    kind = LossKind.parse(kind)
    w = _check_pair(sims, weights)
    mask = ~np.eye(sims.n, dtype=bool)
    _, slack, active = _margin_rows(kind, sims.values, w, mask, thr_normalization)
    if per_anchor:
        return slack
    return float(slack[active].mean())


# --------------------------------------------------------------------------
# finite-difference check
# --------------------------------------------------------------------------


def loss_gradient_check(kind, sims: SimilarityMatrix, weights, epsilon: float = 1e-6, thr_normalization="weight"):
    """Max relative error between the analytic and central-difference gradient.

    Differences are taken w.r.t. each coordinate of the raw embeddings,
    re-projecting to the sphere and recomputing similarities at every probe.
    The error is ``max|a - f| / max(max|a|, max|f|)``, or the absolute error
    when both gradients vanish.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    kind = LossKind.parse(kind)
    w = _check_pair(sims, weights)
    raw = np.array(sims.embeddings, dtype=float)
    tau = sims.temperature

    def f(v):
        s = cosine_similarity_matrix(project_to_sphere(v), tau)
        return contrastive_loss(kind, s, w, thr_normalization)

    analytic = projection_vjp(raw, f(raw).grad)
    numeric = np.zeros_like(raw)
    for idx in np.ndindex(*raw.shape):
        plus = raw.copy()
        plus[idx] += epsilon
        minus = raw.copy()
        minus[idx] -= epsilon
        numeric[idx] = (f(plus).value - f(minus).value) / (2 * epsilon)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max())
    err = np.abs(analytic - numeric).max()
    if scale < 1e-12:
        return float(err)
    return float(err / scale)
