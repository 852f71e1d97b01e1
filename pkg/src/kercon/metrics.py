"""Challenge evaluation: age MAE, site balanced accuracy and the final score.

Representations are scored with two linear probes fit on training
embeddings only: a ridge regressor for age and a multinomial logistic
regressor for site. The challenge score ``BAcc ** 0.3 * MAE_ext`` rewards
accurate age prediction on unseen sites from representations that carry
little site information.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

__all__ = [
    "ProbeResult",
    "RidgeProbe",
    "LogisticProbe",
    "mae",
    "balanced_accuracy",
    "challenge_score",
    "fit_ridge_probe",
    "fit_logistic_probe",
    "evaluate",
    "PROBE_CSV_FIELDS",
]

PROBE_CSV_FIELDS = ["loss", "kernel", "bandwidth", "seed", "int_mae", "ext_mae", "bacc", "score"]


def mae(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise ValueError("mae of an empty set")
    return float(np.mean(np.abs(p - t)))


def balanced_accuracy(pred_sites, true_sites, classes=None) -> float:
    """Mean per-class recall.

    Classes default to those present in ``true_sites``; listed ``classes``
    with no true instance are excluded with a warning.
    """
    pred = np.asarray(pred_sites).ravel()
    true = np.asarray(true_sites).ravel()
    if pred.shape != true.shape:
        raise ValueError("prediction and truth lengths differ")
    if true.size == 0:
        raise ValueError("balanced accuracy of an empty set")
    present = np.unique(true)
    if classes is not None:
        missing = np.setdiff1d(np.asarray(classes), present)
        if missing.size:
            warnings.warn(f"classes {missing.tolist()} have no true instances; excluded from balanced accuracy")
    recalls = [np.mean(pred[true == c] == c) for c in present]
    return float(np.mean(recalls))


def challenge_score(bacc: float, mae_ext: float) -> float:
    """``bacc ** 0.3 * mae_ext`` with ``bacc`` as a fraction in [0, 1]."""
    if not 0.0 <= bacc <= 1.0:
        raise ValueError(f"balanced accuracy must be a fraction in [0, 1], got {bacc} (percent?)")
    if not mae_ext >= 0:
        raise ValueError(f"external MAE must be >= 0, got {mae_ext}")
    return float(bacc**0.3 * mae_ext)


@dataclass
class RidgeProbe:
    """Linear age regressor ``X @ weights + intercept``; the intercept is not penalized."""

    weights: np.ndarray
    intercept: float
    penalty: float

    def predict(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.weights + self.intercept


def fit_ridge_probe(x, y, penalty: float = 1.0) -> RidgeProbe:
    """Closed-form ridge on centred data: ``(Xc^T Xc + lam I) w = Xc^T yc``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError("x must be (N, d) with one target per row")
    if penalty < 0:
        raise ValueError("ridge penalty must be >= 0")
    x_mean = x.mean(axis=0)
    y_mean = y.mean()
    xc = x - x_mean
    gram = xc.T @ xc + penalty * np.eye(x.shape[1])
    try:
        if penalty == 0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
            raise np.linalg.LinAlgError
        w = np.linalg.solve(gram, xc.T @ (y - y_mean))
    except np.linalg.LinAlgError:
        raise ValueError("singular ridge system with penalty 0; use a penalty > 0") from None
    return RidgeProbe(w, float(y_mean - x_mean @ w), float(penalty))


@dataclass
class LogisticProbe:
    """Multinomial logistic regression on standardized features."""

    weights: np.ndarray
    intercepts: np.ndarray
    classes: np.ndarray
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    objective_trace: list

    def logits(self, x) -> np.ndarray:
        xs = (np.asarray(x, dtype=float) - self.feature_mean) / self.feature_scale
        return xs @ self.weights + self.intercepts

    def predict(self, x) -> np.ndarray:
        return self.classes[np.argmax(self.logits(x), axis=1)]


def _softmax_xent(logits, onehot):
    top = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - top)
    total = e.sum(axis=1, keepdims=True)
    probs = e / total
    nll = -np.sum(onehot * (logits - top - np.log(total))) / logits.shape[0]
    return nll, probs


def fit_logistic_probe(x, sites, epochs: int = 500, lr: float = 0.1, seed: int = 0) -> LogisticProbe:
    """Full-batch gradient descent on mean multinomial cross-entropy.

    Weights start at zero, so the fit is deterministic; ``seed`` is kept for
    interface symmetry with the other fitters.
    """
    x = np.asarray(x, dtype=float)
    sites = np.asarray(sites).ravel()
    classes = np.unique(sites)
    if classes.size < 2:
        raise ValueError("logistic probe needs at least 2 sites")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    xs = (x - mean) / scale
    n, d = xs.shape
    onehot = (sites[:, None] == classes[None, :]).astype(float)
    w = np.zeros((d, classes.size))
    b = np.zeros(classes.size)
    trace = []
    for _ in range(epochs):
        nll, probs = _softmax_xent(xs @ w + b, onehot)
        trace.append(nll)
        g = (probs - onehot) / n
        w -= lr * (xs.T @ g)
        b -= lr * g.sum(axis=0)
    trace.append(_softmax_xent(xs @ w + b, onehot)[0])
    return LogisticProbe(w, b, classes, mean, scale, trace)


@dataclass
class ProbeResult:
    mae_internal: float
    mae_external: float
    site_bacc: float
    challenge_score: float

    def __post_init__(self):
        expected = challenge_score(self.site_bacc, self.mae_external)
        if not math.isclose(self.challenge_score, expected, rel_tol=0, abs_tol=1e-9):
            raise ValueError("challenge_score inconsistent with site_bacc and mae_external")

    def to_dict(self) -> dict:
        return asdict(self)


def _embed(encoder, features):
    if hasattr(encoder, "embed"):
        return encoder.embed(features)
    return np.asarray(encoder(features), dtype=float)


def evaluate(
    encoder,
    splits,
    ridge_penalty: float = 1.0,
    logistic_epochs: int = 500,
    logistic_lr: float = 0.1,
    head=None,
) -> ProbeResult:
    """Score an encoder on ``splits["train" | "internal" | "external"]``.

    Each split needs ``features``, ``ages`` and ``sites``. ``encoder`` is an
    :class:`~kercon.encoder.Encoder` or any callable mapping features to
    embeddings. Age comes from a ridge probe fit on the train embeddings, or
    from ``head.predict`` when a baseline head is given. The site probe is fit
    on train embeddings and scored on the internal test set.
    """
    train, internal, external = splits["train"], splits["internal"], splits["external"]
    leaked = np.intersect1d(np.unique(train.sites), np.unique(external.sites))
    if leaked.size:
        raise ValueError(f"external split leaks training sites: {leaked.tolist()}")

    z_train = _embed(encoder, train.features)
    z_int = _embed(encoder, internal.features)
    z_ext = _embed(encoder, external.features)

    if head is None:
        predictor = fit_ridge_probe(z_train, train.ages, ridge_penalty).predict
    else:
        predictor = head.predict
    int_mae = mae(predictor(z_int), internal.ages)
    ext_mae = mae(predictor(z_ext), external.ages)

    site_probe = fit_logistic_probe(z_train, train.sites, logistic_epochs, logistic_lr)
    unseen = np.setdiff1d(np.unique(internal.sites), site_probe.classes)
    if unseen.size:
        warnings.warn(f"internal sites {unseen.tolist()} absent from training; they count as misses")
    bacc = balanced_accuracy(site_probe.predict(z_int), internal.sites)
    return ProbeResult(int_mae, ext_mae, bacc, challenge_score(bacc, ext_mae))
