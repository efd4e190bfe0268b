"""Dense primitives for the loss head.

Every function works on float64 arrays. Batched inputs are accepted
wherever it makes sense: reductions and normalizations run along the last
axis, so a single vector and a stack of vectors go through the same code.
"""

import numpy as np

from massl import defaults
from massl import errors


def as_vecf(data):
    """Return ``data`` as a finite float64 array with at least one entry."""
    v = np.asarray(data, dtype=np.float64)
    if v.ndim == 0 or v.shape[-1] < 1:
        raise errors.InvalidShape(f"expected a vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise errors.InvalidParameter("vector has non-finite entries")
    return v


def is_unit(v, tol=defaults.UNIT_NORM_TOL):
    """True when every row of ``v`` has unit L2 norm within ``tol``."""
    norms = np.linalg.norm(np.asarray(v, dtype=np.float64), axis=-1)
    return bool(np.all(np.abs(norms - 1.0) <= tol))


def l2_normalize(v):
    """Project ``v`` (or each of its rows) onto the unit sphere.

    :param v: vector or stack of vectors
    :returns: array of the same shape with unit-norm rows
    :raises NearZeroNorm: when any row has norm <= 1e-12
    """
    v = as_vecf(v)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms <= defaults.NORM_EPS):
        raise errors.NearZeroNorm("cannot normalize a vector with norm <= 1e-12")
    return v / norms


def cosine_scores(z, block):
    """Cosine similarity between ``z`` and each row of ``block``.

    Inputs are already unit vectors, so the cosine is a dot product.

    :param z: unit vector (D,) or stack of unit vectors (N, D)
    :param block: (N_b, D) matrix of unit rows
    :returns: (N_b,) or (N, N_b) scores
    """
    z = np.asarray(z, dtype=np.float64)
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2 or z.shape[-1] != block.shape[1]:
        raise errors.DimMismatch(
            f"cannot score shape {z.shape} against block {block.shape}"
        )
    return z @ block.T


def _check_tau(tau):
    if not tau > 0:
        raise errors.NonPositiveTemperature(f"temperature must be > 0, got {tau}")


def log_softmax(logits, tau):
    """Log of the tempered softmax, computed in shifted log-space."""
    _check_tau(tau)
    scaled = np.asarray(logits, dtype=np.float64) / tau
    shifted = scaled - np.max(scaled, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def tempered_softmax(logits, tau):
    """Softmax of ``logits / tau`` along the last axis.

    :raises NonPositiveTemperature: when ``tau <= 0``
    """
    return np.exp(log_softmax(logits, tau))


def entropy(p):
    """Shannon entropy in nats along the last axis (0 log 0 = 0)."""
    p = np.asarray(p, dtype=np.float64)
    logs = np.log(np.where(p > 0, p, 1.0))
    return -np.sum(p * logs, axis=-1)


def cross_entropy(target, pred_log):
    """H(target, pred) = -sum_k target[k] * pred_log[k].

    :param target: distribution(s) over the last axis
    :param pred_log: log-probabilities of the same shape
    """
    target = np.asarray(target, dtype=np.float64)
    pred_log = np.asarray(pred_log, dtype=np.float64)
    if target.shape != pred_log.shape:
        raise errors.DimMismatch(
            f"target shape {target.shape} != prediction shape {pred_log.shape}"
        )
    # Terms with zero target weight contribute nothing even if pred_log is -inf.
    return -np.sum(target * np.where(target > 0, pred_log, 0.0), axis=-1)


def ce_softmax_grad(logits, target, tau):
    """Gradient of cross_entropy(target, log_softmax(logits, tau)) w.r.t. logits.

    Equals ``(softmax(logits / tau) - target) / tau``.
    """
    p = tempered_softmax(logits, tau)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != p.shape:
        raise errors.DimMismatch(
            f"target shape {target.shape} != logits shape {p.shape}"
        )
    return (p - target) / tau
