"""Frozen-feature evaluation: k-NN and linear probes, clustering scores and
collapse diagnostics.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_mutual_info_score
from sklearn.metrics import adjusted_rand_score
from sklearn.metrics import normalized_mutual_info_score

from massl import defaults
from massl import errors
from massl import numkernel

LOGGER = logging.getLogger("massl")


@dataclass(frozen=True)
class KnnConfig:
    k: int = defaults.ABLATION_KNN_K
    temperature: float = defaults.DEF_KNN_TEMPERATURE


@dataclass(frozen=True)
class Diagnostics:
    feature_std: float
    target_entropy: float
    entropy_ratio: float
    effective_rank: float
    collapsed: bool


def _neighbors(train_feats, test_feats, k, chunk=1024):
    """Indices and similarities of the k most similar reference rows.

    Ties in similarity go to the lower reference index.
    """
    idx_out, sim_out = [], []
    for start in range(0, test_feats.shape[0], chunk):
        sims = test_feats[start : start + chunk] @ train_feats.T
        order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
        idx_out.append(order)
        sim_out.append(np.take_along_axis(sims, order, axis=1))
    return np.concatenate(idx_out), np.concatenate(sim_out)


def _knn_vote(neighbor_labels, neighbor_sims, temperature, num_classes):
    scores = np.zeros((neighbor_labels.shape[0], num_classes))
    weights = np.exp(neighbor_sims / temperature)
    np.add.at(scores, (np.arange(neighbor_labels.shape[0])[:, None], neighbor_labels), weights)
    # argmax returns the lowest class index among ties.
    return np.argmax(scores, axis=1)


def _check_reference(train_feats, k):
    if train_feats.shape[0] == 0:
        raise errors.EmptyReferenceSet("k-NN needs at least one reference point")
    if not 1 <= k <= train_feats.shape[0]:
        raise errors.InvalidParameter(
            f"k must be in [1, {train_feats.shape[0]}], got {k}"
        )


def knn_predict(train_feats, train_labels, test_feats, cfg, num_classes=None):
    """Similarity-weighted k-NN predictions for each test row."""
    train_feats = np.asarray(train_feats, dtype=np.float64)
    test_feats = np.asarray(test_feats, dtype=np.float64)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    _check_reference(train_feats, cfg.k)
    if num_classes is None:
        num_classes = int(train_labels.max()) + 1
    idx, sims = _neighbors(train_feats, test_feats, cfg.k)
    return _knn_vote(train_labels[idx], sims, cfg.temperature, num_classes)


def knn_probe(train_feats, train_labels, test_feats, test_labels, cfg):
    """Top-1 accuracy of the weighted k-NN classifier.

    Each neighbor votes exp(similarity / temperature) for its class.
    """
    test_labels = np.asarray(test_labels, dtype=np.int64)
    _check_reference(np.asarray(train_feats), cfg.k)
    if test_labels.size == 0:
        return 0.0
    num_classes = int(max(np.max(train_labels), test_labels.max())) + 1
    pred = knn_predict(train_feats, train_labels, test_feats, cfg, num_classes)
    return float(np.mean(pred == test_labels))


def knn_sweep(train_feats, train_labels, test_feats, test_labels, ks, temperature=defaults.DEF_KNN_TEMPERATURE):
    """k-NN accuracy for several k from a single neighbor search.

    Values of k larger than the reference set are clipped to its size.
    """
    train_feats = np.asarray(train_feats, dtype=np.float64)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    k_max = min(max(ks), train_feats.shape[0])
    _check_reference(train_feats, k_max)
    num_classes = int(max(train_labels.max(), test_labels.max())) + 1
    idx, sims = _neighbors(train_feats, np.asarray(test_feats, dtype=np.float64), k_max)
    labels = train_labels[idx]
    results = {}
    for k in ks:
        kk = min(k, k_max)
        pred = _knn_vote(labels[:, :kk], sims[:, :kk], temperature, num_classes)
        results[k] = float(np.mean(pred == test_labels))
    return results


def _softmax_rows(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def linear_probe(
    train_feats,
    train_labels,
    test_feats,
    test_labels,
    epochs=defaults.DEF_LINEAR_EPOCHS,
    lr=defaults.DEF_LINEAR_LR,
    batch_size=defaults.DEF_LINEAR_BATCH_SIZE,
    seed=0,
    num_classes=None,
):
    """Softmax regression on frozen features, mini-batch SGD with cosine lr.

    :returns: top-1 accuracy on the test rows
    """
    x = np.asarray(train_feats, dtype=np.float64)
    y = np.asarray(train_labels, dtype=np.int64)
    x_test = np.asarray(test_feats, dtype=np.float64)
    y_test = np.asarray(test_labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(max(y.max(), y_test.max())) + 1
    n, d = x.shape
    rng = np.random.default_rng(seed)
    weight = np.zeros((d, num_classes))
    bias = np.zeros(num_classes)
    batch_size = min(batch_size, n)
    steps_per_epoch = math.ceil(n / batch_size)
    total = max(epochs * steps_per_epoch, 1)
    onehot = np.eye(num_classes)[y]
    step = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            step_lr = lr * 0.5 * (1.0 + math.cos(math.pi * step / total))
            probs = _softmax_rows(x[idx] @ weight + bias)
            g = (probs - onehot[idx]) / idx.size
            weight -= step_lr * (x[idx].T @ g)
            bias -= step_lr * g.sum(axis=0)
            step += 1
    if y_test.size == 0:
        return 0.0
    pred = np.argmax(x_test @ weight + bias, axis=1)
    return float(np.mean(pred == y_test))


def linear_probe_sweep(train_feats, train_labels, test_feats, test_labels, lrs=defaults.DEF_LINEAR_SWEEP_LRS, **kwargs):
    """Train one probe per learning rate and keep the best.

    :returns: (best_lr, best_accuracy, {lr: accuracy})
    """
    table = {
        lr: linear_probe(train_feats, train_labels, test_feats, test_labels, lr=lr, **kwargs)
        for lr in lrs
    }
    best_lr = max(table, key=lambda lr: (table[lr], -lr))
    LOGGER.debug("Linear probe sweep: %s", table)
    return best_lr, table[best_lr], table


def low_shot_probe(
    train_feats,
    train_labels,
    test_feats,
    test_labels,
    shots,
    repeats=defaults.DEF_LOW_SHOT_REPEATS,
    seed=0,
    **kwargs,
):
    """Linear probes trained on ``shots`` random examples per class.

    :returns: (mean accuracy, standard deviation) over ``repeats`` draws
    """
    train_labels = np.asarray(train_labels, dtype=np.int64)
    train_feats = np.asarray(train_feats, dtype=np.float64)
    num_classes = int(max(train_labels.max(), np.max(test_labels))) + 1
    rng = np.random.default_rng(seed)
    scores = []
    for r in range(repeats):
        picked = []
        for c in np.unique(train_labels):
            members = np.flatnonzero(train_labels == c)
            picked.extend(rng.choice(members, size=min(shots, members.size), replace=False))
        picked = np.sort(np.array(picked))
        scores.append(
            linear_probe(
                train_feats[picked],
                train_labels[picked],
                test_feats,
                test_labels,
                seed=seed + r,
                num_classes=num_classes,
                **kwargs,
            )
        )
    return float(np.mean(scores)), float(np.std(scores))


def scores_from_labels(labels, clusters):
    """(NMI, AMI, ARI) of a clustering against the true labels."""
    return (
        float(normalized_mutual_info_score(labels, clusters)),
        float(adjusted_mutual_info_score(labels, clusters)),
        float(adjusted_rand_score(labels, clusters)),
    )


def clustering_metrics(features, labels, num_classes, kmeans_seed):
    """k-means into C clusters, scored against the true labels.

    k-means++ initialization, Lloyd iterations until the assignments stop
    changing (or 300 iterations), best of 10 restarts by inertia.

    :returns: (NMI, AMI, ARI)
    :raises DegenerateClustering: when a cluster ends up empty
    """
    if num_classes < 2:
        raise errors.InvalidParameter(f"need at least 2 clusters, got {num_classes}")
    features = np.asarray(features, dtype=np.float64)
    kmeans = KMeans(
        n_clusters=num_classes,
        init="k-means++",
        n_init=defaults.KMEANS_RESTARTS,
        max_iter=defaults.KMEANS_MAX_ITER,
        tol=0.0,
        algorithm="lloyd",
        random_state=kmeans_seed,
    )
    clusters = kmeans.fit_predict(features)
    if np.unique(clusters).size < num_classes:
        raise errors.DegenerateClustering(
            f"k-means produced {np.unique(clusters).size} non-empty clusters "
            f"out of {num_classes}"
        )
    return scores_from_labels(labels, clusters)


def effective_rank(features):
    """exp of the entropy of the normalized covariance spectrum."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] < 2:
        return 0.0
    cov = np.cov(features, rowvar=False)
    eig = np.clip(np.linalg.eigvalsh(np.atleast_2d(cov)), 0.0, None)
    total = eig.sum()
    if total <= 0:
        return 0.0
    return float(np.exp(numkernel.entropy(eig / total)))


def collapse_diagnostics(teacher_dists, features):
    """Collapse indicators from teacher targets and a feature sample.

    :param teacher_dists: array (..., N_b) of teacher distributions
    :param features: (n, D) representations
    :returns: Diagnostics; collapsed when the mean per-dimension std is
        below 0.01 or the entropy ratio below 0.1
    """
    teacher_dists = np.asarray(teacher_dists, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    if teacher_dists.size == 0 or features.size == 0:
        raise errors.InvalidShape("diagnostics need non-empty samples")
    block_size = teacher_dists.shape[-1]
    feature_std = float(np.mean(np.std(features, axis=0)))
    target_entropy = float(np.mean(numkernel.entropy(teacher_dists)))
    if block_size > 1:
        ratio = float(np.clip(target_entropy / math.log(block_size), 0.0, 1.0))
    else:
        ratio = 0.0
    collapsed = (
        feature_std < defaults.COLLAPSE_STD_THRESHOLD
        or ratio < defaults.COLLAPSE_ENTROPY_RATIO_THRESHOLD
    )
    return Diagnostics(
        feature_std=feature_std,
        target_entropy=target_entropy,
        entropy_ratio=ratio,
        effective_rank=effective_rank(features),
        collapsed=bool(collapsed),
    )
