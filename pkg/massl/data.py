"""Datasets, CSV ingestion and view augmentation for vector data.

Views are the vector-space counterpart of multi-crop: global views get
mild noise, scale jitter and coordinate dropout, local views get the same
treatment with a heavier hand (dropout plays the part of the crop).
"""

import csv
import logging
import os
from dataclasses import dataclass
from dataclasses import field

import numpy as np

from massl import defaults
from massl import errors

LOGGER = logging.getLogger("massl")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise errors.InvalidShape(
                f"features must be a non-empty (n, d) matrix, got {self.features.shape}"
            )
        if self.labels.shape != (self.features.shape[0],):
            raise errors.InvalidShape("one label per feature row is required")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise errors.InvalidParameter(
                f"labels must lie in [0, {self.num_classes})"
            )
        if not np.all(np.isfinite(self.features)):
            raise errors.InvalidParameter("features must be finite")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, indices):
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)


@dataclass(frozen=True)
class AugmentSpec:
    noise_sigma: float = 0.0
    dropout_prob: float = 0.0
    scale_jitter: float = 0.0

    def __post_init__(self):
        if self.noise_sigma < 0 or self.scale_jitter < 0:
            raise errors.InvalidParameter("noise and scale jitter must be >= 0")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise errors.InvalidParameter(
                f"dropout probability must be in [0, 1), got {self.dropout_prob}"
            )


@dataclass(frozen=True)
class ViewRecipe:
    n_global: int = defaults.DEF_N_GLOBAL
    n_local: int = defaults.DEF_N_LOCAL
    global_spec: AugmentSpec = field(
        default_factory=lambda: AugmentSpec(
            defaults.DEF_GLOBAL_NOISE,
            defaults.DEF_GLOBAL_DROPOUT,
            defaults.DEF_GLOBAL_SCALE_JITTER,
        )
    )
    local_spec: AugmentSpec = field(
        default_factory=lambda: AugmentSpec(
            defaults.DEF_LOCAL_NOISE,
            defaults.DEF_LOCAL_DROPOUT,
            defaults.DEF_LOCAL_SCALE_JITTER,
        )
    )


@dataclass
class ViewBatch:
    global_views: list
    local_views: list
    indices: np.ndarray

    def all_views(self):
        """Globals first, then locals: the student view order."""
        return list(self.global_views) + list(self.local_views)


def make_blobs(num_classes, per_class, dim, separation, noise, seed):
    """Gaussian blobs around centers on the sphere of radius ``separation``.

    Rows are grouped by class: the first ``per_class`` rows have label 0.
    """
    if num_classes < 2 or per_class < 1 or dim < 2 or not separation > 0:
        raise errors.InvalidShape(
            f"invalid blobs: C={num_classes}, per_class={per_class}, "
            f"d={dim}, separation={separation}"
        )
    if noise < 0:
        raise errors.InvalidParameter(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((num_classes, dim))
    centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True)
    labels = np.repeat(np.arange(num_classes), per_class)
    features = centers[labels] + noise * rng.standard_normal((labels.size, dim))
    return Dataset(features, labels, num_classes)


def augment(rows, spec, rng):
    """Scale jitter, additive Gaussian noise and coordinate dropout.

    :param rows: (N, d) block of samples, left untouched
    :param AugmentSpec spec: strengths
    :param rng: numpy Generator
    :returns: augmented copy of ``rows``
    """
    out = np.array(rows, dtype=np.float64)
    n, d = out.shape
    if spec.scale_jitter:
        out *= 1.0 + spec.scale_jitter * rng.uniform(-1.0, 1.0, size=(n, 1))
    if spec.noise_sigma:
        out += spec.noise_sigma * rng.standard_normal((n, d))
    if spec.dropout_prob:
        out *= rng.random((n, d)) >= spec.dropout_prob
    return out


def batch_rng(seed, epoch, batch_index):
    """Independent augmentation stream for one batch."""
    return np.random.default_rng([seed, epoch, batch_index])


def make_views(dataset, indices, recipe, rng):
    """Build the global and local views of the rows at ``indices``."""
    rows = dataset.features[indices]
    return ViewBatch(
        global_views=[augment(rows, recipe.global_spec, rng) for _ in range(recipe.n_global)],
        local_views=[augment(rows, recipe.local_spec, rng) for _ in range(recipe.n_local)],
        indices=np.asarray(indices),
    )


def batches(num_rows, batch_size, shuffle_seed, epoch):
    """Yield shuffled index batches; the last short batch is dropped.

    The order depends only on (shuffle_seed, epoch).
    """
    if batch_size < 1:
        raise errors.InvalidParameter(f"batch size must be >= 1, got {batch_size}")
    order = np.random.default_rng([shuffle_seed, epoch]).permutation(num_rows)
    for start in range(0, num_rows - batch_size + 1, batch_size):
        yield order[start : start + batch_size]


def num_batches(num_rows, batch_size):
    return num_rows // batch_size


def split(dataset, test_fraction, seed):
    """Random train/test split; both halves keep the class count."""
    if not 0.0 <= test_fraction < 1.0:
        raise errors.InvalidParameter(
            f"test fraction must be in [0, 1), got {test_fraction}"
        )
    n = len(dataset)
    n_test = int(round(n * test_fraction))
    if n_test == 0:
        return dataset, dataset
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(order[n_test:])), dataset.subset(np.sort(order[:n_test]))


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, num_classes=None):
    """Read rows of d floats followed by an integer label.

    A first line where no cell is numeric is taken as a header.

    :param str path: CSV file
    :param int num_classes: declared class count; inferred as max label + 1
        when omitted
    :raises ParseError: naming the offending line
    :raises EmptyFile: when the file holds no data rows
    """
    features, labels = [], []
    width = None
    with open(path, newline="") as csv_input:
        reader = csv.reader(csv_input)
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if line == 1 and not any(_is_number(cell) for cell in row):
                LOGGER.debug("Skipping header in %s: %s", path, row)
                continue
            if len(row) < 2:
                raise errors.ParseError("expected features followed by a label", line)
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise errors.ParseError(
                    f"expected {width} columns, found {len(row)}", line
                )
            try:
                values = [float(cell) for cell in row[:-1]]
                label = int(row[-1])
            except ValueError:
                raise errors.ParseError(f"non-numeric cell in {row}", line)
            if label < 0:
                raise errors.ParseError(f"negative label {label}", line)
            if num_classes is not None and label >= num_classes:
                raise errors.ParseError(
                    f"label {label} not below declared class count {num_classes}", line
                )
            features.append(values)
            labels.append(label)
    if not features:
        raise errors.EmptyFile(f"no data rows in {path}")
    if num_classes is None:
        num_classes = max(labels) + 1
    LOGGER.info("Loaded %s rows of dimension %s from %s", len(labels), width - 1, path)
    return Dataset(np.array(features), np.array(labels), num_classes)


def write_csv(dataset, path, header=True):
    """Write ``dataset`` in the format ``load_csv`` reads (float32 precision)."""
    with open(path, "w", newline="") as csv_output:
        writer = csv.writer(csv_output, lineterminator="\n")
        if header:
            writer.writerow([f"x{i}" for i in range(dataset.dim)] + ["label"])
        for row, label in zip(dataset.features.astype(np.float32), dataset.labels):
            writer.writerow([f"{v:.9g}" for v in row] + [int(label)])


def parse_data_spec(spec):
    """Build a Dataset from a CLI data spec.

    ``blobs:C=10,per_class=500,d=32,separation=4,noise=1,seed=0`` or
    ``csv:PATH``. A bare path is read as CSV.
    """
    kind, _, rest = spec.partition(":")
    if kind == "blobs":
        opts = {
            "C": defaults.DEF_NUM_CLASSES,
            "per_class": defaults.DEF_PER_CLASS,
            "d": defaults.DEF_INPUT_DIM,
            "separation": defaults.DEF_SEPARATION,
            "noise": defaults.DEF_NOISE,
            "seed": defaults.DEF_DATA_SEED,
        }
        for item in filter(None, rest.split(",")):
            key, sep, value = item.partition("=")
            if not sep or key not in opts:
                raise errors.ConfigError(f"bad blobs option: {item!r}")
            try:
                opts[key] = type(opts[key])(value)
            except ValueError:
                raise errors.ConfigError(f"bad value for {key}: {value!r}")
        return make_blobs(
            opts["C"], opts["per_class"], opts["d"], opts["separation"], opts["noise"], opts["seed"]
        )
    if kind == "csv":
        return load_csv(rest)
    if os.path.exists(spec):
        return load_csv(spec)
    raise errors.ConfigError(f"unknown data spec: {spec!r}")
