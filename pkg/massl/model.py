"""Student and teacher encoders.

An MLP backbone followed by a three-layer projection head with exact GELU
activations; the head output is L2-normalized. Forward and backward passes
are written out by hand and work on float64 batches.
"""

import logging
import math
from dataclasses import dataclass
from dataclasses import field

import numpy as np
from scipy.special import ndtr

from massl import defaults
from massl import errors
from massl import numkernel

LOGGER = logging.getLogger("massl")

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ArchConfig:
    input_dim: int
    backbone_widths: tuple = defaults.DEF_BACKBONE_WIDTHS
    head_hidden: int = defaults.DEF_HEAD_HIDDEN
    out_dim: int = defaults.DEF_OUT_DIM

    def layers(self):
        """Return (name, fan_in, fan_out, activated) for every affine layer."""
        widths = tuple(self.backbone_widths)
        if self.input_dim < 1 or not widths or min(widths) < 1:
            raise errors.InvalidShape(
                f"invalid backbone {self.input_dim} -> {widths}"
            )
        if self.head_hidden < 1 or self.out_dim < 2:
            raise errors.InvalidShape(
                f"invalid head {self.head_hidden} -> {self.out_dim}"
            )
        specs = []
        fan_in = self.input_dim
        for i, width in enumerate(widths):
            specs.append((f"backbone.{i}", fan_in, width, True))
            fan_in = width
        head = (self.head_hidden, self.head_hidden, self.out_dim)
        for i, width in enumerate(head):
            specs.append((f"head.{i}", fan_in, width, i < len(head) - 1))
            fan_in = width
        return specs


@dataclass
class ModelParams:
    """Weights (fan_in, fan_out) and biases of every layer, by name.

    ``version`` increases whenever the arrays are updated in place, which
    lets ``backward`` reject caches from an older forward pass.
    """

    arch: ArchConfig
    arrays: dict
    version: int = 0

    def copy(self):
        return ModelParams(
            arch=self.arch,
            arrays={name: a.copy() for name, a in self.arrays.items()},
            version=0,
        )

    def num_params(self):
        return sum(a.size for a in self.arrays.values())

    def touch(self):
        self.version += 1


@dataclass
class ForwardCache:
    """Activations retained by ``forward`` for ``backward``."""

    inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)
    backbone_out: np.ndarray = None
    proj: np.ndarray = None
    norms: np.ndarray = None
    z: np.ndarray = None
    owner: int = None
    version: int = None


def gelu(x):
    return x * ndtr(x)


def gelu_grad(x):
    return ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def init_params(arch, seed):
    """He-scaled uniform weights, zero biases, deterministic in ``seed``.

    A uniform draw on [-a, a] with a = sqrt(6 / fan_in) has standard
    deviation sqrt(2 / fan_in).
    """
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, fan_in, fan_out, _ in arch.layers():
        bound = math.sqrt(6.0 / fan_in)
        arrays[f"{name}.weight"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        arrays[f"{name}.bias"] = np.zeros(fan_out)
    return ModelParams(arch=arch, arrays=arrays)


def forward(params, x, cache=None):
    """Encode a batch into unit-norm projections.

    :param ModelParams params: encoder weights
    :param x: (N, input_dim) batch
    :param ForwardCache cache: filled in place when given
    :returns: (N, out_dim) unit rows
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.arch.input_dim:
        raise errors.DimMismatch(
            f"expected input (N, {params.arch.input_dim}), got {x.shape}"
        )
    a = x
    inputs, preacts = [], []
    backbone_out = None
    for name, _, _, activated in params.arch.layers():
        h = a @ params.arrays[f"{name}.weight"] + params.arrays[f"{name}.bias"]
        inputs.append(a)
        preacts.append(h)
        a = gelu(h) if activated else h
        if name.startswith("backbone."):
            backbone_out = a
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    z = numkernel.l2_normalize(a)
    if cache is not None:
        cache.inputs = inputs
        cache.preacts = preacts
        cache.backbone_out = backbone_out
        cache.proj = a
        cache.norms = norms
        cache.z = z
        cache.owner = id(params)
        cache.version = params.version
    return z


def normalize_backward(z, norms, grad_z):
    """Backprop through v -> v / |v|: (I - z z^T) grad_z / |v| per row."""
    grad_z = np.asarray(grad_z, dtype=np.float64)
    radial = np.sum(z * grad_z, axis=1, keepdims=True)
    return (grad_z - z * radial) / norms


def backward(params, cache, grad_z):
    """Gradients of the loss w.r.t. every parameter.

    :param ModelParams params: weights used by the cached forward pass
    :param ForwardCache cache: cache from ``forward(params, ...)``
    :param grad_z: dL/dz, same shape as the projections
    :returns: dict of gradients keyed like ``params.arrays``
    :raises StaleCache: when the cache belongs to other or older weights
    """
    if cache.owner != id(params) or cache.version != params.version:
        raise errors.StaleCache("forward cache does not match these parameters")
    grad_z = np.asarray(grad_z, dtype=np.float64)
    if grad_z.shape != cache.z.shape:
        raise errors.DimMismatch(
            f"gradient shape {grad_z.shape} != projection shape {cache.z.shape}"
        )
    g = normalize_backward(cache.z, cache.norms, grad_z)
    grads = {}
    layers = params.arch.layers()
    for idx in range(len(layers) - 1, -1, -1):
        name, _, _, activated = layers[idx]
        h = cache.preacts[idx]
        if activated:
            g = g * gelu_grad(h)
        grads[f"{name}.weight"] = cache.inputs[idx].T @ g
        grads[f"{name}.bias"] = g.sum(axis=0)
        g = g @ params.arrays[f"{name}.weight"].T
    return {name: grads[name] for name in params.arrays}


def _check_same_layout(a, b):
    if a.arrays.keys() != b.arrays.keys() or any(
        a.arrays[name].shape != b.arrays[name].shape for name in a.arrays
    ):
        raise errors.ShapeMismatch("parameter trees differ in layout")


def ema_update(teacher, student, momentum):
    """teacher <- m * teacher + (1 - m) * student, in place.

    :returns: the updated teacher
    """
    if not 0.0 <= momentum <= 1.0:
        raise errors.InvalidParameter(f"EMA momentum must be in [0, 1], got {momentum}")
    _check_same_layout(teacher, student)
    for name, t in teacher.arrays.items():
        t[...] = momentum * t + (1.0 - momentum) * student.arrays[name]
    teacher.touch()
    return teacher


def encode(params, x, chunk=1024, features="projection"):
    """Inference without caches, in chunks.

    :param str features: "projection" for the unit-norm head output,
        "backbone" for L2-normalized backbone features
    """
    x = np.asarray(x, dtype=np.float64)
    out = []
    for start in range(0, x.shape[0], chunk):
        cache = ForwardCache()
        z = forward(params, x[start : start + chunk], cache)
        if features == "backbone":
            out.append(numkernel.l2_normalize(cache.backbone_out))
        elif features == "projection":
            out.append(z)
        else:
            raise errors.InvalidParameter(f"unknown feature kind: {features}")
    if not out:
        return np.zeros((0, params.arch.out_dim))
    return np.concatenate(out, axis=0)
