"""AdamW and the training schedules."""

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np

from massl import defaults
from massl import errors

LOGGER = logging.getLogger("massl")


class ScheduleKind(enum.Enum):
    COSINE_DECAY = "cosine"
    LINEAR_WARMUP = "linear-warmup"
    CONSTANT = "constant"


@dataclass(frozen=True)
class ScheduleSpec:
    kind: ScheduleKind
    start: float
    end: float = None
    span: int = 1

    def __post_init__(self):
        if self.span < 1:
            raise errors.InvalidParameter(f"schedule span must be >= 1, got {self.span}")
        end = self.start if self.end is None else self.end
        if not (math.isfinite(self.start) and math.isfinite(end)):
            raise errors.InvalidParameter("schedule values must be finite")


@dataclass
class AdamWState:
    step: int
    m: dict
    v: dict
    beta1: float = defaults.DEF_BETA1
    beta2: float = defaults.DEF_BETA2
    eps: float = defaults.DEF_ADAM_EPS


def adamw_init(params, beta1=defaults.DEF_BETA1, beta2=defaults.DEF_BETA2, eps=defaults.DEF_ADAM_EPS):
    """Zero moments shaped like ``params``."""
    return AdamWState(
        step=0,
        m={name: np.zeros_like(a) for name, a in params.arrays.items()},
        v={name: np.zeros_like(a) for name, a in params.arrays.items()},
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def decays(name):
    """Weight decay applies to weights only, never to biases."""
    return not name.endswith(".bias")


def adamw_step(params, grads, state, lr, weight_decay):
    """One AdamW update, in place.

    Decoupled decay first (p <- p - lr * wd * p), then the bias-corrected
    Adam step.

    :returns: (params, state)
    """
    if lr < 0 or weight_decay < 0:
        raise errors.InvalidParameter(
            f"lr and weight decay must be >= 0, got {lr}, {weight_decay}"
        )
    if grads.keys() != params.arrays.keys() or state.m.keys() != params.arrays.keys():
        raise errors.ShapeMismatch("gradients, state and parameters differ in layout")
    for name, g in grads.items():
        if g.shape != params.arrays[name].shape:
            raise errors.ShapeMismatch(
                f"gradient {name} has shape {g.shape}, "
                f"parameter has {params.arrays[name].shape}"
            )
        if not np.all(np.isfinite(g)):
            raise errors.NonFiniteGrad(f"non-finite gradient for {name}")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**state.step
    bias2 = 1.0 - b2**state.step
    for name, p in params.arrays.items():
        g = grads[name]
        if weight_decay and decays(name):
            p -= lr * weight_decay * p
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    params.touch()
    return params, state


def eval_schedule(spec, t, total):
    """Value of ``spec`` at step ``t`` of ``total``.

    :raises OutOfRangeStep: when t is outside [0, total]
    """
    if t < 0 or t > total:
        raise errors.OutOfRangeStep(f"step {t} outside [0, {total}]")
    kind = ScheduleKind(spec.kind)
    end = spec.start if spec.end is None else spec.end
    if kind is ScheduleKind.CONSTANT:
        return spec.start
    if kind is ScheduleKind.LINEAR_WARMUP:
        if t >= spec.span:
            return end
        return spec.start + (end - spec.start) * (t / spec.span)
    if total == 0 or t == total:
        return end
    if t == 0:
        return spec.start
    return end + (spec.start - end) * (1.0 + math.cos(math.pi * t / total)) / 2.0


def teacher_temperature(epoch, warmup_epochs, tau_start, tau_end):
    """Linear warmup of the teacher temperature, then constant."""
    if warmup_epochs < 1:
        raise errors.InvalidParameter(
            f"warmup must last at least one epoch, got {warmup_epochs}"
        )
    spec = ScheduleSpec(ScheduleKind.LINEAR_WARMUP, tau_start, tau_end, warmup_epochs)
    return eval_schedule(spec, max(epoch, 0), max(epoch, warmup_epochs))
