"""Consistency loss between view-memory similarity distributions.

Each view is scored against every block of a shared memory partition. The
student distribution of view i is pushed towards the teacher distribution
of view j for every pair i != j; the loss is the mean cross-entropy over
pairs, blocks and batch rows. There is no other term.
"""

import logging
from dataclasses import dataclass

import numpy as np

from massl import errors
from massl import memory
from massl import numkernel

LOGGER = logging.getLogger("massl")


@dataclass(frozen=True)
class LossConfig:
    tau_s: float
    tau_t: float
    block_size: int
    strategy: memory.SamplingStrategy = memory.SamplingStrategy.STOCHASTIC

    def __post_init__(self):
        if not self.tau_s > 0 or not self.tau_t > 0:
            raise errors.NonPositiveTemperature(
                f"temperatures must be > 0, got tau_s={self.tau_s}, tau_t={self.tau_t}"
            )


@dataclass
class LossReport:
    """Result of one loss evaluation.

    ``grads[i]`` is dL/dz for student view i and has the shape of that
    view. ``teacher_probs`` stacks the teacher distributions as
    (T, N, B, N_b) for diagnostics.
    """

    loss: float
    grads: list
    mean_target_entropy: float
    pair_count: int
    teacher_probs: np.ndarray


def view_memory_dists(z, plan, mem, tau):
    """Tempered softmax of the cosine scores of ``z`` against each block.

    :param z: unit vector (D,)
    :param BlockPlan plan: partition of ``mem``
    :param Memory mem: memory to score against
    :param float tau: temperature
    :returns: list of B distributions of length N_b
    """
    z = np.asarray(z, dtype=np.float64)
    if not numkernel.is_unit(z):
        raise errors.NotUnitNorm("view representation must be unit-norm")
    return [
        numkernel.tempered_softmax(
            numkernel.cosine_scores(z, memory.gather(mem, block)), tau
        )
        for block in plan.blocks
    ]


def _check_views(views, dim, role):
    shapes = set()
    for view in views:
        view = np.asarray(view)
        if view.ndim != 2:
            raise errors.MismatchedBatch(f"{role} view must be (N, D), got {view.shape}")
        shapes.add(view.shape)
    if len(shapes) > 1:
        raise errors.MismatchedBatch(f"{role} views disagree on shape: {sorted(shapes)}")
    (shape,) = shapes
    if shape[1] != dim:
        raise errors.MismatchedBatch(
            f"{role} views have dimension {shape[1]}, memory has {dim}"
        )
    return shape


def _block_logits(views, rows):
    # (N, D) x (B, N_b, D) -> (N, B, N_b)
    return [np.einsum("nd,bkd->nbk", np.asarray(v, dtype=np.float64), rows) for v in views]


def massl_loss(student_views, teacher_views, mem, plan, cfg):
    """Evaluate the loss and its gradient w.r.t. the student projections.

    Student view i and teacher view j are the same augmentation when
    i == j; those pairs are skipped. Teacher views carry no gradient.

    :param list student_views: S arrays of shape (N, D), unit rows
    :param list teacher_views: T arrays of shape (N, D), unit rows
    :param Memory mem: memory snapshot the targets are computed against
    :param BlockPlan plan: partition shared by every view this step
    :param LossConfig cfg: temperatures
    :returns: LossReport
    """
    if not student_views or not teacher_views:
        raise errors.EmptyViewSet("need at least one student and one teacher view")
    s_shape = _check_views(student_views, mem.dim, "student")
    t_shape = _check_views(teacher_views, mem.dim, "teacher")
    if s_shape != t_shape:
        raise errors.MismatchedBatch(
            f"student views {s_shape} and teacher views {t_shape} differ"
        )
    n_student, n_teacher = len(student_views), len(teacher_views)
    pair_count = n_student * n_teacher - min(n_student, n_teacher)
    if pair_count == 0:
        raise errors.EmptyViewSet("every student view coincides with its teacher view")

    rows = memory.gather_plan(mem, plan)
    batch = s_shape[0]
    n_blocks = plan.num_blocks
    norm = pair_count * batch * n_blocks

    student_logits = _block_logits(student_views, rows)
    teacher_logits = _block_logits(teacher_views, rows)
    teacher_probs = np.stack(
        [numkernel.tempered_softmax(t, cfg.tau_t) for t in teacher_logits]
    )
    teacher_entropy = [float(np.sum(numkernel.entropy(q))) for q in teacher_probs]

    loss = 0.0
    entropy_total = 0.0
    grads = []
    for i, logits in enumerate(student_logits):
        log_p = numkernel.log_softmax(logits, cfg.tau_s)
        partners = [j for j in range(n_teacher) if j != i]
        if not partners:
            grads.append(np.zeros(s_shape))
            continue
        target_sum = np.zeros_like(log_p)
        for j in partners:
            loss += float(np.sum(numkernel.cross_entropy(teacher_probs[j], log_p)))
            entropy_total += teacher_entropy[j]
            target_sum += teacher_probs[j]
        # d/dlogits of sum_j CE(q_j, p_i) = (|partners| p_i - sum_j q_j) / tau_s
        g_logits = (len(partners) * np.exp(log_p) - target_sum) / cfg.tau_s
        grads.append(np.einsum("nbk,bkd->nd", g_logits, rows) / norm)

    return LossReport(
        loss=loss / norm,
        grads=grads,
        mean_target_entropy=entropy_total / norm,
        pair_count=pair_count,
        teacher_probs=teacher_probs,
    )
