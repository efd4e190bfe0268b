"""Training loop.

One step: build the views of a batch, encode every view with the student
and the global views with the teacher, sample one block plan, evaluate the
loss against the memory as it stood before this step, update the student
with AdamW, move the teacher towards the student, and only then enqueue
the teacher projections.
"""

import csv
import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass

import numpy as np

from massl import checkpoint
from massl import data
from massl import errors
from massl import evalkit
from massl import memory
from massl import model
from massl import objective
from massl import optim

LOGGER = logging.getLogger("massl")

METRICS_FILE = "metrics.jsonl"
SUMMARY_FILE = "summary.csv"
FINAL_CHECKPOINT = "final.mssl"


@dataclass
class MetricsRecord:
    step: int
    epoch: int
    loss: float
    lr: float
    wd: float
    tau_t: float
    momentum: float
    feature_std: float
    target_entropy: float
    entropy_ratio: float
    effective_rank: float
    collapsed: bool
    wall_ms: float = None

    def to_dict(self):
        out = dataclasses.asdict(self)
        if self.wall_ms is None:
            del out["wall_ms"]
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


class Schedules:
    """Per-step learning rate, weight decay and EMA momentum; per-epoch
    teacher temperature.
    """

    def __init__(self, cfg, total_steps):
        self.cfg = cfg
        self.total = total_steps
        cosine = optim.ScheduleKind.COSINE_DECAY
        self.lr_spec = optim.ScheduleSpec(cosine, cfg.lr, cfg.lr_end)
        self.wd_spec = optim.ScheduleSpec(cosine, cfg.wd_start, cfg.wd_end)
        self.momentum_spec = optim.ScheduleSpec(cosine, cfg.momentum_start, cfg.momentum_end)

    def lr(self, step):
        return optim.eval_schedule(self.lr_spec, step, self.total)

    def wd(self, step):
        return optim.eval_schedule(self.wd_spec, step, self.total)

    def momentum(self, step):
        return optim.eval_schedule(self.momentum_spec, step, self.total)

    def tau_t(self, epoch):
        return optim.teacher_temperature(
            epoch, self.cfg.tau_t_warmup_epochs, self.cfg.tau_t_start, self.cfg.tau_t_end
        )


def load_dataset(cfg):
    """The full dataset described by the [data] section."""
    if cfg.data_source == "csv":
        return data.load_csv(cfg.csv_path)
    return data.make_blobs(
        cfg.num_classes,
        cfg.per_class,
        cfg.input_dim,
        cfg.separation,
        cfg.noise,
        cfg.data_seed,
    )


def build_dataset(cfg):
    """The [data] section dataset split into (train, test)."""
    return data.split(load_dataset(cfg), cfg.test_fraction, cfg.data_seed)


def init_state(cfg, input_dim):
    """Fresh student, teacher copy, optimizer, memory and block sampler."""
    cfg.validate()
    student = model.init_params(cfg.arch(input_dim), cfg.seed)
    LOGGER.info("Student encoder has %s parameters", student.num_params())
    return checkpoint.Checkpoint(
        config=cfg,
        input_dim=input_dim,
        student=student,
        teacher=student.copy(),
        opt_state=optim.adamw_init(student, cfg.beta1, cfg.beta2, cfg.adam_eps),
        memory=memory.memory_init(cfg.memory_size, cfg.out_dim, cfg.seed + 1),
        plan_rng=np.random.default_rng([cfg.seed, 2]),
    )


def steps_per_epoch(cfg, num_rows):
    steps = data.num_batches(num_rows, cfg.batch_size)
    if steps == 0:
        raise errors.ConfigError(
            f"batch size {cfg.batch_size} exceeds the {num_rows} training rows"
        )
    return steps


def enqueue_vectors(cfg, teacher_z):
    if cfg.enqueue_policy == "both-globals":
        return np.concatenate(teacher_z[:2], axis=0)
    return teacher_z[0]


def train_step(state, train_set, indices, batch_index, schedules):
    """Run one optimization step in place and return its metrics record."""
    cfg = state.config
    rng = data.batch_rng(cfg.seed, state.epoch, batch_index)
    views = data.make_views(train_set, indices, cfg.view_recipe(), rng)

    caches = [model.ForwardCache() for _ in range(cfg.n_global + cfg.n_local)]
    student_z = [
        model.forward(state.student, view, cache)
        for view, cache in zip(views.all_views(), caches)
    ]
    teacher_z = [model.forward(state.teacher, view) for view in views.global_views]

    plan = memory.sample_blocks(
        cfg.memory_size, cfg.block_size, cfg.strategy, state.plan_rng
    )
    tau_t = schedules.tau_t(state.epoch)
    loss_cfg = objective.LossConfig(cfg.tau_s, tau_t, cfg.block_size, cfg.strategy)
    report = objective.massl_loss(student_z, teacher_z, state.memory, plan, loss_cfg)

    grads = None
    for cache, grad_z in zip(caches, report.grads):
        part = model.backward(state.student, cache, grad_z)
        if grads is None:
            grads = part
        else:
            for name, g in part.items():
                grads[name] += g

    lr = schedules.lr(state.step)
    wd = schedules.wd(state.step)
    momentum = schedules.momentum(state.step)
    optim.adamw_step(state.student, grads, state.opt_state, lr, wd)
    model.ema_update(state.teacher, state.student, momentum)
    memory.enqueue_batch(state.memory, enqueue_vectors(cfg, teacher_z))
    state.step += 1

    diag = evalkit.collapse_diagnostics(report.teacher_probs, teacher_z[0])
    return MetricsRecord(
        step=state.step,
        epoch=state.epoch,
        loss=report.loss,
        lr=lr,
        wd=wd,
        tau_t=tau_t,
        momentum=momentum,
        feature_std=diag.feature_std,
        target_entropy=diag.target_entropy,
        entropy_ratio=diag.entropy_ratio,
        effective_rank=diag.effective_rank,
        collapsed=diag.collapsed,
    )


def train(cfg, train_set, state=None, out_dir=None, max_steps=None, precision="f8"):
    """Train until ``cfg.epochs`` are done (or ``max_steps`` is reached).

    Metrics go to ``metrics.jsonl`` every ``log_interval`` steps (and at the
    last step of training, never at a ``max_steps`` stop) and to
    ``summary.csv`` at the end of every epoch. Resuming from ``state``
    appends to both files.

    :param TrainConfig cfg: configuration
    :param Dataset train_set: training rows
    :param Checkpoint state: state to resume from, or None for a fresh run
    :param str out_dir: output directory, defaults to ``cfg.out_dir``
    :param int max_steps: stop after this global step
    :param str precision: "f8" (bit-exact resume) or "f4" checkpoints
    :returns: the final Checkpoint
    """
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    if state is None:
        state = init_state(cfg, train_set.dim)
    elif state.input_dim != train_set.dim:
        raise errors.DimMismatch(
            f"checkpoint expects {state.input_dim}-d inputs, data has {train_set.dim}"
        )
    state.config = cfg
    per_epoch = steps_per_epoch(cfg, len(train_set))
    total = cfg.epochs * per_epoch
    stop = total if max_steps is None else min(max_steps, total)
    schedules = Schedules(cfg, total)
    mode = "a" if state.step > 0 else "w"
    LOGGER.info(
        "Training from step %s to %s (%s steps per epoch, K=%s, N_b=%s, %s)",
        state.step,
        stop,
        per_epoch,
        cfg.memory_size,
        cfg.block_size,
        cfg.sampling,
    )

    metrics_path = os.path.join(out_dir, METRICS_FILE)
    summary_path = os.path.join(out_dir, SUMMARY_FILE)
    write_header = mode == "w" or not os.path.exists(summary_path)
    fields = [f.name for f in dataclasses.fields(MetricsRecord)]
    if not cfg.log_wall_clock:
        fields.remove("wall_ms")
    with open(metrics_path, mode) as metrics_out, open(
        summary_path, mode, newline=""
    ) as summary_out:
        summary = csv.DictWriter(summary_out, fieldnames=fields, lineterminator="\n")
        if write_header:
            summary.writeheader()
        epoch_batches = None
        while state.step < stop:
            state.epoch = state.step // per_epoch
            batch_index = state.step % per_epoch
            if epoch_batches is None or batch_index == 0:
                epoch_batches = list(
                    data.batches(len(train_set), cfg.batch_size, cfg.seed, state.epoch)
                )
            started = time.perf_counter()
            record = train_step(
                state, train_set, epoch_batches[batch_index], batch_index, schedules
            )
            if cfg.log_wall_clock:
                record.wall_ms = (time.perf_counter() - started) * 1000.0
            LOGGER.debug("Step %s: loss %.6f", record.step, record.loss)
            if state.step % cfg.log_interval == 0 or state.step == total:
                metrics_out.write(record.to_json() + "\n")
            if state.step % per_epoch == 0:
                summary.writerow(record.to_dict())
                LOGGER.info(
                    "Epoch %s done: loss %.4f, target entropy ratio %.3f, feature std %.4f%s",
                    state.epoch,
                    record.loss,
                    record.entropy_ratio,
                    record.feature_std,
                    " (collapsed)" if record.collapsed else "",
                )
            if cfg.checkpoint_interval and state.step % cfg.checkpoint_interval == 0:
                checkpoint.save_checkpoint(
                    state,
                    os.path.join(out_dir, f"checkpoint-{state.step:08d}.mssl"),
                    precision,
                )
    state.epoch = max(state.step - 1, 0) // per_epoch
    checkpoint.save_checkpoint(state, os.path.join(out_dir, FINAL_CHECKPOINT), precision)
    return state
