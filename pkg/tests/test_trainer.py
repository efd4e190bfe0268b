#!/usr/bin/env python
import csv
import json
import os
from unittest import mock

import numpy as np
import pytest

from massl import checkpoint
from massl import errors
from massl import memory
from massl import objective
from massl import trainer


def _records(path):
    with open(path) as metrics_input:
        return [json.loads(line) for line in metrics_input]


def test_metrics_are_reproducible(tiny_config, tmp_path):
    train_set, _ = trainer.build_dataset(tiny_config)
    trainer.train(tiny_config, train_set, out_dir=str(tmp_path / "a"))
    trainer.train(tiny_config, train_set, out_dir=str(tmp_path / "b"))
    first = (tmp_path / "a" / trainer.METRICS_FILE).read_bytes()
    second = (tmp_path / "b" / trainer.METRICS_FILE).read_bytes()
    assert first
    assert first == second


def test_metrics_records(tiny_config, tmp_path):
    train_set, _ = trainer.build_dataset(tiny_config)
    state = trainer.train(tiny_config, train_set)
    per_epoch = trainer.steps_per_epoch(tiny_config, len(train_set))
    assert state.step == tiny_config.epochs * per_epoch
    records = _records(os.path.join(tiny_config.out_dir, trainer.METRICS_FILE))
    assert [r["step"] for r in records] == list(range(1, state.step + 1))
    assert all("wall_ms" not in r for r in records)
    assert all(np.isfinite(r["loss"]) for r in records)
    assert records[0]["tau_t"] == tiny_config.tau_t_start
    assert records[-1]["tau_t"] == tiny_config.tau_t_end
    assert os.path.exists(os.path.join(tiny_config.out_dir, trainer.FINAL_CHECKPOINT))


def test_summary_has_one_row_per_epoch(tiny_config):
    train_set, _ = trainer.build_dataset(tiny_config)
    trainer.train(tiny_config, train_set)
    with open(os.path.join(tiny_config.out_dir, trainer.SUMMARY_FILE), newline="") as summary:
        rows = list(csv.DictReader(summary))
    assert [int(r["epoch"]) for r in rows] == [0, 1, 2]


def test_wall_clock_is_opt_in(tiny_config, tmp_path):
    cfg = tiny_config.replace(log_wall_clock=True, epochs=1)
    train_set, _ = trainer.build_dataset(cfg)
    trainer.train(cfg, train_set)
    records = _records(os.path.join(cfg.out_dir, trainer.METRICS_FILE))
    assert all(r["wall_ms"] >= 0 for r in records)


def test_resume_matches_uninterrupted_run(tiny_config, tmp_path):
    train_set, _ = trainer.build_dataset(tiny_config)
    whole_dir = str(tmp_path / "whole")
    split_dir = str(tmp_path / "split")
    trainer.train(tiny_config, train_set, out_dir=whole_dir)

    trainer.train(tiny_config, train_set, out_dir=split_dir, max_steps=7)
    state = checkpoint.load_checkpoint(os.path.join(split_dir, trainer.FINAL_CHECKPOINT))
    assert state.step == 7
    trainer.train(tiny_config, train_set, state=state, out_dir=split_dir)

    whole = {r["step"]: r for r in _records(os.path.join(whole_dir, trainer.METRICS_FILE))}
    split = {r["step"]: r for r in _records(os.path.join(split_dir, trainer.METRICS_FILE))}
    assert set(whole) == set(split)
    for step, record in whole.items():
        for key, value in record.items():
            if isinstance(value, float):
                assert abs(split[step][key] - value) <= 1e-12, (step, key)
            else:
                assert split[step][key] == value

    first = checkpoint.load_checkpoint(os.path.join(whole_dir, trainer.FINAL_CHECKPOINT))
    second = checkpoint.load_checkpoint(os.path.join(split_dir, trainer.FINAL_CHECKPOINT))
    for name, array in first.student.arrays.items():
        assert np.max(np.abs(second.student.arrays[name] - array)) <= 1e-12
    assert np.max(np.abs(second.memory.slots - first.memory.slots)) <= 1e-12

    with open(os.path.join(split_dir, trainer.SUMMARY_FILE), newline="") as summary:
        assert len(list(csv.DictReader(summary))) == tiny_config.epochs


def test_resume_off_log_interval_adds_no_record(tiny_config, tmp_path):
    cfg = tiny_config.replace(log_interval=5)
    train_set, _ = trainer.build_dataset(cfg)
    whole_dir = str(tmp_path / "whole")
    split_dir = str(tmp_path / "split")
    trainer.train(cfg, train_set, out_dir=whole_dir)

    trainer.train(cfg, train_set, out_dir=split_dir, max_steps=7)
    assert [r["step"] for r in _records(os.path.join(split_dir, trainer.METRICS_FILE))] == [5]
    state = checkpoint.load_checkpoint(os.path.join(split_dir, trainer.FINAL_CHECKPOINT))
    trainer.train(cfg, train_set, state=state, out_dir=split_dir)

    whole = _records(os.path.join(whole_dir, trainer.METRICS_FILE))
    split = _records(os.path.join(split_dir, trainer.METRICS_FILE))
    assert [r["step"] for r in whole] == [5, 10, 15]
    assert [r["step"] for r in split] == [5, 10, 15]


def test_last_step_is_recorded_off_interval(tiny_config):
    cfg = tiny_config.replace(log_interval=4)
    train_set, _ = trainer.build_dataset(cfg)
    trainer.train(cfg, train_set)
    records = _records(os.path.join(cfg.out_dir, trainer.METRICS_FILE))
    assert [r["step"] for r in records] == [4, 8, 12, 15]


def test_resume_rejects_other_input_dim(tiny_config, tmp_path):
    train_set, _ = trainer.build_dataset(tiny_config)
    state = trainer.init_state(tiny_config, train_set.dim + 1)
    state.step = 1
    with pytest.raises(errors.DimMismatch):
        trainer.train(tiny_config, train_set, state=state, out_dir=str(tmp_path / "x"))


def test_frozen_teacher_stays_at_init(tiny_config):
    cfg = tiny_config.replace(momentum_start=1.0, momentum_end=1.0, epochs=1)
    train_set, _ = trainer.build_dataset(cfg)
    initial = trainer.init_state(cfg, train_set.dim)
    state = trainer.train(cfg, train_set)
    for name, array in initial.teacher.arrays.items():
        assert np.array_equal(state.teacher.arrays[name], array)
    assert not np.array_equal(
        state.student.arrays["backbone.0.weight"], initial.student.arrays["backbone.0.weight"]
    )


def test_loss_reads_memory_before_enqueue(tiny_config):
    train_set, _ = trainer.build_dataset(tiny_config)
    state = trainer.init_state(tiny_config, train_set.dim)
    before = state.memory.copy()
    seen = {}
    real_loss = objective.massl_loss

    def spy_loss(student_z, teacher_z, mem, plan, cfg):
        seen["slots"] = mem.slots.copy()
        return real_loss(student_z, teacher_z, mem, plan, cfg)

    calls = mock.Mock()
    calls.loss.side_effect = spy_loss
    calls.enqueue.side_effect = memory.enqueue_batch
    schedules = trainer.Schedules(tiny_config, 15)
    with mock.patch.object(trainer.objective, "massl_loss", calls.loss), mock.patch.object(
        trainer.memory, "enqueue_batch", calls.enqueue
    ):
        trainer.train_step(state, train_set, np.arange(8), 0, schedules)

    assert [c[0] for c in calls.mock_calls if c[0] in ("loss", "enqueue")] == ["loss", "enqueue"]
    assert np.array_equal(seen["slots"], before.slots)
    assert state.memory.inserted == before.inserted + tiny_config.batch_size
    assert not np.array_equal(state.memory.slots, before.slots)


def test_both_globals_policy_enqueues_twice(tiny_config):
    cfg = tiny_config.replace(enqueue_policy="both-globals")
    train_set, _ = trainer.build_dataset(cfg)
    state = trainer.init_state(cfg, train_set.dim)
    inserted = state.memory.inserted
    schedules = trainer.Schedules(cfg, 15)
    trainer.train_step(state, train_set, np.arange(8), 0, schedules)
    assert state.memory.inserted == inserted + 16


def test_checkpoint_interval(tiny_config):
    cfg = tiny_config.replace(checkpoint_interval=5)
    train_set, _ = trainer.build_dataset(cfg)
    trainer.train(cfg, train_set)
    names = sorted(n for n in os.listdir(cfg.out_dir) if n.startswith("checkpoint-"))
    assert names == [
        "checkpoint-00000005.mssl",
        "checkpoint-00000010.mssl",
        "checkpoint-00000015.mssl",
    ]


def test_batch_larger_than_dataset(tiny_config):
    cfg = tiny_config.replace(batch_size=32, memory_size=64)
    train_set, _ = trainer.build_dataset(cfg.replace(per_class=5))
    with pytest.raises(errors.ConfigError):
        trainer.train(cfg, train_set)
