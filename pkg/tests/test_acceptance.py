#!/usr/bin/env python
"""Desk-scale runs of the shipped configuration (minutes of CPU each).

Skipped unless MASSL_RUN_SLOW=1.
"""
import csv
import json
import os
from collections import defaultdict

import pytest

from massl import cli
from massl import defaults
from massl import errors
from massl import trainer

ETC_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "etc")
DESK_CONFIG = os.path.join(ETC_DIR, "desk.ini")

pytestmark = pytest.mark.slow


def _rows(path):
    with open(path, newline="") as csv_input:
        return list(csv.DictReader(csv_input))


@pytest.fixture(scope="module")
def sampling_sweep(tmp_path_factory):
    out_dir = str(tmp_path_factory.mktemp("sampling"))
    code = cli.ablate_main(DESK_CONFIG, "sampling", seeds=3, out_dir=out_dir)
    assert code == errors.EXIT_OK
    return os.path.join(out_dir, "ablation-sampling")


def test_stochastic_blocks_beat_contiguous_blocks(sampling_sweep):
    by_seed = defaultdict(dict)
    for row in _rows(os.path.join(sampling_sweep, "ablation-sampling.csv")):
        strategy, _ = row["setting"].split("/")
        by_seed[row["seed"]][strategy] = row
    assert len(by_seed) == 3

    passed = 0
    for runs in by_seed.values():
        stochastic = float(runs["stochastic"]["knn"])
        blockwise = runs["blockwise"]
        gap = stochastic - float(blockwise["knn"])
        if stochastic >= defaults.PILOT_KNN_THRESHOLD and (
            gap >= defaults.PILOT_COLLAPSE_GAP or blockwise["collapsed"] == "True"
        ):
            passed += 1
    assert passed >= 2


def test_stochastic_runs_never_collapse(sampling_sweep):
    setting = f"stochastic-{defaults.DEF_BLOCK_SIZE}"
    seeds = sorted(os.listdir(os.path.join(sampling_sweep, setting)))
    assert len(seeds) == 3
    for seed_dir in seeds:
        path = os.path.join(sampling_sweep, setting, seed_dir, trainer.METRICS_FILE)
        with open(path) as metrics_input:
            records = [json.loads(line) for line in metrics_input]
        assert records
        assert not any(r["collapsed"] for r in records), seed_dir


def test_larger_memory_does_not_hurt(tmp_path):
    code = cli.ablate_main(DESK_CONFIG, "memory-size", seeds=3, out_dir=str(tmp_path))
    assert code == errors.EXIT_OK
    scores = defaultdict(list)
    for row in _rows(tmp_path / "ablation-memory-size" / "ablation-memory-size.csv"):
        scores[int(row["setting"])].append(float(row["knn"]))
    assert sorted(scores) == list(defaults.MEMORY_SWEEP_VALUES)
    assert all(len(v) == 3 for v in scores.values())
    means = {k: sum(v) / len(v) for k, v in scores.items()}
    assert means[2048] >= means[64] - defaults.PILOT_MEMORY_TOLERANCE
    assert max(means, key=means.get) >= 512
