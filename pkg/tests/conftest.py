import os

import numpy as np
import pytest

from massl import config


def pytest_collection_modifyitems(config, items):
    if os.environ.get("MASSL_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set MASSL_RUN_SLOW=1 to run desk-scale runs")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture
def tiny_config(tmp_path):
    """A configuration that trains in well under a second."""
    return config.TrainConfig(
        num_classes=3,
        per_class=20,
        input_dim=6,
        separation=4.0,
        noise=0.5,
        test_fraction=0.25,
        backbone_widths=(8,),
        head_hidden=8,
        out_dim=4,
        memory_size=32,
        block_size=8,
        n_global=2,
        n_local=1,
        tau_t_warmup_epochs=2,
        epochs=3,
        batch_size=8,
        log_interval=1,
        out_dir=str(tmp_path / "run"),
    ).validate()


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(
        "[data]\n"
        "num_classes = 3\n"
        "per_class = 20\n"
        "input_dim = 6\n"
        "noise = 0.5\n"
        "test_fraction = 0.25\n"
        "[model]\n"
        "backbone_widths = 8\n"
        "head_hidden = 8\n"
        "out_dim = 4\n"
        "[memory]\n"
        "memory_size = 32\n"
        "block_size = 8\n"
        "[loss]\n"
        "tau_t_warmup_epochs = 2\n"
        "[views]\n"
        "n_local = 1\n"
        "[train]\n"
        "epochs = 2\n"
        "batch_size = 8\n"
        "log_interval = 1\n"
        f"[output]\nout_dir = {tmp_path / 'run'}\n"
    )
    return str(path)
