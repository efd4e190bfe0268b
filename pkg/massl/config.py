"""Training configuration.

A ``TrainConfig`` is read from an INI file. Every field lives in one
section; options that are missing fall back to ``massl.defaults``.

    [memory]
    memory_size = 1024
    block_size = 256
    sampling = stochastic
"""

import configparser
import dataclasses
import logging
from dataclasses import dataclass

from massl import data
from massl import defaults
from massl import errors
from massl import memory
from massl import model

LOGGER = logging.getLogger("massl")

ENQUEUE_POLICIES = ("one-global", "both-globals")
ENCODERS = ("teacher", "student")


@dataclass(frozen=True)
class TrainConfig:
    # [data]
    data_source: str = "blobs"
    csv_path: str = ""
    num_classes: int = defaults.DEF_NUM_CLASSES
    per_class: int = defaults.DEF_PER_CLASS
    input_dim: int = defaults.DEF_INPUT_DIM
    separation: float = defaults.DEF_SEPARATION
    noise: float = defaults.DEF_NOISE
    data_seed: int = defaults.DEF_DATA_SEED
    test_fraction: float = defaults.DEF_TEST_FRACTION
    # [model]
    backbone_widths: tuple = defaults.DEF_BACKBONE_WIDTHS
    head_hidden: int = defaults.DEF_HEAD_HIDDEN
    out_dim: int = defaults.DEF_OUT_DIM
    # [memory]
    memory_size: int = defaults.DEF_MEMORY_SIZE
    block_size: int = defaults.DEF_BLOCK_SIZE
    sampling: str = defaults.DEF_SAMPLING
    enqueue_policy: str = defaults.DEF_ENQUEUE_POLICY
    # [loss]
    tau_s: float = defaults.DEF_TAU_S
    tau_t_start: float = defaults.DEF_TAU_T_START
    tau_t_end: float = defaults.DEF_TAU_T_END
    tau_t_warmup_epochs: int = defaults.DEF_TAU_T_WARMUP_EPOCHS
    # [views]
    n_global: int = defaults.DEF_N_GLOBAL
    n_local: int = defaults.DEF_N_LOCAL
    global_noise: float = defaults.DEF_GLOBAL_NOISE
    global_dropout: float = defaults.DEF_GLOBAL_DROPOUT
    global_scale_jitter: float = defaults.DEF_GLOBAL_SCALE_JITTER
    local_noise: float = defaults.DEF_LOCAL_NOISE
    local_dropout: float = defaults.DEF_LOCAL_DROPOUT
    local_scale_jitter: float = defaults.DEF_LOCAL_SCALE_JITTER
    # [optim]
    lr: float = defaults.DEF_LR
    lr_end: float = defaults.DEF_LR_END
    wd_start: float = defaults.DEF_WD_START
    wd_end: float = defaults.DEF_WD_END
    beta1: float = defaults.DEF_BETA1
    beta2: float = defaults.DEF_BETA2
    adam_eps: float = defaults.DEF_ADAM_EPS
    # [ema]
    momentum_start: float = defaults.DEF_MOMENTUM_START
    momentum_end: float = defaults.DEF_MOMENTUM_END
    # [train]
    epochs: int = defaults.DEF_EPOCHS
    batch_size: int = defaults.DEF_BATCH_SIZE
    seed: int = defaults.DEF_SEED
    log_interval: int = defaults.DEF_LOG_INTERVAL
    checkpoint_interval: int = defaults.DEF_CHECKPOINT_INTERVAL
    log_wall_clock: bool = False
    # [eval]
    eval_encoder: str = defaults.DEF_EVAL_ENCODER
    # [output]
    out_dir: str = defaults.DEF_OUT_DIR
    log_file: str = ""

    @property
    def strategy(self):
        return memory.SamplingStrategy(self.sampling)

    @property
    def enqueue_count(self):
        """Vectors written to memory per step."""
        per_view = 2 if self.enqueue_policy == "both-globals" else 1
        return per_view * self.batch_size

    def arch(self, input_dim=None):
        return model.ArchConfig(
            input_dim=self.input_dim if input_dim is None else input_dim,
            backbone_widths=tuple(self.backbone_widths),
            head_hidden=self.head_hidden,
            out_dim=self.out_dim,
        )

    def view_recipe(self):
        return data.ViewRecipe(
            n_global=self.n_global,
            n_local=self.n_local,
            global_spec=data.AugmentSpec(
                self.global_noise, self.global_dropout, self.global_scale_jitter
            ),
            local_spec=data.AugmentSpec(
                self.local_noise, self.local_dropout, self.local_scale_jitter
            ),
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def validate(self):
        """Raise ConfigError for any inconsistent setting; return self."""
        problems = []
        if self.data_source not in ("blobs", "csv"):
            problems.append(f"unknown data source {self.data_source!r}")
        if self.data_source == "csv" and not self.csv_path:
            problems.append("csv data source needs csv_path")
        if self.sampling not in {s.value for s in memory.SamplingStrategy}:
            problems.append(f"unknown sampling strategy {self.sampling!r}")
        if self.enqueue_policy not in ENQUEUE_POLICIES:
            problems.append(f"unknown enqueue policy {self.enqueue_policy!r}")
        if self.eval_encoder not in ENCODERS:
            problems.append(f"unknown eval encoder {self.eval_encoder!r}")
        if self.memory_size < 1 or self.block_size < 2:
            problems.append("memory_size must be >= 1 and block_size >= 2")
        elif self.memory_size % self.block_size:
            problems.append(
                f"block_size {self.block_size} does not divide memory_size {self.memory_size}"
            )
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.enqueue_count > self.memory_size:
            problems.append(
                f"{self.enqueue_count} vectors enqueued per step exceed memory_size {self.memory_size}"
            )
        if self.n_global < 2:
            problems.append("training needs at least 2 global views")
        if self.n_local < 0:
            problems.append("n_local must be >= 0")
        if min(self.tau_s, self.tau_t_start, self.tau_t_end) <= 0:
            problems.append("temperatures must be > 0")
        if self.tau_t_warmup_epochs < 1:
            problems.append("tau_t_warmup_epochs must be >= 1")
        if not 0.0 <= self.momentum_start <= self.momentum_end <= 1.0:
            problems.append("EMA momentum must satisfy 0 <= start <= end <= 1")
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.log_interval < 1 or self.checkpoint_interval < 0:
            problems.append("log_interval must be >= 1 and checkpoint_interval >= 0")
        if not 0.0 <= self.test_fraction < 1.0:
            problems.append("test_fraction must be in [0, 1)")
        if self.out_dim < 2 or self.head_hidden < 1 or not self.backbone_widths:
            problems.append("invalid architecture widths")
        for prefix in ("global", "local"):
            p = getattr(self, f"{prefix}_dropout")
            if not 0.0 <= p < 1.0:
                problems.append(f"{prefix}_dropout must be in [0, 1)")
        if problems:
            raise errors.ConfigError("; ".join(problems))
        return self

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["backbone_widths"] = list(self.backbone_widths)
        return out

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise errors.ConfigError(f"unknown config fields: {sorted(unknown)}")
        values = dict(values)
        if "backbone_widths" in values:
            values["backbone_widths"] = tuple(values["backbone_widths"])
        return cls(**values)


SECTIONS = {
    "data": (
        "data_source",
        "csv_path",
        "num_classes",
        "per_class",
        "input_dim",
        "separation",
        "noise",
        "data_seed",
        "test_fraction",
    ),
    "model": ("backbone_widths", "head_hidden", "out_dim"),
    "memory": ("memory_size", "block_size", "sampling", "enqueue_policy"),
    "loss": ("tau_s", "tau_t_start", "tau_t_end", "tau_t_warmup_epochs"),
    "views": (
        "n_global",
        "n_local",
        "global_noise",
        "global_dropout",
        "global_scale_jitter",
        "local_noise",
        "local_dropout",
        "local_scale_jitter",
    ),
    "optim": ("lr", "lr_end", "wd_start", "wd_end", "beta1", "beta2", "adam_eps"),
    "ema": ("momentum_start", "momentum_end"),
    "train": (
        "epochs",
        "batch_size",
        "seed",
        "log_interval",
        "checkpoint_interval",
        "log_wall_clock",
    ),
    "eval": ("eval_encoder",),
    "output": ("out_dir", "log_file"),
}


def _convert(parser, section, option, default):
    if isinstance(default, bool):
        return parser.getboolean(section, option)
    if isinstance(default, int):
        return parser.getint(section, option)
    if isinstance(default, float):
        return parser.getfloat(section, option)
    if isinstance(default, tuple):
        raw = parser.get(section, option)
        return tuple(int(w) for w in raw.replace(",", " ").split())
    return parser.get(section, option).strip()


def get_setting(parser, section, option, default):
    """Get an option value from the parsed configuration file."""
    if not parser.has_option(section, option):
        LOGGER.debug("No option provided for %s.%s, using %s", section, option, default)
        return default
    try:
        value = _convert(parser, section, option, default)
    except ValueError as err:
        raise errors.ConfigError(f"[{section}] {option}: {err}")
    LOGGER.debug("Configuration value read for %s.%s: %s", section, option, value)
    return value


def parse_config(text):
    """Build a TrainConfig from INI text."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise errors.ConfigError(f"cannot parse configuration: {err}")
    for section in parser.sections():
        if section not in SECTIONS:
            raise errors.ConfigError(f"unknown section [{section}]")
        unknown = set(parser.options(section)) - set(SECTIONS[section])
        if unknown:
            raise errors.ConfigError(f"unknown options in [{section}]: {sorted(unknown)}")
    base = TrainConfig()
    values = {
        field: get_setting(parser, section, field, getattr(base, field))
        for section, fields in SECTIONS.items()
        for field in fields
    }
    return TrainConfig(**values)


def load_config(config_file, **overrides):
    """Read ``config_file``, apply non-None overrides and validate.

    :raises ConfigError: for unreadable or inconsistent configuration
    """
    try:
        with open(config_file) as config_input:
            text = config_input.read()
    except OSError as err:
        raise errors.ConfigError(f"cannot read {config_file}: {err}")
    cfg = parse_config(text)
    changes = {k: v for k, v in overrides.items() if v is not None}
    if changes:
        LOGGER.info("Overriding configuration: %s", changes)
        cfg = cfg.replace(**changes)
    return cfg.validate()
