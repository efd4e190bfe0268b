"""Checkpoint

Everything needed to resume training, in a little-endian binary file:

    magic          4 bytes  b"MSSL"
    version        u32
    config         u32 length + UTF-8 JSON (TrainConfig fields)
    state          u32 length + UTF-8 JSON (counters, memory cursor,
                   optimizer constants, block sampler RNG state)
    array count    u32
    arrays         per array: u16 name length, name, u8 dtype code
                   (4 = f32, 8 = f64, 9 = i64), u8 ndim, ndim x u32 dims,
                   raw little-endian data

Arrays are written in a fixed order: student parameters, teacher
parameters, optimizer first and second moments, memory ages, memory slots
(physical slot order). Float arrays are written as f64 by default, which
makes resume bit-exact; ``precision="f4"`` writes a compact copy.
"""

import json
import logging
import os
import struct
from dataclasses import dataclass

import numpy as np

from massl import config as massl_config
from massl import defaults
from massl import errors
from massl import memory
from massl import model
from massl import optim

LOGGER = logging.getLogger("massl")

_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8"), 9: np.dtype("<i8")}


@dataclass
class Checkpoint:
    """Complete mutable state of a training run."""

    config: massl_config.TrainConfig
    input_dim: int
    student: model.ModelParams
    teacher: model.ModelParams
    opt_state: optim.AdamWState
    memory: memory.Memory
    plan_rng: np.random.Generator
    step: int = 0
    epoch: int = 0


def _pack_text(text):
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_array(name, array, float_code):
    array = np.asarray(array)
    code = 9 if array.dtype.kind in "iu" else float_code
    raw_name = name.encode("utf-8")
    header = struct.pack("<H", len(raw_name)) + raw_name
    header += struct.pack("<BB", code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes()


class _Reader:
    def __init__(self, buf, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise errors.CorruptCheckpoint(f"{self.path} is truncated")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self):
        (length,) = self.unpack("<I")
        return self.take(length).decode("utf-8")

    def array(self):
        (name_len,) = self.unpack("<H")
        name = self.take(name_len).decode("utf-8")
        code, ndim = self.unpack("<BB")
        if code not in _DTYPES:
            raise errors.CorruptCheckpoint(f"unknown dtype code {code} for {name}")
        shape = self.unpack(f"<{ndim}I")
        dtype = _DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(self.take(count * dtype.itemsize), dtype=dtype)
        out = data.reshape(shape)
        out = out.astype(np.int64) if code == 9 else out.astype(np.float64)
        return name, out


def _arrays(ckpt):
    for prefix, params in (("student", ckpt.student), ("teacher", ckpt.teacher)):
        for name, a in params.arrays.items():
            yield f"{prefix}.{name}", a
    for name in ckpt.student.arrays:
        yield f"adam.m.{name}", ckpt.opt_state.m[name]
        yield f"adam.v.{name}", ckpt.opt_state.v[name]
    yield "memory.ages", ckpt.memory.ages
    yield "memory.slots", ckpt.memory.slots


def save_checkpoint(ckpt, path, precision="f8"):
    """Write ``ckpt`` to ``path`` atomically (write then rename)."""
    if precision not in ("f4", "f8"):
        raise errors.InvalidParameter(f"unknown checkpoint precision {precision!r}")
    float_code = 4 if precision == "f4" else 8
    state = {
        "step": ckpt.step,
        "epoch": ckpt.epoch,
        "input_dim": ckpt.input_dim,
        "memory": {
            "capacity": ckpt.memory.capacity,
            "dim": ckpt.memory.dim,
            "cursor": ckpt.memory.cursor,
            "inserted": ckpt.memory.inserted,
        },
        "adam": {
            "step": ckpt.opt_state.step,
            "beta1": ckpt.opt_state.beta1,
            "beta2": ckpt.opt_state.beta2,
            "eps": ckpt.opt_state.eps,
        },
        "plan_rng": ckpt.plan_rng.bit_generator.state,
        "precision": precision,
    }
    arrays = list(_arrays(ckpt))
    parts = [
        defaults.CHECKPOINT_MAGIC,
        struct.pack("<I", defaults.CHECKPOINT_VERSION),
        _pack_text(json.dumps(ckpt.config.to_dict(), sort_keys=True)),
        _pack_text(json.dumps(state, sort_keys=True)),
        struct.pack("<I", len(arrays)),
    ]
    parts.extend(_pack_array(name, a, float_code) for name, a in arrays)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as out:
        out.write(b"".join(parts))
    os.replace(tmp_path, path)
    LOGGER.info("Checkpoint at step %s written to %s", ckpt.step, path)
    return path


def load_checkpoint(path):
    """Read a checkpoint written by ``save_checkpoint``.

    :raises CorruptCheckpoint: for a file without the massl magic bytes
    :raises CheckpointVersionMismatch: for another format version
    """
    with open(path, "rb") as ckpt_input:
        reader = _Reader(ckpt_input.read(), path)
    if reader.take(4) != defaults.CHECKPOINT_MAGIC:
        raise errors.CorruptCheckpoint(f"{path} is not a massl checkpoint")
    (version,) = reader.unpack("<I")
    if version != defaults.CHECKPOINT_VERSION:
        raise errors.CheckpointVersionMismatch(
            f"{path} has format version {version}, "
            f"expected {defaults.CHECKPOINT_VERSION}"
        )
    cfg = massl_config.TrainConfig.from_dict(json.loads(reader.text()))
    state = json.loads(reader.text())
    (count,) = reader.unpack("<I")
    arrays = dict(reader.array() for _ in range(count))

    arch = cfg.arch(state["input_dim"])
    names = [f"{name}.{kind}" for name, *_ in arch.layers() for kind in ("weight", "bias")]
    try:
        student = model.ModelParams(arch, {n: arrays[f"student.{n}"] for n in names})
        teacher = model.ModelParams(arch, {n: arrays[f"teacher.{n}"] for n in names})
        opt_state = optim.AdamWState(
            step=state["adam"]["step"],
            m={n: arrays[f"adam.m.{n}"] for n in names},
            v={n: arrays[f"adam.v.{n}"] for n in names},
            beta1=state["adam"]["beta1"],
            beta2=state["adam"]["beta2"],
            eps=state["adam"]["eps"],
        )
        mem_state = state["memory"]
        mem = memory.Memory(
            capacity=mem_state["capacity"],
            dim=mem_state["dim"],
            slots=arrays["memory.slots"],
            cursor=mem_state["cursor"],
            ages=arrays["memory.ages"],
            inserted=mem_state["inserted"],
        )
    except KeyError as err:
        raise errors.CorruptCheckpoint(f"{path} is missing array {err}")
    plan_rng = np.random.Generator(np.random.PCG64())
    plan_rng.bit_generator.state = state["plan_rng"]
    LOGGER.info("Loaded checkpoint %s at step %s", path, state["step"])
    return Checkpoint(
        config=cfg,
        input_dim=state["input_dim"],
        student=student,
        teacher=teacher,
        opt_state=opt_state,
        memory=mem,
        plan_rng=plan_rng,
        step=state["step"],
        epoch=state["epoch"],
    )
