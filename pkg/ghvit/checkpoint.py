"""Binary checkpoint codec.

Layout (little-endian except the magic):

    b"GHVT" | u8 version | u32 len + UTF-8 config block
    | u32 tensor count | per tensor: u16 len + UTF-8 name, u8 rank, u32 extents, f32 payload
    | u32 len + UTF-8 metric history ("epoch:train_loss:test_accuracy" records joined by ",")

The config block is the run config echo followed by `checkpoint.*` state keys.
Optimizer moments are stored as tensors named adam.m.<param> / adam.v.<param>.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from ghvit.errors import CheckpointError
from ghvit.metrics import EpochRecord

MAGIC = b"GHVT"
FORMAT_VERSION = 1
_STATE_PREFIX = "checkpoint."
_M_PREFIX = "adam.m."
_V_PREFIX = "adam.v."


@dataclass(eq=False)
class Checkpoint:
    config_text: str
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_step: int = 0
    epoch: int = 0
    seed: int = 0
    history: list[EpochRecord] = field(default_factory=list)
    version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        if self.config_text and not self.config_text.endswith("\n"):
            self.config_text += "\n"


def _state_lines(ckpt: Checkpoint) -> str:
    return (
        f"{_STATE_PREFIX}adam_step={ckpt.adam_step}\n"
        f"{_STATE_PREFIX}epoch={ckpt.epoch}\n"
        f"{_STATE_PREFIX}seed={ckpt.seed}\n"
    )


def _pack_block(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    raw_name = name.encode("utf-8")
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim > 255:
        raise CheckpointError(f"tensor {name} has rank {arr.ndim}, limit is 255")
    head = struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<B", arr.ndim)
    return head + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes()


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    tensors: list[tuple[str, np.ndarray]] = list(ckpt.params.items())
    tensors += [(_M_PREFIX + k, v) for k, v in ckpt.adam_m.items()]
    tensors += [(_V_PREFIX + k, v) for k, v in ckpt.adam_v.items()]
    parts = [MAGIC, struct.pack("<B", ckpt.version), _pack_block(ckpt.config_text + _state_lines(ckpt))]
    parts.append(struct.pack("<I", len(tensors)))
    parts += [_pack_tensor(name, arr) for name, arr in tensors]
    parts.append(_pack_block(",".join(r.to_history_field() for r in ckpt.history)))
    return b"".join(parts)


class _Reader:
    def __init__(self, raw: bytes) -> None:
        self.raw = raw
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.raw):
            raise CheckpointError(f"truncated checkpoint at byte offset {self.offset}", details={"offset": self.offset})
        out = self.raw[self.offset : self.offset + n]
        self.offset += n
        return out

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def block(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")


def decode_checkpoint(raw: bytes) -> Checkpoint:
    r = _Reader(raw)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = r.unpack("<B")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint version {version} is not supported (this build reads version {FORMAT_VERSION})",
            details={"found": version, "expected": FORMAT_VERSION},
        )
    try:
        ckpt = _decode_body(r, version)
    except (ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(
            f"corrupted checkpoint near byte offset {r.offset}: {e}", details={"offset": r.offset}
        ) from e
    if r.offset != len(raw):
        raise CheckpointError(f"trailing bytes after checkpoint at offset {r.offset}")
    return ckpt


def _decode_body(r: _Reader, version: int) -> Checkpoint:
    config_lines, state = [], {}
    for line in r.block().splitlines(keepends=True):
        if line.startswith(_STATE_PREFIX):
            key, value = line.strip()[len(_STATE_PREFIX) :].split("=", 1)
            state[key] = int(value)
        else:
            config_lines.append(line)

    (count,) = r.unpack("<I")
    params, adam_m, adam_v = {}, {}, {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I")
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
        if name.startswith(_M_PREFIX):
            adam_m[name[len(_M_PREFIX) :]] = arr
        elif name.startswith(_V_PREFIX):
            adam_v[name[len(_V_PREFIX) :]] = arr
        else:
            params[name] = arr

    history_text = r.block()
    history = [EpochRecord.from_history_field(f) for f in history_text.split(",")] if history_text else []
    return Checkpoint(
        config_text="".join(config_lines),
        params=params,
        adam_m=adam_m,
        adam_v=adam_v,
        adam_step=state.get("adam_step", 0),
        epoch=state.get("epoch", 0),
        seed=state.get("seed", 0),
        history=history,
        version=version,
    )


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    """Write atomically: a crash never leaves a half-written checkpoint."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    os.replace(tmp, path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror}") from e
    return decode_checkpoint(raw)
