"""
checkpoint.py - Versioned binary checkpoints

Layout (all integers little-endian):

    magic            4 bytes  b"BMCK"
    version          u32
    architecture     u32 length + UTF-8 JSON
    parameters       tensor block
    optimizer step   u64
    optimizer        tensor block (Adam moments, may be empty)
    trainer state    u32 length + UTF-8 JSON

A tensor block is a u32 count, then per tensor a u16 name length, the
UTF-8 name, a u8 rank and u32 extents, followed by the float32 data of
every tensor in table order.

The model identity is the SHA-256 of the architecture JSON and the
parameter data; bitstreams record it and refuse other checkpoints.
"""
import hashlib
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from autodiff.optim import AdamState
from models.architecture import Architecture
from models.compression import build_model
from utils import config
from utils.console_logger import debug, success
from utils.errors import (CheckpointFormatError, CheckpointShapeError, CheckpointTruncatedError,
                          CheckpointVersionError, ConfigurationError)

IDENTITY_BYTES = 16


@dataclass
class LoadedCheckpoint:
    model: torch.nn.Module
    architecture: Architecture
    identity: bytes
    optimizer_step: int = 0
    optimizer_tensors: Dict[str, torch.Tensor] = field(default_factory=dict)
    trainer_state: dict = field(default_factory=dict)

    @property
    def identity_hex(self) -> str:
        return self.identity.hex()


def _parameter_tensors(model: torch.nn.Module) -> List[Tuple[str, torch.Tensor]]:
    return [(name, p.detach().to(torch.float32).contiguous()) for name, p in model.named_parameters()]


def model_identity(architecture: Architecture, tensors: List[Tuple[str, torch.Tensor]]) -> bytes:
    digest = hashlib.sha256(architecture.to_json().encode("utf-8"))
    for name, tensor in tensors:
        digest.update(name.encode("utf-8"))
        digest.update(tensor.numpy().astype("<f4").tobytes())
    return digest.digest()[:IDENTITY_BYTES]


def identity_of(model: torch.nn.Module) -> bytes:
    return model_identity(model.architecture, _parameter_tensors(model))


def _write_block(stream, tensors: List[Tuple[str, torch.Tensor]]) -> None:
    stream.write(struct.pack("<I", len(tensors)))
    for name, tensor in tensors:
        encoded = name.encode("utf-8")
        stream.write(struct.pack("<H", len(encoded)))
        stream.write(encoded)
        stream.write(struct.pack("<B", tensor.dim()))
        stream.write(struct.pack(f"<{tensor.dim()}I", *tensor.shape))
    for _, tensor in tensors:
        stream.write(tensor.detach().cpu().numpy().astype("<f4").tobytes())


def _write_json(stream, payload) -> None:
    encoded = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    stream.write(struct.pack("<I", len(encoded)))
    stream.write(encoded)


def serialize_checkpoint(model: torch.nn.Module, optimizer: Optional[AdamState] = None,
                         trainer_state: Optional[dict] = None) -> bytes:
    stream = io.BytesIO()
    stream.write(config.CHECKPOINT_MAGIC)
    stream.write(struct.pack("<I", config.CHECKPOINT_VERSION))
    _write_json(stream, model.architecture.to_dict())
    _write_block(stream, _parameter_tensors(model))

    if optimizer is not None:
        names = {p: name for name, p in model.named_parameters()}
        moments = sorted(optimizer.export(names).items())
        stream.write(struct.pack("<Q", optimizer.step_count))
    else:
        moments = []
        stream.write(struct.pack("<Q", 0))
    _write_block(stream, moments)
    _write_json(stream, trainer_state or {})
    return stream.getvalue()


def save_checkpoint(path: str, model: torch.nn.Module, optimizer: Optional[AdamState] = None,
                    trainer_state: Optional[dict] = None) -> bytes:
    """Write atomically (temp file + rename) and return the model identity."""
    data = serialize_checkpoint(model, optimizer, trainer_state)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    identity = identity_of(model)
    debug(f"Saved checkpoint {path} ({len(data)} bytes, id {identity.hex()})")
    return identity


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointTruncatedError(
                f"checkpoint truncated: needed {size} bytes at offset {self.offset}, file has {len(self.data)}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def json(self):
        (length,) = self.unpack("<I")
        try:
            return json.loads(self.take(length).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointFormatError(f"malformed JSON section: {e}") from e

    def block(self) -> List[Tuple[str, torch.Tensor]]:
        (count,) = self.unpack("<I")
        table = []
        for _ in range(count):
            (name_length,) = self.unpack("<H")
            name = self.take(name_length).decode("utf-8", errors="replace")
            (rank,) = self.unpack("<B")
            shape = self.unpack(f"<{rank}I") if rank else ()
            table.append((name, tuple(shape)))
        tensors = []
        for name, shape in table:
            count = int(np.prod(shape)) if shape else 1
            values = np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)
            tensors.append((name, torch.from_numpy(values.reshape(shape).copy())))
        return tensors


def load_checkpoint_bytes(data: bytes) -> LoadedCheckpoint:
    reader = _Reader(data)
    magic = reader.take(len(config.CHECKPOINT_MAGIC))
    if magic != config.CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"not a checkpoint (magic {magic!r})")
    (version,) = reader.unpack("<I")
    if version != config.CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this build reads {config.CHECKPOINT_VERSION}")

    try:
        architecture = Architecture.from_dict(reader.json())
    except (ConfigurationError, TypeError) as e:
        raise CheckpointFormatError(f"invalid architecture section: {e}") from e
    tensors = reader.block()
    (optimizer_step,) = reader.unpack("<Q")
    moments = reader.block()
    trainer_state = reader.json()

    model = build_model(architecture)
    expected = dict(model.named_parameters())
    stored = dict(tensors)
    if set(stored) != set(expected):
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        raise CheckpointShapeError(f"parameter table mismatch (missing {missing[:3]}, unexpected {extra[:3]})")
    with torch.no_grad():
        for name, param in expected.items():
            if tuple(stored[name].shape) != tuple(param.shape):
                raise CheckpointShapeError(
                    f"{name}: stored shape {tuple(stored[name].shape)} != model shape {tuple(param.shape)}")
            param.copy_(stored[name])

    model.eval()
    return LoadedCheckpoint(model=model, architecture=architecture, identity=model_identity(architecture, tensors),
                            optimizer_step=int(optimizer_step), optimizer_tensors=dict(moments),
                            trainer_state=trainer_state)


def load_checkpoint(path: str) -> LoadedCheckpoint:
    with open(path, "rb") as f:
        data = f.read()
    loaded = load_checkpoint_bytes(data)
    success(f"Loaded {loaded.architecture.model_kind} checkpoint {os.path.basename(path)} "
            f"(N={loaded.architecture.n_filters}, M={loaded.architecture.m_filters}, "
            f"lambda={loaded.architecture.lmbda}, id {loaded.identity_hex})", emoji="📦")
    return loaded
