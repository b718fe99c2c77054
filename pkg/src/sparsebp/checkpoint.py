"""Flat binary model checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"SSPN"
    version u32      currently 1
    count   u32      number of layers
    then per layer:
        name    u16 length + utf-8 bytes
        nparams u32  named blocks that follow (parameters, then buffers)
        per block:
            name  u16 length + utf-8 bytes
            ndim  u8
            dims  u32 * ndim
            data  float32 * prod(dims)

Values are stored as 32-bit floats regardless of the training precision.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError
from .model import SequentialModel

MAGIC = b"SSPN"
VERSION = 1


def _write_name(out: bytearray, name: str) -> None:
    raw = name.encode("utf-8")
    out += struct.pack("<H", len(raw))
    out += raw


def _write_block(out: bytearray, name: str, value: np.ndarray) -> None:
    _write_name(out, name)
    value = np.asarray(value)
    out += struct.pack("<B", value.ndim)
    out += struct.pack(f"<{value.ndim}I", *value.shape)
    out += np.ascontiguousarray(value, dtype="<f4").tobytes()


def save_checkpoint(model: SequentialModel, path: str | Path) -> None:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, len(model.layers))
    for name, layer in model.named_layers():
        _write_name(out, name)
        blocks = list(layer.params().items()) + list(layer.buffers().items())
        out += struct.pack("<I", len(blocks))
        for bname, block in blocks:
            value = block.value if hasattr(block, "value") else block
            _write_block(out, bname, value)
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"checkpoint truncated at offset {self.pos}: "
                f"needed {n} bytes, {len(self.data) - self.pos} left"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def read_checkpoint(path: str | Path) -> dict[str, dict[str, np.ndarray]]:
    """Parse a checkpoint into {layer name: {block name: array}}."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise FormatError(f"bad checkpoint magic at offset 0 in {path}")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    layers: dict[str, dict[str, np.ndarray]] = {}
    for _ in range(count):
        lname = r.name()
        (nblocks,) = r.unpack("<I")
        blocks: dict[str, np.ndarray] = {}
        for _ in range(nblocks):
            bname = r.name()
            (ndim,) = r.unpack("<B")
            dims = r.unpack(f"<{ndim}I") if ndim else ()
            n = int(np.prod(dims)) if dims else 1
            raw = r.take(4 * n)
            blocks[bname] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        layers[lname] = blocks
    if r.pos != len(r.data):
        raise FormatError(
            f"checkpoint has {len(r.data) - r.pos} trailing bytes at "
            f"offset {r.pos}"
        )
    return layers


def load_checkpoint(model: SequentialModel, path: str | Path) -> None:
    """Load saved values into a model built from the same spec.

    Any mismatch in layer names, block names or shapes raises FormatError
    naming the offending layer.
    """
    saved = read_checkpoint(path)
    model_names = [name for name, _ in model.named_layers()]
    if list(saved) != model_names:
        raise FormatError(
            f"checkpoint layers {list(saved)} do not match model layers "
            f"{model_names}"
        )
    for name, layer in model.named_layers():
        blocks = saved[name]
        expected = list(layer.params()) + list(layer.buffers())
        if list(blocks) != expected:
            raise FormatError(
                f"layer {name}: checkpoint blocks {list(blocks)} do not "
                f"match expected {expected}"
            )
        for bname, param in layer.params().items():
            value = blocks[bname]
            if value.shape != param.value.shape:
                raise FormatError(
                    f"layer {name}: block {bname} has shape {value.shape}, "
                    f"model expects {param.value.shape}"
                )
            param.value = value.astype(param.value.dtype)
        for bname in layer.buffers():
            value = blocks[bname]
            current = layer.buffers()[bname]
            if value.shape != current.shape:
                raise FormatError(
                    f"layer {name}: buffer {bname} has shape {value.shape}, "
                    f"model expects {current.shape}"
                )
            layer.set_buffer(bname, value.astype(current.dtype))
