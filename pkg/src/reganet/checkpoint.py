"""RGKP checkpoint files.

Layout (little-endian): magic ``RGKP``, version u32, entry count u32, then per
entry: name length u16, UTF-8 name, dtype byte (0 = f32), rank u8, dims as
u32, payload as f32. The network config is written next to the checkpoint as
``<path>.cfg`` in the key=value format.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"RGKP"
VERSION = 1
DTYPE_F32 = 0


class CheckpointError(ValueError):
    pass


def encode(entries: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, value in entries.items():
        arr = np.asarray(value, dtype="<f4")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise CheckpointError("not an RGKP checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    entries = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            dtype, rank = struct.unpack_from("<BB", buf, pos)
            pos += 2
            if dtype != DTYPE_F32:
                raise CheckpointError(f"entry {name!r}: unsupported dtype byte {dtype}")
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            arr = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims)
            pos += 4 * size
            entries[name] = arr.copy()
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes after {count} entries")
    return entries


def state_dict(model) -> dict[str, np.ndarray]:
    state = {name: p.data for name, p in model.named_parameters()}
    state.update(model.named_buffers())
    return state


def load_state(model, entries: dict[str, np.ndarray]) -> None:
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    expected = set(params) | set(buffers)
    if set(entries) != expected:
        missing = sorted(expected - set(entries))
        extra = sorted(set(entries) - expected)
        raise CheckpointError(f"checkpoint does not match model: missing {missing}, unexpected {extra}")
    for name, value in entries.items():
        target = params[name].data if name in params else buffers[name]
        if target.shape != value.shape:
            raise CheckpointError(f"{name}: checkpoint shape {value.shape} != model shape {target.shape}")
        target[...] = value


def save(model, path) -> Path:
    from .config import network_to_mapping, write_config

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(state_dict(model)))
    write_config(config_path(path), network_to_mapping(model.cfg))
    return path


def config_path(path) -> Path:
    return Path(str(path) + ".cfg")


def load(path, cfg=None):
    """Rebuild a model from ``path`` (and its sidecar config unless given)."""
    from .attention import build_network
    from .config import network_from_mapping, read_config

    path = Path(path)
    if cfg is None:
        side = config_path(path)
        if not side.exists():
            raise CheckpointError(f"no network config given and {side} is missing")
        cfg = network_from_mapping(read_config(side))
    model = build_network(cfg, seed=0)
    load_state(model, decode(path.read_bytes()))
    return model
