"""LCK1 binary checkpoint format.

Layout (little-endian): magic "LCK1" | version u16 | JSON architecture
descriptor (u32 length prefix) | weight blocks in declaration order
(generator first, then critic, then Adam state), each block being a
length-prefixed name, u8 rank, u32 dims, float64 payload | JSON training
config echo (u32 length prefix) | dataset digest (32 bytes).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .dataset_io import FormatError
from .train import Checkpoint, TrainConfig

MAGIC = b"LCK1"
VERSION = 1


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode()
    out = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
    out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return out


def _unpack_array(blob: bytes, off: int) -> tuple[str, np.ndarray, int]:
    (nlen,) = struct.unpack_from("<H", blob, off)
    off += 2
    name = blob[off:off + nlen].decode()
    off += nlen
    (rank,) = struct.unpack_from("<B", blob, off)
    off += 1
    shape = struct.unpack_from(f"<{rank}I", blob, off)
    off += 4 * rank
    count = int(np.prod(shape)) if rank else 1
    arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape).copy()
    off += 8 * count
    return name, arr, off


def _adam_blocks(prefix: str, names: list[str], state: dict) -> list[tuple[str, np.ndarray]]:
    blocks = [(f"{prefix}.t", np.array(float(state["t"])).reshape(()))]
    for kind in ("m", "v"):
        blocks += [(f"{prefix}.{kind}.{n}", a) for n, a in zip(names, state[kind])]
    return blocks


def serialize_checkpoint(ckpt: Checkpoint) -> bytes:
    arch = {"L": ckpt.L, "z_dim": ckpt.z_dim}
    blocks: list[tuple[str, np.ndarray]] = []
    blocks += [(f"g.{n}", a) for n, a in ckpt.g_weights.items()]
    blocks += [(f"d.{n}", a) for n, a in ckpt.d_weights.items()]
    blocks += _adam_blocks("adam_g", list(ckpt.g_weights), ckpt.adam_g)
    blocks += _adam_blocks("adam_d", list(ckpt.d_weights), ckpt.adam_d)

    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", VERSION)
    arch_js = json.dumps(arch, sort_keys=True).encode()
    out += struct.pack("<I", len(arch_js)) + arch_js
    out += struct.pack("<I", len(blocks))
    for name, arr in blocks:
        out += _pack_array(name, np.asarray(arr, dtype=np.float64))
    cfg_js = json.dumps({"iteration": ckpt.iteration, "cfg": vars(ckpt.cfg)},
                        sort_keys=True).encode()
    out += struct.pack("<I", len(cfg_js)) + cfg_js
    if len(ckpt.dataset_digest) != 32:
        raise FormatError("dataset digest must be 32 bytes")
    out += ckpt.dataset_digest
    return bytes(out)


def deserialize_checkpoint(blob: bytes) -> Checkpoint:
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    off = 4
    (version,) = struct.unpack_from("<H", blob, off)
    off += 2
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (alen,) = struct.unpack_from("<I", blob, off)
    off += 4
    arch = json.loads(blob[off:off + alen])
    off += alen
    (nblocks,) = struct.unpack_from("<I", blob, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    order: list[str] = []
    for _ in range(nblocks):
        name, arr, off = _unpack_array(blob, off)
        arrays[name] = arr
        order.append(name)
    (clen,) = struct.unpack_from("<I", blob, off)
    off += 4
    meta = json.loads(blob[off:off + clen])
    off += clen
    digest = blob[off:off + 32]
    if len(digest) != 32 or off + 32 != len(blob):
        raise FormatError("truncated or oversized checkpoint payload")

    g_weights = {n[2:]: arrays[n] for n in order if n.startswith("g.")}
    d_weights = {n[2:]: arrays[n] for n in order if n.startswith("d.")}

    def adam_state(prefix, names):
        return {"t": int(arrays[f"{prefix}.t"]),
                "m": [arrays[f"{prefix}.m.{n}"] for n in names],
                "v": [arrays[f"{prefix}.v.{n}"] for n in names]}

    return Checkpoint(
        L=int(arch["L"]), z_dim=int(arch["z_dim"]),
        g_weights=g_weights, d_weights=d_weights,
        adam_g=adam_state("adam_g", list(g_weights)),
        adam_d=adam_state("adam_d", list(d_weights)),
        cfg=TrainConfig(**meta["cfg"]), iteration=int(meta["iteration"]),
        dataset_digest=digest)


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as f:
        f.write(serialize_checkpoint(ckpt))


def read_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        return deserialize_checkpoint(f.read())
