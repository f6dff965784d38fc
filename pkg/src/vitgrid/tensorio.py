"""Portable tensor container: a plain-text header followed by raw payload.

Layout of a .vtt file:

    vitgrid-tensors 1\n
    meta <key> <value>\n                  (zero or more)
    tensor <name> <f32|f64> <ndim> <d0> ... <dk> <offset>\n
    end\n
    <payload: little-endian row-major values, concatenated per header offsets>

Offsets are byte positions inside the payload. Values round-trip bit-exactly
for both dtypes. Tensor names must be unique; meta values may contain spaces.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .encoder import BlockParams, EncoderConfig, EncoderState, CompressionPlan
from .errors import ValidationError
from .patch_embed import PatchEmbedWeights
from .pooling import CAPoolParams, PixelUnshuffleParams

MAGIC = "vitgrid-tensors 1"
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float64:
        return "f64"
    if arr.dtype == np.float32:
        return "f32"
    raise ValidationError(f"only f32/f64 tensors are supported, got dtype {arr.dtype}")


def write_tensors(path, tensors: dict, meta: dict | None = None) -> None:
    """Write named arrays plus string metadata to a container file."""
    if not tensors:
        raise ValidationError("refusing to write an empty tensor container")
    header = [MAGIC]
    for key, value in (meta or {}).items():
        if any(ch in str(key) for ch in " \n"):
            raise ValidationError(f"meta key {key!r} must not contain spaces")
        header.append(f"meta {key} {value}")
    payload = bytearray()
    for name, arr in tensors.items():
        if any(ch in name for ch in " \n"):
            raise ValidationError(f"tensor name {name!r} must not contain spaces")
        a = np.ascontiguousarray(arr)
        tag = _dtype_tag(a)
        dims = " ".join(str(d) for d in a.shape) if a.ndim else ""
        entry = f"tensor {name} {tag} {a.ndim}"
        if dims:
            entry += f" {dims}"
        entry += f" {len(payload)}"
        header.append(entry)
        payload += a.astype(_DTYPES[tag], copy=False).tobytes()
    header.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(bytes(payload))


def read_tensors(path):
    """Read a container; returns (tensors: dict[str, ndarray], meta: dict[str, str])."""
    path = Path(path)
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    if nl < 0 or raw[:nl].decode("ascii", errors="replace") != MAGIC:
        raise ValidationError(f"{path}: not a vitgrid tensor file (bad magic)")
    meta: dict = {}
    entries = []
    pos = nl + 1
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise ValidationError(f"{path}: truncated header (no 'end' line)")
        line = raw[pos:nl].decode("ascii", errors="replace")
        pos = nl + 1
        if line == "end":
            break
        if line.startswith("meta "):
            _, key, value = line.split(" ", 2)
            meta[key] = value
            continue
        if not line.startswith("tensor "):
            raise ValidationError(f"{path}: unexpected header line {line!r}")
        parts = line.split(" ")
        try:
            name, tag, ndim = parts[1], parts[2], int(parts[3])
            shape = tuple(int(d) for d in parts[4 : 4 + ndim])
            offset = int(parts[4 + ndim])
        except (IndexError, ValueError) as exc:
            raise ValidationError(f"{path}: malformed tensor line {line!r}") from exc
        if tag not in _DTYPES:
            raise ValidationError(f"{path}: unknown dtype {tag!r} in header")
        entries.append((name, tag, shape, offset))
    payload = raw[pos:]
    tensors = {}
    for name, tag, shape, offset in entries:
        dt = _DTYPES[tag]
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dt.itemsize
        if offset < 0 or offset + nbytes > len(payload):
            raise ValidationError(
                f"{path}: payload too short for tensor {name!r} "
                f"(needs {offset + nbytes} bytes, have {len(payload)})"
            )
        arr = np.frombuffer(payload, dtype=dt, count=count, offset=offset).reshape(shape)
        tensors[name] = arr.copy()
    return tensors, meta


def save_patch_weights(path, w: PatchEmbedWeights) -> None:
    write_tensors(
        path,
        {"weight": w.weight, "bias": w.bias},
        meta={"patch": w.patch, "channels": w.channels},
    )


def load_patch_weights(path) -> PatchEmbedWeights:
    tensors, meta = read_tensors(path)
    for key in ("weight", "bias"):
        if key not in tensors:
            raise ValidationError(f"{path}: weights file is missing tensor {key!r}")
    for key in ("patch", "channels"):
        if key not in meta:
            raise ValidationError(f"{path}: weights file is missing meta {key!r}")
    return PatchEmbedWeights(
        weight=np.asarray(tensors["weight"], dtype=np.float64),
        bias=np.asarray(tensors["bias"], dtype=np.float64),
        patch=int(meta["patch"]),
        channels=int(meta["channels"]),
    )


_BLOCK_FIELDS = tuple(BlockParams.__dataclass_fields__)


def save_state(path, config: EncoderConfig, state: EncoderState) -> None:
    """Persist an encoder state; the config geometry rides along as metadata."""
    tensors = {
        "patch.weight": state.patch_weights.weight,
        "patch.bias": state.patch_weights.bias,
    }
    for i, blk in enumerate(state.blocks):
        for fieldname in _BLOCK_FIELDS:
            tensors[f"block{i:02d}.{fieldname}"] = getattr(blk, fieldname)
    for i, comp in enumerate(state.compressors):
        if comp is None:
            continue
        for fieldname in comp.__dataclass_fields__:
            tensors[f"comp{i:02d}.{fieldname}"] = getattr(comp, fieldname)
    meta = {
        "depth": config.depth,
        "dim": config.dim,
        "heads": config.heads,
        "mlp_ratio": config.mlp_ratio,
        "patch": config.patch,
        "channels": config.channels,
        "pos_encoding": config.pos_encoding,
        "plan": ";".join(f"{i}:{k}" for i, k in config.plan.entries) or "-",
    }
    write_tensors(path, tensors, meta=meta)


def load_state(path):
    """Load (config, state) written by save_state."""
    tensors, meta = read_tensors(path)
    plan_txt = meta.get("plan", "-")
    entries = []
    if plan_txt != "-":
        for chunk in plan_txt.split(";"):
            idx, kind = chunk.split(":")
            entries.append((int(idx), kind))
    config = EncoderConfig(
        depth=int(meta["depth"]),
        dim=int(meta["dim"]),
        heads=int(meta["heads"]),
        mlp_ratio=float(meta["mlp_ratio"]),
        patch=int(meta["patch"]),
        plan=CompressionPlan(tuple(entries)),
        pos_encoding=meta.get("pos_encoding", "sinusoidal_2d"),
        channels=int(meta.get("channels", 3)),
    )
    patch_weights = PatchEmbedWeights(
        weight=tensors["patch.weight"], bias=tensors["patch.bias"],
        patch=config.patch, channels=config.channels,
    )
    blocks = []
    for i in range(config.depth):
        blocks.append(BlockParams(**{
            f: tensors[f"block{i:02d}.{f}"] for f in _BLOCK_FIELDS
        }))
    compressors = []
    for i, (_, kind) in enumerate(config.plan.entries):
        if kind == "avg":
            compressors.append(None)
        elif kind == "ca":
            compressors.append(CAPoolParams(
                w1=tensors[f"comp{i:02d}.w1"], b1=tensors[f"comp{i:02d}.b1"],
                w2=tensors[f"comp{i:02d}.w2"], b2=tensors[f"comp{i:02d}.b2"],
            ))
        else:
            compressors.append(PixelUnshuffleParams(
                proj=tensors[f"comp{i:02d}.proj"], bias=tensors[f"comp{i:02d}.bias"],
            ))
    state = EncoderState(patch_weights=patch_weights, blocks=tuple(blocks),
                         compressors=tuple(compressors))
    return config, state
