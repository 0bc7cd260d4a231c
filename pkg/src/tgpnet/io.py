"""On-disk formats.

TensorFile (``.t4f``)::

    offset  size     content
    0       4        b"T4F1"
    4       16       n, c, h, w as uint32 little-endian
    20      4*n*c*h*w  float32 little-endian, row-major

Checkpoint (``.ckpt``)::

    offset  size     content
    0       4        b"TGPC"
    4       4        header length L, uint32 little-endian
    8       L        UTF-8 JSON header: format_version, model (config dict),
                     manifest [{name, dtype, dims, offset}], offsets relative
                     to the body start, strictly increasing and gap-free
    8+L     B        body: concatenated float32 little-endian buffers
    8+L+B   8        blake2b-64 digest of the body

EMA shadows appear in the manifest as ``ema/<name>``. All writes go to a
temporary file in the destination directory and are renamed into place.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .model import ModelConfig

TENSOR_MAGIC = b"T4F1"
CKPT_MAGIC = b"TGPC"
CKPT_VERSION = 1
RECORD_SCHEMA = 1
_LE_F32 = np.dtype("<f4")
_UMASK = os.umask(0)
os.umask(_UMASK)


class FormatError(ValueError):
    pass


class ConfigMismatch(ValueError):
    pass


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- tensors

def encode_tensor(x) -> bytes:
    a = np.asarray(getattr(x, "data", x))
    if a.ndim != 4:
        raise FormatError(f"tensor files hold rank-4 arrays, got shape {a.shape}")
    return TENSOR_MAGIC + struct.pack("<4I", *a.shape) + np.ascontiguousarray(a, _LE_F32).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 20 or buf[:4] != TENSOR_MAGIC:
        raise FormatError("not a T4F1 tensor file")
    dims = struct.unpack("<4I", buf[4:20])
    expect = 20 + 4 * int(np.prod(dims))
    if len(buf) != expect:
        raise FormatError(f"tensor file length {len(buf)} != {expect} for dims {dims}")
    return np.frombuffer(buf, _LE_F32, offset=20).reshape(dims).astype(np.float32)


def save_tensor(path, x) -> None:
    atomic_write(path, encode_tensor(x))


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict[str, np.ndarray]
    ema: dict[str, np.ndarray] | None
    header: dict


def _digest(body: bytes) -> bytes:
    return hashlib.blake2b(body, digest_size=8).digest()


def encode_checkpoint(cfg: ModelConfig, state: dict, ema: dict | None = None) -> bytes:
    entries = list(state.items()) + ([(f"ema/{k}", v) for k, v in ema.items()] if ema else [])
    manifest, chunks, offset = [], [], 0
    for name, arr in entries:
        buf = np.ascontiguousarray(np.asarray(arr), _LE_F32).tobytes()
        manifest.append({"name": name, "dtype": "float32", "dims": list(np.shape(arr)),
                         "offset": offset})
        chunks.append(buf)
        offset += len(buf)
    body = b"".join(chunks)
    header = json.dumps({"format_version": CKPT_VERSION, "model": cfg.to_dict(),
                         "manifest": manifest}, sort_keys=True).encode()
    return CKPT_MAGIC + struct.pack("<I", len(header)) + header + body + _digest(body)


def save_checkpoint(path, cfg: ModelConfig, state: dict, ema: dict | None = None) -> None:
    atomic_write(path, encode_checkpoint(cfg, state, ema))


def first_mismatch(expected: ModelConfig, found: ModelConfig) -> str | None:
    a, b = expected.to_dict(), found.to_dict()
    for k in a:
        if a[k] != b.get(k):
            return k
    return None


def decode_checkpoint(buf: bytes, expected: ModelConfig | None = None) -> Checkpoint:
    if len(buf) < 16 or buf[:4] != CKPT_MAGIC:
        raise FormatError("not a TGPC checkpoint")
    (hlen,) = struct.unpack("<I", buf[4:8])
    header = json.loads(buf[8:8 + hlen].decode())
    if header.get("format_version") != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {header.get('format_version')}")
    body, digest = buf[8 + hlen:-8], buf[-8:]
    if _digest(body) != digest:
        raise FormatError("checkpoint checksum mismatch; file is corrupted")
    cfg = ModelConfig.from_dict(header["model"])
    if expected is not None:
        field_name = first_mismatch(expected, cfg)
        if field_name is not None:
            raise ConfigMismatch(f"checkpoint config field {field_name!r} is "
                                 f"{getattr(cfg, field_name)!r}, expected "
                                 f"{getattr(expected, field_name)!r}")
    state, ema = {}, {}
    for e in header["manifest"]:
        n = int(np.prod(e["dims"])) if e["dims"] else 1
        arr = np.frombuffer(body, _LE_F32, count=n, offset=e["offset"]).reshape(e["dims"])
        arr = arr.astype(np.float32)
        if e["name"].startswith("ema/"):
            ema[e["name"][4:]] = arr
        else:
            state[e["name"]] = arr
    return Checkpoint(cfg, state, ema or None, header)


def load_checkpoint(path, expected: ModelConfig | None = None) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), expected)


def load_model(path, use_ema: bool = False, expected: ModelConfig | None = None):
    """Build a model from a checkpoint, with live or EMA weights."""
    from .model import build_model

    ck = load_checkpoint(path, expected)
    model = build_model(ck.config)
    if use_ema:
        if ck.ema is None:
            raise FormatError(f"{path} carries no EMA shadows")
        model.load_state_dict(ck.ema)
    else:
        model.load_state_dict(ck.state)
    return model


# ---------------------------------------------------------------- records

def write_records(path, records: Iterable[dict], kind: str) -> None:
    """Line-delimited JSON; the first line is a schema header."""
    lines = [json.dumps({"schema": kind, "version": RECORD_SCHEMA})]
    lines += [json.dumps(r, sort_keys=True) for r in records]
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_records(path) -> tuple[dict, list[dict]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path} is empty")
    return json.loads(lines[0]), [json.loads(ln) for ln in lines[1:]]


# ---------------------------------------------------------------- PNG

def save_png(path, x) -> None:
    """Write one image (1, c, h, w) or (c, h, w), c in {1, 3}, as 8-bit PNG."""
    from PIL import Image

    a = np.asarray(getattr(x, "data", x))
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise FormatError("PNG export takes a single image")
        a = a[0]
    if a.shape[0] not in (1, 3):
        raise FormatError(f"PNG export needs 1 or 3 channels, got {a.shape[0]}")
    u8 = np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    img = Image.fromarray(u8[0] if a.shape[0] == 1 else np.moveaxis(u8, 0, -1))
    buf = _png_bytes(img)
    atomic_write(path, buf)


def _png_bytes(img) -> bytes:
    import io as _io

    out = _io.BytesIO()
    img.save(out, format="PNG")
    return out.getvalue()


def load_png(path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB PNG into (1, c, h, w) float32 in [0, 1]."""
    from PIL import Image

    img = Image.open(path)
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB")
    a = np.asarray(img, dtype=np.float32) / 255.0
    a = a[None] if a.ndim == 2 else np.moveaxis(a, -1, 0)
    return a[None]
