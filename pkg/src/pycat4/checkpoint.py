"""Binary checkpoint container: a named map of nd-arrays.

Layout (all integers little-endian):
  8 bytes magic "PYCATCK1"
  u32 format version (currently 1)
  u32 entry count
  per entry: u16 name length, UTF-8 name, u8 dtype code, u8 rank,
             u32 per-axis sizes, then raw array bytes.

Dtype codes: 0 = float64, 1 = int64, 2 = uint8.  Malformed files fail with
the byte offset where reading stopped making sense.
"""

import struct

import numpy as np

from .tensor import ContractError

MAGIC = b"PYCATCK1"
VERSION = 1
CONFIG_KEY = "__config__"

_DTYPES = {0: "<f8", 1: "<i8", 2: "u1"}
_CODES = {np.dtype(np.float64): 0, np.dtype(np.int64): 1,
          np.dtype(np.uint8): 2}


def save_checkpoint(path, named):
    """Write a {name: array} map; float entries must be finite."""
    items = sorted(named.items())
    blob = [MAGIC, struct.pack("<II", VERSION, len(items))]
    for name, arr in items:
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            arr = arr.astype(np.float64)
        if arr.dtype == np.float64 and not np.isfinite(arr).all():
            raise ContractError(f"refusing to save non-finite values in '{name}'")
        enc = name.encode("utf-8")
        if len(enc) > 0xFFFF:
            raise ContractError(f"parameter name too long: {name[:40]}...")
        blob.append(struct.pack("<H", len(enc)))
        blob.append(enc)
        blob.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        blob.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        blob.append(np.ascontiguousarray(arr).astype(
            _DTYPES[_CODES[arr.dtype]]).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(blob))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.off = 0

    def take(self, n, what):
        if self.off + n > len(self.buf):
            raise ContractError(
                f"truncated checkpoint: wanted {n} bytes for {what} at "
                f"offset {self.off}, file ends at {len(self.buf)}")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out


def load_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    magic = r.take(8, "magic")
    if magic != MAGIC:
        raise ContractError(f"bad magic {magic!r} at offset 0, "
                            f"expected {MAGIC!r}")
    version, count = struct.unpack("<II", r.take(8, "header"))
    if version != VERSION:
        raise ContractError(f"unsupported format version {version} at offset 8")
    out = {}
    for i in range(count):
        nlen, = struct.unpack("<H", r.take(2, f"entry {i} name length"))
        name = r.take(nlen, f"entry {i} name").decode("utf-8")
        code, rank = struct.unpack("<BB", r.take(2, f"'{name}' dtype/rank"))
        if code not in _DTYPES:
            raise ContractError(
                f"unknown dtype code {code} for '{name}' at offset {r.off - 2}")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, f"'{name}' shape"))
        dt = np.dtype(_DTYPES[code])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        data = r.take(nbytes, f"'{name}' data")
        out[name] = np.frombuffer(data, dtype=dt).reshape(shape).copy()
    if r.off != len(buf):
        raise ContractError(
            f"{len(buf) - r.off} trailing bytes at offset {r.off}")
    return out


def save_model(path, model, config_text=None):
    """Checkpoint a module's parameters, optionally embedding its config."""
    named = {n: p.data for n, p in model.named_parameters()}
    if config_text is not None:
        named[CONFIG_KEY] = np.frombuffer(config_text.encode("utf-8"),
                                          dtype=np.uint8).copy()
    save_checkpoint(path, named)


def stored_config_text(loaded):
    arr = loaded.get(CONFIG_KEY)
    return None if arr is None else arr.tobytes().decode("utf-8")


def load_into(model, loaded):
    """Strict restore: the name sets must match exactly."""
    params = dict(model.named_parameters())
    stored = {k: v for k, v in loaded.items() if not k.startswith("__")}
    missing = sorted(set(params) - set(stored))
    if missing:
        raise ContractError("checkpoint is missing parameters: "
                            + ", ".join(missing))
    unexpected = sorted(set(stored) - set(params))
    if unexpected:
        raise ContractError("checkpoint has unexpected parameters: "
                            + ", ".join(unexpected))
    for name, p in params.items():
        arr = stored[name]
        if arr.shape != p.data.shape:
            raise ContractError(
                f"shape mismatch for '{name}': checkpoint {arr.shape} "
                f"vs model {p.data.shape}")
        p.data = arr.astype(np.float64)
    return model


__all__ = ["MAGIC", "VERSION", "CONFIG_KEY", "save_checkpoint",
           "load_checkpoint", "save_model", "stored_config_text", "load_into"]
