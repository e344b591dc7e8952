"""Binary checkpoint container.

One format for every trained object in the package (map ensembles,
regression models, generators).  Layout, all integers little-endian:

    bytes 0..3    magic  b"ADEV"
    u32           format version (currently 1)
    u32           header length in bytes
    header        UTF-8 JSON object (model kind, dims n/d/T, hidden sizes,
                  anything else the loader needs)
    u32           number of array blocks
    per block:
        u16       name length, then the UTF-8 name
        u8        dtype code: 0 = float64, 1 = complex128
        u8        ndim
        u64 x ndim  dims
        payload   C-order little-endian float64 values (complex stored as
                  interleaved re,im pairs, i.e. the raw complex128 buffer)

Writes are atomic: the file is written to a temporary sibling and renamed
into place, so a crashed run never leaves a partial checkpoint behind.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import ParseError

MAGIC = b"ADEV"
VERSION = 1

_DTYPES = {0: np.float64, 1: np.complex128}
_CODES = {np.dtype(np.float64): 0, np.dtype(np.complex128): 1}


def save_checkpoint(path, header, arrays):
    """Write ``header`` (JSON-able dict) and named arrays to ``path``."""
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(head)))
    chunks.append(head)
    chunks.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _CODES:
            arr = (
                arr.astype(np.complex128)
                if np.iscomplexobj(arr)
                else arr.astype(np.float64)
            )
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        little = arr if arr.dtype.byteorder in ("<", "=", "|") else arr.newbyteorder("<")
        chunks.append(little.tobytes())
    blob = b"".join(chunks)

    dirname = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(dirname, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Read a checkpoint back as (header dict, {name: array})."""
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise ParseError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    (head_len,) = struct.unpack_from("<I", view, 8)
    pos = 12
    try:
        header = json.loads(bytes(view[pos : pos + head_len]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt checkpoint header: {exc}") from exc
    pos += head_len
    (n_blocks,) = struct.unpack_from("<I", view, pos)
    pos += 4
    arrays = {}
    for _ in range(n_blocks):
        (name_len,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos : pos + name_len]).decode("utf-8")
        pos += name_len
        code, ndim = struct.unpack_from("<BB", view, pos)
        pos += 2
        if code not in _DTYPES:
            raise ParseError(f"{path}: unknown dtype code {code} for block {name!r}")
        shape = struct.unpack_from(f"<{ndim}Q", view, pos)
        pos += 8 * ndim
        dtype = np.dtype(_DTYPES[code]).newbyteorder("<")
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(view[pos : pos + nbytes], dtype=dtype).reshape(shape)
        arrays[name] = arr.astype(_DTYPES[code])
        pos += nbytes
    if pos != len(blob):
        raise ParseError(f"{path}: trailing bytes after last block")
    return header, arrays
