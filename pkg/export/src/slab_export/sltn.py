"""Standalone writer for the .sltn tensor container.

The layout, all multi-byte fields little-endian:

    header   magic "SLTN" | version u16 | entry count u32
    table    per entry: name_len u16 | name utf-8 | rows u32 | cols u32 |
             dtype u8 (0 = f32, 1 = f16) | absolute byte offset u64
    data     row-major tensor payloads, in table order, back to back

This module deliberately does not import the consumer toolkit; the bytes
are the interface, and the consumer's strict reader is the compatibility
check.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SLTN"
VERSION = 1
_HEADER = struct.Struct("<4sHI")
_DTYPES = {"f32": (0, np.dtype("<f4")), "f16": (1, np.dtype("<f2"))}


def sltn_bytes(entries, dtype="f32"):
    """Serialize named 2-D arrays, in insertion order, to container bytes.

    ``dtype`` is one tag for every entry or a name-to-tag mapping.
    """
    table = []
    blobs = []
    for name, arr in entries.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
        if arr.ndim != 2:
            raise ValueError(f"entry {name!r} must be 2-D, got shape {arr.shape}")
        tag = dtype[name] if isinstance(dtype, dict) else dtype
        if tag not in _DTYPES:
            raise ValueError(f"entry {name!r}: unknown dtype tag {tag!r}")
        code, np_dtype = _DTYPES[tag]
        blob = arr.astype(np_dtype).tobytes()
        table.append((name.encode("utf-8"), arr.shape[0], arr.shape[1], code, len(blob)))
        blobs.append(blob)

    offset = _HEADER.size + sum(2 + len(nm) + 17 for nm, *_ in table)
    parts = [_HEADER.pack(MAGIC, VERSION, len(table))]
    for (nm, rows, cols, code, size), _ in zip(table, blobs):
        parts.append(struct.pack("<H", len(nm)))
        parts.append(nm)
        parts.append(struct.pack("<IIBQ", rows, cols, code, offset))
        offset += size
    parts.extend(blobs)
    return b"".join(parts)
