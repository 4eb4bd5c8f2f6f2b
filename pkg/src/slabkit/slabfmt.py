"""Bit-exact single-layer container (.slab), storage accounting, and the
decomposed matrix-vector kernel.

File layout, all multi-byte fields little-endian:

    header   magic "SLAB" | format_version u16 | d_out u32 | d_in u32 |
             bit_width_b u8 | nnz u64 | flags u8 (bit0: binary plane present)
    body     sparse mask   d_out*d_in bits, row-major, LSB-first per byte
             sparse values nnz values at bit_width_b (IEEE binary16 or binary32)
             u values      d_out values at bit_width_b
             v values      d_in values at bit_width_b
             binary plane  d_out*d_in bits, same bit order, iff flags bit0

The sparse plane is a full bitmap plus packed values rather than coordinate
lists: the bitmap's one bit per entry mirrors the binary plane that is
already there, and the accounting keeps the two cost views separate anyway
(``cr_paper`` charges values, factors, and the binary plane; ``cr_actual``
charges every byte actually on disk past the header).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .decompose import CompressConfig, SlabDecomposition
from .tensor import SignMatrix, pack_bitplane, unpack_bitplane

MAGIC = b"SLAB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIBQB")
HEADER_BYTES = _HEADER.size


class SlabFormatError(ValueError):
    """Base class for malformed .slab streams."""


class BadMagicError(SlabFormatError):
    pass


class VersionMismatchError(SlabFormatError):
    pass


class TruncatedStreamError(SlabFormatError):
    pass


class NnzMismatchError(SlabFormatError):
    pass


class ValueOverflowError(SlabFormatError):
    """A value does not fit the target bit width (would round to infinity)."""


_DTYPES = {16: np.dtype("<f2"), 32: np.dtype("<f4")}


def _storage_dtype(bit_width_b):
    try:
        return _DTYPES[int(bit_width_b)]
    except KeyError:
        raise SlabFormatError(
            f"unsupported bit width {bit_width_b}; this format stores 16 or 32"
        ) from None


def _narrow(arr, dtype, what):
    with np.errstate(over="ignore"):
        out = np.ascontiguousarray(arr, dtype=np.float64).astype(dtype)
    if not np.all(np.isfinite(out)):
        raise ValueOverflowError(f"{what} overflows {dtype.itemsize * 8}-bit storage")
    return out


def section_sizes(d_out, d_in, bit_width_b, nnz, has_plane):
    """Byte size of each body section, in file order."""
    mask_bytes = (d_out * d_in + 7) // 8
    value_bytes = bit_width_b // 8
    sections = [
        ("sparse mask", mask_bytes),
        ("sparse values", nnz * value_bytes),
        ("u values", d_out * value_bytes),
        ("v values", d_in * value_bytes),
    ]
    if has_plane:
        sections.append(("binary plane", mask_bytes))
    return sections


def packed_length_bits(d):
    """Total serialized size in bits, header included, without serializing.

    Also valid for sweep decompositions with factor blocks wider than one
    column, which the version-1 pack() itself refuses.
    """
    rank = d.rank
    b = d.meta.bit_width_b
    bits = HEADER_BYTES * 8
    bits += ((d.d_out * d.d_in + 7) // 8) * 8  # sparse mask
    bits += d.nnz * b
    bits += rank * (d.d_out + d.d_in) * b
    if d.b_plane is not None:
        bits += ((d.d_out * d.d_in + 7) // 8) * 8
    return bits


def pack(d):
    """Serialize a decomposition to .slab bytes, deterministically.

    Values are narrowed to the configured bit width with round-to-nearest-
    even; anything that would round to infinity raises rather than saturate.
    """
    if d.u.ndim != 1 or d.v.ndim != 1:
        raise SlabFormatError("version 1 packs rank-1 factor vectors only")
    dtype = _storage_dtype(d.meta.bit_width_b)
    nnz = int(d.mask.sum())
    if nnz != d.values.shape[0]:
        raise NnzMismatchError(
            f"mask has {nnz} set bits but {d.values.shape[0]} values are attached"
        )
    flags = 1 if d.b_plane is not None else 0
    out = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, d.d_out, d.d_in, d.meta.bit_width_b, nnz, flags),
        pack_bitplane(d.mask),
        _narrow(d.values, dtype, "sparse values").tobytes(),
        _narrow(d.u, dtype, "u values").tobytes(),
        _narrow(d.v, dtype, "v values").tobytes(),
    ]
    if d.b_plane is not None:
        out.append(d.b_plane.packed)
    return b"".join(out)


def unpack(data):
    """Parse .slab bytes back into a decomposition, values widened to float64.

    The attached config snapshot carries only what the file records (bit
    width and plane presence); budget fields are not recoverable from a
    packed layer.
    """
    if len(data) < HEADER_BYTES:
        raise TruncatedStreamError(
            f"stream ends inside the header ({len(data)} of {HEADER_BYTES} bytes)"
        )
    magic, version, d_out, d_in, bit_width_b, nnz, flags = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version}, this reader handles {FORMAT_VERSION}")
    dtype = _storage_dtype(bit_width_b)
    if d_out < 1 or d_in < 1:
        raise SlabFormatError(f"bad dimensions {d_out}x{d_in}")

    sections = section_sizes(d_out, d_in, bit_width_b, nnz, bool(flags & 1))
    offset = HEADER_BYTES
    raw = {}
    for name, size in sections:
        if len(data) < offset + size:
            raise TruncatedStreamError(
                f"stream ends inside {name} (need {offset + size} bytes, have {len(data)})"
            )
        raw[name] = data[offset : offset + size]
        offset += size
    if len(data) != offset:
        raise SlabFormatError(f"{len(data) - offset} trailing bytes after the binary plane section")

    mask = unpack_bitplane(raw["sparse mask"], d_out, d_in)
    if int(mask.sum()) != nnz:
        raise NnzMismatchError(
            f"header declares nnz={nnz} but the mask has {int(mask.sum())} set bits"
        )
    values = np.frombuffer(raw["sparse values"], dtype=dtype).astype(np.float64)
    u = np.frombuffer(raw["u values"], dtype=dtype).astype(np.float64)
    v = np.frombuffer(raw["v values"], dtype=dtype).astype(np.float64)
    b_plane = SignMatrix(d_out, d_in, raw["binary plane"]) if flags & 1 else None
    meta = CompressConfig(bit_width_b=bit_width_b, binary_plane_enabled=b_plane is not None)
    return SlabDecomposition(
        d_out=d_out,
        d_in=d_in,
        mask=mask,
        values=values,
        u=u,
        v=v,
        b_plane=b_plane,
        meta=meta,
    )


@dataclass(frozen=True)
class CrReport:
    cr_paper: float
    cr_actual: float
    k_target: int
    k_achieved: int
    header_bits: int = HEADER_BYTES * 8


def cr_value(d_out, d_in, bit_width_b, nnz, rank=1, has_plane=True):
    """Compression ratio under the value-and-factor accounting.

    Charges nnz values and rank * (d_out + d_in) factor components at the
    bit width, plus one bit per entry for the binary plane when present.
    Index storage for the sparse plane is deliberately not charged here;
    cr_actual covers the real file.
    """
    dense_bits = bit_width_b * d_out * d_in
    payload = bit_width_b * nnz + rank * bit_width_b * (d_out + d_in)
    if has_plane:
        payload += d_out * d_in
    return 1.0 - payload / dense_bits


def cr_report(d, packed_len_bits, k_target=None):
    """Both cost views for a decomposition and its serialized length.

    ``cr_actual`` charges every stored bit past the header (mask bitmap
    included), so it never exceeds ``cr_paper``. ``k_target`` defaults to
    the budget's rounded target when the attached config can reproduce it,
    else to the achieved count.
    """
    if k_target is None:
        try:
            from .decompose import sparsity_budget

            budget = sparsity_budget(d.meta, d.d_out, d.d_in)
            k_target = int(round(budget.density * d.d_out * d.d_in))
        except ValueError:
            k_target = d.nnz
    dense_bits = d.meta.bit_width_b * d.d_out * d.d_in
    body_bits = packed_len_bits - HEADER_BYTES * 8
    return CrReport(
        cr_paper=cr_value(
            d.d_out, d.d_in, d.meta.bit_width_b, d.nnz,
            rank=d.rank, has_plane=d.b_plane is not None,
        ),
        cr_actual=1.0 - body_bits / dense_bits,
        k_target=int(k_target),
        k_achieved=d.nnz,
    )


def slab_matvec(d, x):
    """y = W_S x + u * (B (v * x)) without densifying the layer.

    The sparse stage multiplies only the retained values. The binary stage
    never multiplies at all: the elementwise product z = v * x is formed
    once, and each output row adds the z entries under a +1 bit and
    subtracts those under a -1 bit.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (d.d_in,):
        raise ValueError(f"x has shape {x.shape}, layer wants ({d.d_in},)")

    rows, cols = np.nonzero(d.mask)
    y = np.bincount(rows, weights=d.values * x[cols], minlength=d.d_out)

    u2 = d.u[:, None] if d.u.ndim == 1 else d.u
    v2 = d.v[:, None] if d.v.ndim == 1 else d.v
    if d.b_plane is None:
        y = y + u2 @ (v2.T @ x)
    else:
        bits = d.b_plane.bools()
        for uc, vc in zip(u2.T, v2.T):
            z = vc * x
            signed = np.where(bits, z[None, :], -z[None, :])
            y = y + uc * signed.sum(axis=1)
    return y
