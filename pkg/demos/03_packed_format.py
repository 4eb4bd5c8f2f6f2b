"""Anatomy of a packed layer file.

Every decomposed layer serializes to a single self-describing blob: a
24-byte header, a presence bitmap for the sparse entries, the surviving
values, the factor pair, and one bit per sign in the plane. The byte
count is fully determined by the shape and the kept-entry count, so the
compression ratio can be read off the file and checked against the
accounting that planned it.
"""

import numpy as np

from slabkit import CompressConfig, slab_decompose
from slabkit.slabfmt import (
    HEADER_BYTES,
    NnzMismatchError,
    cr_report,
    pack,
    packed_length_bits,
    section_sizes,
    unpack,
)

rng = np.random.default_rng(3)
d_out, d_in = 32, 40
w = rng.standard_normal((d_out, d_in))
cfg = CompressConfig(cr=0.5)
d = slab_decompose(w, np.ones(d_in), cfg)
blob = pack(d)

print("== where the bytes go ==")
print(f"{'header':14s} {HEADER_BYTES:6d} bytes")
total = HEADER_BYTES
for name, size in section_sizes(d_out, d_in, cfg.bit_width_b, d.nnz, True):
    print(f"{name:14s} {size:6d} bytes")
    total += size
print(f"{'file':14s} {len(blob):6d} bytes (sections sum to {total})")
assert len(blob) * 8 == packed_length_bits(d)

print("\n== the ratio, planned and achieved ==")
report = cr_report(d, len(blob) * 8)
print(f"planned ratio  {report.cr_paper:.4f}")
print(f"achieved ratio {report.cr_actual:.4f}"
      f" (flooring in the group quota leaves a little slack)")
print(f"kept entries   {report.k_achieved} of {report.k_target} targeted")

print("\n== round trip ==")
back = unpack(blob)
drift = np.max(np.abs(back.values - d.values))
print(f"signs identical: {np.array_equal(back.b_plane.dense(), d.b_plane.dense())}")
print(f"largest value drift {drift:.2e} (16-bit storage rounds the mantissa)")

print("\n== tamper detection ==")
broken = bytearray(blob)
broken[HEADER_BYTES] ^= 1
try:
    unpack(bytes(broken))
except NnzMismatchError as exc:
    print(f"one flipped bit is caught: {exc}")
