"""Why pruning should look at the data, not just the weights.

Weight magnitude alone is a poor guide when input columns carry very
different scales. Here the calibration batch has a few loud columns and
many quiet ones. Scoring each weight by its magnitude times the typical
size of its input picks a different set of survivors, and the difference
shows up directly in the error measured on the batch itself.
"""

import numpy as np

from slabkit import (
    CompressConfig,
    reconstruct,
    slab_decompose,
    stats_from_batches,
)

rng = np.random.default_rng(7)
d_out, d_in = 32, 24
w = rng.standard_normal((d_out, d_in))

print("== a lopsided calibration batch ==")
col_scale = np.logspace(-2, 1, d_in)
rng.shuffle(col_scale)
batches = [rng.standard_normal((64, d_in)) * col_scale for _ in range(4)]
s_x = stats_from_batches(batches, d_in)
print(f"calibration column norms span {s_x.min():.4f} to {s_x.max():.4f}")

print("\n== two decompositions of the same layer ==")
cfg = CompressConfig(cr=0.5)
flat = slab_decompose(w, np.ones(d_in), cfg)
aware = slab_decompose(w, s_x, cfg)
changed = int(np.sum(flat.mask != aware.mask))
print(f"kept sets differ at {changed} positions"
      f" ({flat.nnz} entries kept in each)")

print("\n== error on the actual batch ==")
x = np.vstack(batches)
for label, d in (("magnitude only", flat), ("input-aware", aware)):
    gap = x @ (w - reconstruct(d)).T
    print(f"{label:15s} batch output error {np.linalg.norm(gap):10.4f}")
print("the input-aware choice protects the weights that feed loud columns")
