"""How many factor columns are worth paying for.

Each factor column is bought out of the same bit budget, so adding rank
means dropping sparse entries. On a layer with a planted dominant
direction the first column pays for itself and later ones mostly do not.
The sweep makes that trade visible, and a matched-budget baseline without
the sign plane shows what the plane itself contributes.
"""

import numpy as np

from slabkit import CompressConfig, baseline_sparse_lowrank, rank_sweep

rng = np.random.default_rng(19)
d_out, d_in = 48, 64

noise = rng.standard_normal((d_out, d_in))
planted = np.zeros((d_out, d_in))
for amp in (8.0, 2.0, 0.5):
    planted += amp * np.outer(rng.standard_normal(d_out), rng.standard_normal(d_in))
w = noise + planted / np.sqrt(d_out)
s_x = np.ones(d_in)

print("== sweeping the factor rank at a fixed total budget ==")
cfg = CompressConfig(cr=0.5)
rows = rank_sweep(w, s_x, cfg, [0, 1, 2, 3, 4])
previous = None
for rank, err in rows:
    note = ""
    if previous is not None:
        gain = previous - err
        note = f"  (gain {gain:+.4f})"
    print(f"rank {rank}: weighted error {err:.4f}{note}")
    previous = err

print("\n== the plane's share of the win ==")
with_plane = rows[1][1]
bare = baseline_sparse_lowrank(w, s_x, cfg, rank=1)
print(f"rank 1 with sign plane:    {with_plane:.4f}")
print(f"rank 1 without the plane:  {bare.weighted_error:.4f}")
print("the plane buys per-entry sign freedom for one bit apiece")
