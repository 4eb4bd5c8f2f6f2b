"""Decompose one weight matrix into its three stored parts.

A layer is rewritten as a sparse matrix plus a rank-1 outer product
modulated by a sign plane. This script walks through the decomposition of
a single Gaussian layer, shows where the bit budget goes, and checks the
result against plain pruning at the same budget and against an exhaustive
search on a matrix small enough to enumerate.
"""

import numpy as np

from slabkit import (
    CompressConfig,
    baseline_sparse_lowrank,
    reconstruct,
    score,
    select_mask,
    slab_decompose,
    sparsity_budget,
    weighted_error,
)
from slabkit import oracle

rng = np.random.default_rng(42)
d_out, d_in = 48, 64
w = rng.standard_normal((d_out, d_in))
s_x = np.ones(d_in)

print("== the budget ==")
cfg = CompressConfig(cr=0.5)
budget = sparsity_budget(cfg, d_out, d_in)
print(f"target compression ratio {cfg.cr} at {cfg.bit_width_b}-bit storage")
print(f"sparse density {budget.density:.4f}, {budget.k_total} kept entries"
      f" out of {d_out * d_in}")

print("\n== the decomposition ==")
d = slab_decompose(w, s_x, cfg)
plane = d.b_plane.dense()
print(f"sparse part:  {d.nnz} stored values")
print(f"factor pair:  u has {d.u.shape[0]} entries, v has {d.v.shape[0]}")
print(f"sign plane:   {plane.size} signs, {np.sum(plane < 0)} of them negative")

w_hat = reconstruct(d)
err = weighted_error(w, w_hat, s_x)
print(f"residual error {err:.4f} (matrix norm {np.linalg.norm(w):.4f})")

print("\n== against plain pruning at the same budget ==")
pruned = baseline_sparse_lowrank(w, s_x, cfg, rank=0)
print(f"pruning only:        {pruned.weighted_error:.4f}")
print(f"with factor + plane: {err:.4f}")

print("\n== against exhaustive search on a tiny case ==")
tiny = rng.standard_normal((4, 4))
tiny_sx = np.ones(4)
found = oracle.exhaustive_tiny_slab(tiny, tiny_sx, 0.5)
tiny_cfg = CompressConfig(cr=0.5, density_override=0.5, group_shape=(4, 4), iters_s=1)
tiny_budget = sparsity_budget(tiny_cfg, 4, 4)
mask = select_mask(score(found.residual, tiny_sx), tiny_budget, tiny_cfg)
ours = oracle.masked_weighted_error(found.residual, tiny_sx, mask)
best = oracle.masked_weighted_error(found.residual, tiny_sx, found.mask)
print(f"exhaustive optimum {best:.6f}, score-based choice {ours:.6f}")
print(f"excess over the optimum: {ours - best:.2e}")
