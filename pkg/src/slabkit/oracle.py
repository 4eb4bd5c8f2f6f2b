"""Brute-force reference implementations used by the test surface.

Nothing here is fast and nothing here is meant for production use. Each
routine answers a question the optimized modules cannot be trusted to answer
about themselves:

* ``best_two_level_split`` / ``best_two_level_exhaustive``: is the optimal
  two-level clustering of a vector always a contiguous prefix/suffix split
  with levels at the cluster means? The split search assumes it; the 2^n
  enumeration checks it.
* ``symmetric_levels_check``: for samples from a symmetric density, do the
  two fitted levels straddle the center (a + b close to 0)?
* ``exhaustive_tiny_slab``: over all sparse masks of a given size, does
  score-based top-k selection really attain the minimum weighted error?
* ``reference_svd``: an independent full SVD (library-backed) to check the
  hand-rolled power iteration against.
* ``dense_matvec`` / ``naive_reconstruct``: loop-form kernels to check the
  vectorized ones against.

These share nothing with the production modules beyond plain arrays.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass
class TwoLevelSolution:
    a: float
    b: float
    t: int  # index of the last element assigned to level a (sorted order)
    objective: float
    midpoint_ok: bool = True


def two_level_objective(values, a, b):
    """f(a, b) = sum_k min((w_k - a)^2, (w_k - b)^2), independent of any search."""
    v = np.asarray(values, dtype=np.float64)
    return float(np.minimum((v - a) ** 2, (v - b) ** 2).sum())


def best_two_level_split(values):
    """Best contiguous two-level split of a sorted vector.

    Tries every split point t, with level a the mean of values[:t+1] and
    level b the mean of values[t+1:], and returns the minimizer of the
    assignment objective. The reported objective is re-evaluated in the
    min-over-levels form, independent of the search path, and the solution
    records whether the midpoint condition w_t <= (a+b)/2 <= w_{t+1} holds
    (it must, at a true optimum).

    For short vectors the min-form objective is evaluated exhaustively for
    every t; past 512 elements the search switches to an O(n) prefix-sum
    form of the assignment objective, which coincides with the min form
    whenever the midpoint condition holds at the optimum.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 2:
        raise ValueError("need a 1-D vector with at least 2 elements")
    if np.any(np.diff(v) < 0):
        raise ValueError("values must be sorted ascending")
    n = v.shape[0]

    counts = np.arange(1, n, dtype=np.float64)
    prefix = np.cumsum(v)[:-1]
    total = float(v.sum())
    a_all = prefix / counts
    b_all = (total - prefix) / (n - counts)

    if n <= 512:
        diff_a = (v[None, :] - a_all[:, None]) ** 2
        diff_b = (v[None, :] - b_all[:, None]) ** 2
        objectives = np.minimum(diff_a, diff_b).sum(axis=1)
    else:
        sumsq = float(np.square(v).sum())
        objectives = sumsq - counts * a_all**2 - (n - counts) * b_all**2

    t = int(np.argmin(objectives))
    a, b = float(a_all[t]), float(b_all[t])
    mid = 0.5 * (a + b)
    return TwoLevelSolution(
        a=a,
        b=b,
        t=t,
        objective=two_level_objective(v, a, b),
        midpoint_ok=bool(v[t] <= mid <= v[t + 1]),
    )


def best_two_level_exhaustive(values, max_n=12):
    """Globally optimal two-level clustering by enumerating all 2^n assignments.

    Levels are the means of the two (non-empty) clusters. The reported
    objective is the min-over-levels form evaluated at the optimal levels; at
    a global optimum every point sits with its nearer level, so the two forms
    agree there. ``t`` is reported as (size of the lower cluster) - 1, which
    is the split index whenever the optimum is contiguous in sorted order.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("need a 1-D vector")
    n = v.shape[0]
    if n < 2 or n > max_n:
        raise ValueError(f"n must be in [2, {max_n}], got {n}")

    codes = np.arange(1, 2**n - 1, dtype=np.uint32)
    bits = ((codes[:, None] >> np.arange(n)) & 1).astype(bool)
    sizes = bits.sum(axis=1).astype(np.float64)
    sums = bits @ v
    total = float(v.sum())
    mean_in = sums / sizes
    mean_out = (total - sums) / (n - sizes)

    # Assignment objective for every bipartition, via per-cluster variance sums.
    sq = v**2
    sq_in = bits @ sq
    sq_total = float(sq.sum())
    obj = (sq_in - sizes * mean_in**2) + ((sq_total - sq_in) - (n - sizes) * mean_out**2)

    best = int(np.argmin(obj))
    a = float(min(mean_in[best], mean_out[best]))
    b = float(max(mean_in[best], mean_out[best]))
    lower_size = int(sizes[best] if mean_in[best] <= mean_out[best] else n - sizes[best])
    return TwoLevelSolution(
        a=a,
        b=b,
        t=lower_size - 1,
        objective=two_level_objective(v, a, b),
        midpoint_ok=True,
    )


def symmetric_levels_check(sample_size, trials, distribution="normal", shift=0.0, seed=0x51AB):
    """Mean of |a + b - 2*shift| / (b - a) over repeated two-level fits.

    Small values indicate the fitted levels straddle the distribution center
    symmetrically, which is what a symmetric density should give. Shifting
    every sample by a constant is compensated for, so the statistic measures
    shape, not location. An asymmetric ``distribution="exponential"`` serves
    as the negative control.
    """
    sample_size = int(sample_size)
    if sample_size < 100:
        raise ValueError("sample_size must be at least 100")
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(int(trials)):
        if distribution == "normal":
            x = rng.standard_normal(sample_size)
        elif distribution == "exponential":
            x = rng.standard_exponential(sample_size)
        else:
            raise ValueError(f"unknown distribution {distribution!r}")
        sol = best_two_level_split(np.sort(x + shift))
        vals.append(abs(sol.a + sol.b - 2.0 * shift) / (sol.b - sol.a))
    return float(np.mean(vals))


@dataclass
class TinySlabSearch:
    mask: np.ndarray       # (rows, cols) bool, the best mask found
    error: float           # minimum weighted error over all masks of size k
    k: int
    b_dense: np.ndarray    # the fixed +/-1 plane used for the search
    u: np.ndarray          # fixed low-rank factors (non-negative form)
    v: np.ndarray
    residual: np.ndarray   # W - (u v^T) * b_dense, the matrix masks select from


def masked_weighted_error(residual, s_x, mask):
    """Weighted error of keeping ``mask`` from ``residual``: the dropped mass."""
    residual = np.asarray(residual, dtype=np.float64)
    s_x = np.asarray(s_x, dtype=np.float64)
    dropped = np.where(mask, 0.0, residual) * s_x[None, :]
    return float(np.linalg.norm(dropped))


@lru_cache(maxsize=None)
def _combo_bits(n, k):
    rows = [
        [1 if i in combo else 0 for i in range(n)]
        for combo in itertools.combinations(range(n), k)
    ]
    return np.array(rows, dtype=bool)


def exhaustive_tiny_slab(w, s_x, density):
    """Minimum weighted error over every sparse mask of the budgeted size.

    The binary plane and rank-1 factors are fixed first, from the sign of W
    and a library SVD of |W| (sign-normalized so the factors are
    non-negative), and the search then enumerates all C(size, k) masks over
    the residual W - (u v^T) * B. Capped at 20 entries; this is a reference,
    not an algorithm.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError("w must be 2-D")
    rows, cols = w.shape
    size = rows * cols
    if size > 20:
        raise ValueError(f"exhaustive search capped at 20 entries, got {size}")
    s_x = np.asarray(s_x, dtype=np.float64)
    if s_x.shape != (cols,):
        raise ValueError("s_x length must match w columns")
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must lie in [0, 1]")

    b_dense = np.where(w >= 0, 1.0, -1.0)
    absw = np.abs(w)
    if absw.any():
        sigmas, uu, vv = reference_svd(absw)
        u0, v0 = uu[:, 0], vv[:, 0]
        if u0.sum() < 0:  # library sign ambiguity; the top pair of |W| is one-signed
            u0, v0 = -u0, -v0
        root = np.sqrt(sigmas[0])
        u, v = root * u0, root * v0
    else:
        u, v = np.zeros(rows), np.zeros(cols)

    residual = w - np.outer(u, v) * b_dense
    k = int(round(density * size))

    weighted_sq = (residual * s_x[None, :]).reshape(-1) ** 2
    combos = _combo_bits(size, k)
    kept = combos @ weighted_sq
    best = int(np.argmax(kept))  # max kept mass = min dropped mass
    mask = combos[best].reshape(rows, cols)
    return TinySlabSearch(
        mask=mask,
        error=masked_weighted_error(residual, s_x, mask),
        k=k,
        b_dense=b_dense,
        u=u,
        v=v,
        residual=residual,
    )


def reference_svd(m):
    """Full SVD via the linear-algebra library, as (sigmas, U, V).

    Columns of U and V are the left/right singular vectors, sigmas descending.
    Deliberately independent of the production power iteration.
    """
    m = np.asarray(m, dtype=np.float64)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    return s, u, vt.T


def dense_matvec(w, x):
    """Naive loop-form matrix-vector product, the kernel reference."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    rows, cols = w.shape
    if x.shape != (cols,):
        raise ValueError("length mismatch")
    y = np.zeros(rows)
    for i in range(rows):
        acc = 0.0
        for j in range(cols):
            acc += w[i, j] * x[j]
        y[i] = acc
    return y


def naive_reconstruct(w_s, u, v, b_dense=None):
    """Entry-by-entry evaluation of W_S + (u v^T) * B, loop form."""
    w_s = np.asarray(w_s, dtype=np.float64)
    rows, cols = w_s.shape
    out = np.zeros((rows, cols))
    for i in range(rows):
        for j in range(cols):
            plane = u[i] * v[j]
            if b_dense is not None:
                plane *= b_dense[i, j]
            out[i, j] = w_s[i, j] + plane
    return out
