"""The decomposition engine.

A weight matrix W is approximated as W_S + (u v^T) * B, with W_S sparse
under a per-group cardinality budget, B a +/-1 plane stored at one bit per
entry, and (u, v) rank-1 factors. The three parts are fit by alternating
rounds: re-extract the sign plane and factors from the current dense
residual, re-score what is left against calibration column norms, then
re-select the sparse support.

Budget arithmetic charges the stored bits explicitly. At bit width b, the
sparse values cost b bits each, the binary plane one bit per entry, and the
factors b bits per component, so the retained density for a target
compression ratio ``cr`` is

    density = 1 - cr - 1/b - rank * (1/d_out + 1/d_in)

with the 1/b term dropped when the binary plane is disabled and the factor
term scaled by the rank in the sweep and baseline modes. Every mode stores
exactly b * d_out * d_in * (1 - cr) bits of payload.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .tensor import (
    DegenerateSpectrumError,
    SignMatrix,
    as_matrix,
    as_vector,
    hadamard,
    sign_matrix,
    top_singular_triplet,
)


class InfeasibleBudgetError(ValueError):
    """The requested compression ratio leaves no room for sparse values."""


@dataclass(frozen=True)
class CompressConfig:
    """Knobs for one compression run.

    group_shape of None means one comparison group per row; a 0 in either
    slot stands for the full extent of that axis, resolved per matrix.
    nm_pattern (N, M) additionally caps every aligned run of M entries
    along the input dimension at N nonzeros. density_override
    bypasses the budget formula entirely (it exists for tiny matrices, where
    the 1/d_out overhead term swallows the whole budget). lowrank_rank above
    1 is meaningful only for the sweep and no-binary baseline modes; the
    packed format stores rank 1.
    """

    cr: float = 0.5
    bit_width_b: int = 16
    iters_s: int = 20
    group_shape: tuple | None = None
    nm_pattern: tuple | None = None
    density_override: float | None = None
    binary_plane_enabled: bool = True
    lowrank_rank: int = 1

    def __post_init__(self):
        if not 0.0 <= self.cr < 1.0:
            raise ValueError(f"cr must lie in [0, 1), got {self.cr}")
        if int(self.bit_width_b) < 1:
            raise ValueError("bit_width_b must be a positive integer")
        if int(self.iters_s) < 1:
            raise ValueError("iters_s must be a positive integer")
        if self.group_shape is not None:
            g_rows, g_cols = self.group_shape
            if g_rows < 0 or g_cols < 0:
                raise ValueError(f"bad group shape {self.group_shape}")
        if self.nm_pattern is not None:
            n, m = self.nm_pattern
            if not 1 <= n < m:
                raise ValueError(f"N:M pattern needs 1 <= N < M, got {n}:{m}")
        if self.density_override is not None and not 0.0 <= self.density_override <= 1.0:
            raise ValueError("density_override must lie in [0, 1]")
        if self.lowrank_rank < 0:
            raise ValueError("lowrank_rank must be non-negative")
        if self.lowrank_rank == 0 and self.binary_plane_enabled:
            raise ValueError("a binary plane without low-rank factors does nothing; disable it for rank 0")


@dataclass(frozen=True)
class SparsityBudget:
    density: float
    keep_per_group: int
    k_total: int
    n_groups: int
    group_shape: tuple
    warning: str | None = None


@dataclass
class SlabDecomposition:
    """One compressed layer: sparse plane, rank-1 factors, sign plane.

    ``values`` holds the retained entries in row-major order of the set mask
    bits. ``u``/``v`` are 1-D for the standard rank-1 form; sweep modes may
    leave 2-D factor blocks here, which reconstruct but do not pack.
    ``b_plane`` is None when the binary plane is disabled.
    """

    d_out: int
    d_in: int
    mask: np.ndarray
    values: np.ndarray
    u: np.ndarray
    v: np.ndarray
    b_plane: SignMatrix | None
    meta: CompressConfig = field(default_factory=CompressConfig)

    @property
    def nnz(self):
        return int(self.values.shape[0])

    @property
    def rank(self):
        return 1 if self.u.ndim == 1 else int(self.u.shape[1])

    def sparse_dense(self):
        w_s = np.zeros((self.d_out, self.d_in))
        w_s[self.mask] = self.values
        return w_s


def _resolve_group(cfg, d_out, d_in):
    g_rows, g_cols = cfg.group_shape if cfg.group_shape is not None else (1, d_in)
    g_rows = g_rows or d_out
    g_cols = g_cols or d_in
    if d_out % g_rows or d_in % g_cols:
        raise ValueError(
            f"group shape ({g_rows}, {g_cols}) does not tile a {d_out}x{d_in} matrix"
        )
    return g_rows, g_cols


def sparsity_budget(cfg, d_out, d_in):
    """Turn a config into a concrete retention budget for a d_out x d_in layer.

    The target count is rounded from the density, then floored to a per-group
    quota, so the achieved total can undershoot the target by up to one entry
    per group; the packing report records both numbers.
    """
    d_out, d_in = int(d_out), int(d_in)
    if d_out < 1 or d_in < 1:
        raise ValueError("dimensions must be positive")
    g_rows, g_cols = _resolve_group(cfg, d_out, d_in)
    if cfg.nm_pattern is not None:
        n, m = cfg.nm_pattern
        if d_in % m:
            raise ValueError(f"N:M pattern {n}:{m} needs M to divide d_in={d_in}")
        if g_cols % m:
            raise ValueError(
                f"N:M pattern {n}:{m} needs M to divide the group width {g_cols}"
            )

    if cfg.density_override is not None:
        density = float(cfg.density_override)
    else:
        plane_cost = (1.0 / cfg.bit_width_b) if cfg.binary_plane_enabled else 0.0
        factor_cost = cfg.lowrank_rank * (1.0 / d_out + 1.0 / d_in)
        density = 1.0 - cfg.cr - plane_cost - factor_cost
        if density <= 0.0:
            raise InfeasibleBudgetError(
                "infeasible CR: density = 1"
                f" - {cfg.cr} (cr) - {plane_cost} (binary plane)"
                f" - {factor_cost} (factors) = {density} <= 0"
                f" for a {d_out}x{d_in} layer at b={cfg.bit_width_b}"
            )

    group_size = g_rows * g_cols
    n_groups = (d_out // g_rows) * (d_in // g_cols)
    k_target = int(round(density * d_out * d_in))
    keep = (k_target * group_size) // (d_out * d_in)

    warning = None
    if keep == 0 and density > 0.0:
        warning = (
            f"density {density} keeps fewer than one entry per {g_rows}x{g_cols} group;"
            " the sparse plane will be empty"
        )
    if cfg.nm_pattern is not None:
        n, m = cfg.nm_pattern
        survivors = group_size * n // m
        if keep > survivors:
            raise InfeasibleBudgetError(
                f"group quota {keep} exceeds the {n}:{m} survivor count {survivors}"
                f" per {g_rows}x{g_cols} group; both constraints cannot hold"
            )
    return SparsityBudget(
        density=density,
        keep_per_group=keep,
        k_total=keep * n_groups,
        n_groups=n_groups,
        group_shape=(g_rows, g_cols),
        warning=warning,
    )


def score(residual, s_x):
    """Pruning score: |residual| weighted by the activation column norms."""
    residual = as_matrix(residual, "residual")
    s_x = as_vector(s_x, residual.shape[1], "s_x")
    if np.any(s_x < 0):
        raise ValueError("s_x must be non-negative")
    return np.abs(residual) * s_x[None, :]


def select_mask(s, budget, cfg):
    """Keep-mask for a score matrix under the group (and N:M) constraints.

    With an N:M pattern, the top N scores of every aligned M-block survive a
    first pass, and the per-group quota is then filled from the survivors
    without re-scoring. All ties break toward the lower row-major flat index,
    which a stable sort provides for free because tiles are flattened in
    row-major order.
    """
    s = as_matrix(s, "score matrix")
    d_out, d_in = s.shape
    g_rows, g_cols = budget.group_shape
    if d_out % g_rows or d_in % g_cols:
        raise ValueError(
            f"group shape ({g_rows}, {g_cols}) does not tile a {d_out}x{d_in} matrix"
        )

    work = s
    if cfg.nm_pattern is not None:
        n, m = cfg.nm_pattern
        if d_in % m:
            raise ValueError(f"N:M pattern needs M={m} to divide d_in={d_in}")
        blocks = s.reshape(d_out, d_in // m, m)
        order = np.argsort(-blocks, axis=2, kind="stable")
        survivors = np.zeros(blocks.shape, dtype=bool)
        np.put_along_axis(survivors, order[:, :, :n], True, axis=2)
        work = np.where(survivors.reshape(d_out, d_in), s, -np.inf)

    keep = budget.keep_per_group
    tiles = work.reshape(d_out // g_rows, g_rows, d_in // g_cols, g_cols)
    tiles = tiles.transpose(0, 2, 1, 3).reshape(-1, g_rows * g_cols)
    order = np.argsort(-tiles, axis=1, kind="stable")
    kept = np.zeros(tiles.shape, dtype=bool)
    np.put_along_axis(kept, order[:, :keep], True, axis=1)
    mask = kept.reshape(d_out // g_rows, d_in // g_cols, g_rows, g_cols)
    return mask.transpose(0, 2, 1, 3).reshape(d_out, d_in)


def build_binary_lowrank(y_bl):
    """Joint sign plane and rank-1 factors for a dense residual.

    B is the sign of the residual, and (u, v) come from the dominant
    singular triplet of |residual|, split as sqrt(sigma) each so that
    u v^T is the rank-1 plane itself. Because |residual| is elementwise
    non-negative, its top singular pair is too, and the power iteration
    preserves that: every component of u and v comes out >= 0.

    A degenerate spectrum propagates as DegenerateSpectrumError with the
    completed (b_plane, u, v) attached as ``err.result``; any tied optimum
    is a valid set of factors, so callers may catch and accept.
    """
    y = as_matrix(y_bl, "y_bl")
    b = sign_matrix(y)
    try:
        sigma, u0, v0 = top_singular_triplet(np.abs(y))
    except DegenerateSpectrumError as err:
        sigma, u0, v0 = err.triplet
        root = np.sqrt(sigma)
        out = DegenerateSpectrumError(err.triplet, str(err))
        out.result = (b, root * u0, root * v0)
        raise out from None
    root = np.sqrt(sigma)
    return b, root * u0, root * v0


def refine_binary_lowrank(y_bl, u, v):
    """One more alternation round on a fixed residual.

    Re-picks the sign plane optimally for the current rank-1 plane (flip
    wherever the plane and the residual disagree in sign), then re-fits the
    rank-1 factors to the re-signed residual. Starting from the output of
    :func:`build_binary_lowrank` this is a fixed point: the sign plane is
    already optimal wherever the residual is nonzero, and the factors
    reproduce themselves.
    """
    y = as_matrix(y_bl, "y_bl")
    u = as_vector(u, y.shape[0], "u")
    v = as_vector(v, y.shape[1], "v")
    b = sign_matrix(y * np.outer(u, v))
    target = hadamard(y, b)
    try:
        sigma, u0, v0 = top_singular_triplet(target)
    except DegenerateSpectrumError as err:
        sigma, u0, v0 = err.triplet
    root = np.sqrt(sigma)
    return b, root * u0, root * v0


def _deflated_factors(m, rank):
    """Top-``rank`` factors of ``m`` by repeated power iteration with deflation.

    Returns (U, V) with column i equal to sqrt(sigma_i) times the i-th
    singular vector. Degenerate tail components are accepted as-is; a tied
    direction is as good as any.
    """
    remaining = m
    us, vs = [], []
    for _ in range(rank):
        try:
            sigma, u0, v0 = top_singular_triplet(remaining)
        except DegenerateSpectrumError as err:
            sigma, u0, v0 = err.triplet
        if sigma == 0.0:
            break
        root = np.sqrt(sigma)
        us.append(root * u0)
        vs.append(root * v0)
        remaining = remaining - sigma * np.outer(u0, v0)
    if not us:
        return np.zeros((m.shape[0], 1)), np.zeros((m.shape[1], 1))
    return np.column_stack(us), np.column_stack(vs)


def _lowrank_plane(u, v):
    if u.ndim == 1:
        return np.outer(u, v)
    return u @ v.T


def slab_decompose(w, s_x, cfg):
    """Alternating sparse + binary/low-rank fit of a weight matrix.

    Each of the ``cfg.iters_s`` rounds runs, in order: sign plane from the
    current dense residual W - W_S, factors from its elementwise absolute
    value, score of what the plane leaves unexplained, then sparse support
    re-selection under the budget. The sparse plane keeps the signed
    residual values at the selected positions. The last round ends at the
    support update, so the returned plane and factors are the ones that
    support was chosen against.

    With the binary plane disabled the factors are fit to the raw residual
    at ``cfg.lowrank_rank``, which is the sparse-plus-low-rank comparison
    baseline; rank 0 degenerates to pure score-based masking.
    """
    w = as_matrix(w, "W")
    d_out, d_in = w.shape
    s_x = as_vector(s_x, d_in, "s_x")
    budget = sparsity_budget(cfg, d_out, d_in)
    rank = cfg.lowrank_rank

    w_s = np.zeros_like(w)
    b = None
    u = np.zeros(d_out)
    v = np.zeros(d_in)
    mask = np.zeros(w.shape, dtype=bool)
    resid = w
    for _ in range(cfg.iters_s):
        y = w - w_s
        if cfg.binary_plane_enabled:
            if rank == 1:
                try:
                    b, u, v = build_binary_lowrank(y)
                except DegenerateSpectrumError as err:
                    b, u, v = err.result
            else:
                b = sign_matrix(y)
                u, v = _deflated_factors(np.abs(y), rank)
            plane = hadamard(_lowrank_plane(u, v), b)
        else:
            b = None
            if rank == 0:
                u, v = np.zeros(d_out), np.zeros(d_in)
                plane = np.zeros_like(w)
            else:
                u, v = _deflated_factors(y, rank)
                if rank == 1:
                    u, v = u[:, 0], v[:, 0]
                plane = _lowrank_plane(u, v)
        resid = w - plane
        mask = select_mask(score(resid, s_x), budget, cfg)
        w_s = np.where(mask, resid, 0.0)

    return SlabDecomposition(
        d_out=d_out,
        d_in=d_in,
        mask=mask,
        values=resid[mask],
        u=u,
        v=v,
        b_plane=b,
        meta=cfg,
    )


def reconstruct(d):
    """Densify a decomposition: W_S + (u v^T) * B."""
    w = np.zeros((d.d_out, d.d_in))
    w[d.mask] = d.values
    plane = _lowrank_plane(d.u, d.v)
    if d.b_plane is not None:
        plane = hadamard(plane, d.b_plane)
    return w + plane


def weighted_error(w, w_hat, s_x):
    """Frobenius norm of (w - w_hat) with columns weighted by s_x."""
    diff = (np.asarray(w, dtype=np.float64) - np.asarray(w_hat, dtype=np.float64))
    return float(np.linalg.norm(diff * np.asarray(s_x, dtype=np.float64)[None, :]))


def config_with(cfg, **changes):
    """dataclasses.replace with validation rerun; small sugar for sweeps."""
    return replace(cfg, **changes)
