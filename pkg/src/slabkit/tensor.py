"""Dense-matrix plumbing and the shared numerical primitives.

Everything downstream works on plain float64 numpy arrays validated by
``as_matrix``. This module adds the two non-obvious pieces: a bit-packed
sign-plane container and a power-iteration routine for the dominant
singular triplet.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

# Fixed seed for the rare power-iteration restart; keeps runs reproducible.
_REINIT_SEED = 0x51AB


def as_matrix(x, name="matrix"):
    """Validate ``x`` as a non-empty 2-D array of finite reals, as float64."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"{name} must be non-empty, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_vector(x, length=None, name="vector"):
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if length is not None and v.shape[0] != length:
        raise ValueError(f"{name} has length {v.shape[0]}, expected {length}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def pack_bitplane(bits):
    """Pack a 2-D boolean array into bytes, row-major, LSB-first per byte."""
    bits = np.asarray(bits, dtype=bool)
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def unpack_bitplane(data, rows, cols):
    """Inverse of :func:`pack_bitplane`; returns a (rows, cols) bool array."""
    n = rows * cols
    expected = (n + 7) // 8
    if len(data) != expected:
        raise ValueError(f"bit plane has {len(data)} bytes, expected {expected}")
    flat = np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=n, bitorder="little")
    return flat.astype(bool).reshape(rows, cols)


class SignMatrix:
    """A +/-1 matrix stored one bit per entry (bit 1 means +1, bit 0 means -1).

    Bits are row-major and LSB-first within each byte, matching the on-disk
    plane layout, so serialization is a plain byte copy.
    """

    __slots__ = ("rows", "cols", "packed")

    def __init__(self, rows, cols, packed):
        rows, cols = int(rows), int(cols)
        if rows < 1 or cols < 1:
            raise ValueError(f"sign matrix must be non-empty, got {rows}x{cols}")
        expected = (rows * cols + 7) // 8
        if len(packed) != expected:
            raise ValueError(f"packed plane has {len(packed)} bytes, expected {expected}")
        self.rows = rows
        self.cols = cols
        self.packed = bytes(packed)

    @classmethod
    def from_bools(cls, bits):
        bits = np.asarray(bits, dtype=bool)
        return cls(bits.shape[0], bits.shape[1], pack_bitplane(bits))

    @property
    def shape(self):
        return (self.rows, self.cols)

    def bools(self):
        """Boolean view: True where the entry is +1."""
        return unpack_bitplane(self.packed, self.rows, self.cols)

    def dense(self):
        """Materialize as a float64 matrix of +1.0 and -1.0."""
        return np.where(self.bools(), 1.0, -1.0)

    def __eq__(self, other):
        return (
            isinstance(other, SignMatrix)
            and self.shape == other.shape
            and self.packed == other.packed
        )

    def __repr__(self):
        return f"SignMatrix({self.rows}x{self.cols})"


class SingularTriplet(NamedTuple):
    sigma: float
    u: np.ndarray
    v: np.ndarray


class DegenerateSpectrumError(RuntimeError):
    """Power iteration ran out of iterations without meeting the tolerance.

    This happens when the two leading singular values are (near-)equal, so no
    single dominant direction exists. The best iterate is attached as
    ``triplet``; it is still an optimal or near-optimal rank-1 minimizer, and
    callers that only need *a* minimizer may accept it.
    """

    def __init__(self, triplet, message="power iteration did not converge (degenerate spectrum?)"):
        super().__init__(message)
        self.triplet = triplet


def sign_matrix(m):
    """Extract the sign plane of ``m``: +1 where the entry is >= 0, else -1."""
    m = as_matrix(m)
    return SignMatrix.from_bools(m >= 0)


def hadamard(a, b):
    """Elementwise product. ``b`` may be a dense matrix or a SignMatrix."""
    a = as_matrix(a, "left factor")
    if isinstance(b, SignMatrix):
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
        return np.where(b.bools(), a, -a)
    b = as_matrix(b, "right factor")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def top_singular_triplet(m, tol=1e-10, max_iters=1000):
    """Dominant singular triplet of ``m`` by power iteration on m^T m.

    Starts from the normalized all-ones vector, which is the natural initial
    guess here because the decomposition engine always calls this on
    elementwise-absolute matrices, whose dominant right singular vector is
    itself non-negative. Iteration stops once both the relative change in
    sigma and the change in the right vector fall below ``tol``; testing sigma
    alone is not enough, since it converges at twice the rate of the vectors
    and can look settled while the factors are still off.

    Raises :class:`DegenerateSpectrumError` carrying the best iterate if
    ``max_iters`` is exhausted. For a zero matrix returns (0, 0, 0).
    """
    m = as_matrix(m)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    rows, cols = m.shape
    if not m.any():
        return SingularTriplet(0.0, np.zeros(rows), np.zeros(cols))

    v = np.full(cols, 1.0 / np.sqrt(cols))
    restart = np.random.default_rng(_REINIT_SEED)
    sigma = 0.0
    prev_sigma = -1.0
    u = np.zeros(rows)
    for _ in range(max_iters):
        mu = m @ v
        norm_u = np.linalg.norm(mu)
        if norm_u == 0.0:
            # v landed exactly in the null space; restart deterministically.
            v = restart.standard_normal(cols)
            v /= np.linalg.norm(v)
            prev_sigma = -1.0
            continue
        u = mu / norm_u
        w = m.T @ u
        sigma = float(np.linalg.norm(w))
        if sigma == 0.0:
            v = restart.standard_normal(cols)
            v /= np.linalg.norm(v)
            prev_sigma = -1.0
            continue
        v_next = w / sigma
        settled = (
            prev_sigma >= 0.0
            and abs(sigma - prev_sigma) <= tol * sigma
            and np.linalg.norm(v_next - v) <= tol
        )
        v = v_next
        prev_sigma = sigma
        if settled:
            return SingularTriplet(sigma, u, v)
    raise DegenerateSpectrumError(SingularTriplet(sigma, u, v))
