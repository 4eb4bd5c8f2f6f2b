"""Streaming accumulation of per-column activation norms.

The pruning score weights each weight column by the L2 norm of the matching
activation column, taken over all calibration rows ever seen. The norm is
used raw: no normalization by sample count, because scores are only ever
compared within a group and a global positive scale cannot change a top-k
selection.
"""

from __future__ import annotations

import numpy as np

from .tensor import as_matrix


class ActivationStats:
    """Per-column running sum of squared activations.

    Accumulation is performed in float64 regardless of the input precision,
    and in strict left-to-right row order: the running total is placed as row
    zero of the reduction, which makes two successive ``accumulate`` calls
    bit-identical to one call on the vertically concatenated batch.
    """

    def __init__(self, cols):
        cols = int(cols)
        if cols < 1:
            raise ValueError("cols must be a positive integer")
        self.cols = cols
        self.sumsq = np.zeros(cols)
        self.samples_seen = 0

    def accumulate(self, batch):
        batch = as_matrix(batch, "batch")
        if batch.shape[1] != self.cols:
            raise ValueError(
                f"batch has {batch.shape[1]} columns, stats track {self.cols}"
            )
        stacked = np.vstack([self.sumsq[None, :], np.square(batch)])
        self.sumsq = np.add.reduce(stacked, axis=0)
        self.samples_seen += batch.shape[0]
        return self

    def finalize(self):
        """Return the column-norm vector: sqrt of the accumulated squares."""
        return np.sqrt(self.sumsq)

    def __repr__(self):
        return f"ActivationStats(cols={self.cols}, samples_seen={self.samples_seen})"


def stats_from_batches(batches, cols):
    """Convenience wrapper: accumulate an iterable of batches and finalize."""
    stats = ActivationStats(cols)
    for batch in batches:
        stats.accumulate(batch)
    return stats.finalize()
