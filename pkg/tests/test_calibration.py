import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slabkit.calibration import ActivationStats, stats_from_batches


def one_shot_column_norms(batches):
    """Reference: column norms of the vertically stacked batches, one pass."""
    whole = np.concatenate([np.asarray(b, dtype=np.float64) for b in batches], axis=0)
    return np.sqrt(np.einsum("rc,rc->c", whole, whole))


def test_three_four_five_column():
    stats = ActivationStats(2)
    stats.accumulate(np.array([[3.0, 0.0], [4.0, 0.0]]))
    assert np.array_equal(stats.finalize(), np.array([5.0, 0.0]))


def test_finalize_is_square_root_of_sumsq():
    stats = ActivationStats(3)
    stats.sumsq = np.array([25.0, 0.0, 4.0])
    assert np.array_equal(stats.finalize(), np.array([5.0, 0.0, 2.0]))


def test_untouched_stats_finalize_to_zero():
    assert np.array_equal(ActivationStats(4).finalize(), np.zeros(4))


def test_two_accumulates_equal_one_concatenated_accumulate_bitwise():
    rng = np.random.default_rng(101)
    for _ in range(20):
        b1 = rng.standard_normal((int(rng.integers(1, 40)), 6)) * 3.0
        b2 = rng.standard_normal((int(rng.integers(1, 40)), 6)) * 0.3
        split = ActivationStats(6).accumulate(b1).accumulate(b2)
        whole = ActivationStats(6).accumulate(np.vstack([b1, b2]))
        assert np.array_equal(split.sumsq, whole.sumsq)
        assert split.samples_seen == whole.samples_seen


def test_many_large_batches_match_one_shot_norms():
    rng = np.random.default_rng(202)
    batches = [rng.standard_normal((2048, 16)) for _ in range(128)]
    streamed = stats_from_batches(batches, 16)
    reference = one_shot_column_norms(batches)
    assert np.all(np.abs(streamed - reference) <= 1e-10 * reference)


def test_batch_order_permutation_shifts_result_at_most_1e12_relative():
    rng = np.random.default_rng(303)
    batches = [rng.standard_normal((int(rng.integers(5, 60)), 8)) for _ in range(30)]
    forward = stats_from_batches(batches, 8)
    shuffled = [batches[i] for i in rng.permutation(len(batches))]
    backward = stats_from_batches(shuffled, 8)
    assert np.all(np.abs(forward - backward) <= 1e-12 * forward)


def test_row_permutation_within_a_batch_shifts_result_at_most_1e12_relative():
    # Per-column sums never mix rows across columns, so reordering rows can
    # move the result only by summation round-off, far below this bound.
    rng = np.random.default_rng(404)
    batch = rng.standard_normal((500, 8))
    plain = ActivationStats(8).accumulate(batch).finalize()
    permuted = ActivationStats(8).accumulate(batch[rng.permutation(500)]).finalize()
    assert np.all(np.abs(plain - permuted) <= 1e-12 * plain)


def test_scaling_rows_scales_norms_by_absolute_factor():
    rng = np.random.default_rng(505)
    batch = rng.standard_normal((32, 5))
    base = ActivationStats(5).accumulate(batch).finalize()
    doubled = ActivationStats(5).accumulate(2.0 * batch).finalize()
    negated = ActivationStats(5).accumulate(-3.0 * batch).finalize()
    assert np.array_equal(doubled, 2.0 * base)
    assert np.allclose(negated, 3.0 * base, rtol=1e-12)


def test_samples_seen_counts_rows():
    stats = ActivationStats(2)
    stats.accumulate(np.ones((3, 2))).accumulate(np.ones((5, 2)))
    assert stats.samples_seen == 8


def test_column_count_mismatch_is_rejected():
    stats = ActivationStats(4)
    with pytest.raises(ValueError):
        stats.accumulate(np.ones((2, 3)))


def test_non_finite_batch_is_rejected():
    stats = ActivationStats(2)
    with pytest.raises(ValueError):
        stats.accumulate(np.array([[1.0, np.inf]]))


def test_cols_must_be_positive():
    with pytest.raises(ValueError):
        ActivationStats(0)


@given(
    st.lists(
        st.lists(
            st.lists(
                st.floats(min_value=-1e3, max_value=1e3, allow_nan=False),
                min_size=3,
                max_size=3,
            ),
            min_size=1,
            max_size=6,
        ),
        min_size=1,
        max_size=5,
    )
)
@settings(max_examples=50, deadline=None)
def test_streamed_norms_track_the_one_shot_reference(batches):
    arrays = [np.array(b, dtype=np.float64) for b in batches]
    streamed = stats_from_batches(arrays, 3)
    reference = one_shot_column_norms(arrays)
    assert np.allclose(streamed, reference, rtol=1e-9, atol=1e-9)
