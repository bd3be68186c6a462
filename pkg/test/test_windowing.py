import codenoise
import jax.numpy as jnp
import jax.random as jr
import numpy as np
import pytest

from .helpers import random_clips


def test_make_layout():
    layout = codenoise.make_layout(8, 4, 2)
    assert layout.clip_count == 3
    assert [(layout.start(i), layout.start(i) + 4) for i in range(3)] == [
        (0, 4),
        (2, 6),
        (4, 8),
    ]
    assert codenoise.make_layout(16, 16, 16).clip_count == 1
    assert codenoise.make_layout(76, 16, 4).clip_count == 16


@pytest.mark.parametrize(
    "args, match",
    [
        ((10, 4, 5), "stride <= window"),
        ((10, 4, 0), "stride <= window"),
        ((3, 4, 2), "shorter"),
        ((9, 4, 2), "divisible"),
        ((8, 0, 1), "at least 1"),
    ],
)
def test_make_layout_invalid(args, match):
    with pytest.raises(ValueError, match=match):
        codenoise.make_layout(*args)


def test_layout_consistency_check():
    with pytest.raises(ValueError, match="inconsistent"):
        codenoise.ClipLayout(window=4, stride=2, clip_count=3, total_frames=9)


def test_coverage_index():
    layout = codenoise.make_layout(8, 4, 2)
    index = codenoise.coverage_index(layout)
    assert len(index) == 8
    assert index[0] == ((0, 0),)
    assert index[3] == ((0, 3), (1, 1))
    assert index[5] == ((1, 3), (2, 1))
    assert index[7] == ((2, 3),)
    for j in range(8):
        for i, local in index[j]:
            assert layout.start(i) + local == j
            assert layout.covers(i, j)


def test_split():
    v = codenoise.LongSequence(jnp.arange(8.0))
    layout = codenoise.make_layout(8, 4, 2)
    clips = codenoise.split(v, layout, time_step=7)
    assert [clip.frames.tolist() for clip in clips] == [
        [0, 1, 2, 3],
        [2, 3, 4, 5],
        [4, 5, 6, 7],
    ]
    assert [clip.start_frame for clip in clips] == [0, 2, 4]
    assert all(clip.time_step == 7 for clip in clips)

    single = codenoise.make_layout(8, 8, 8)
    (clip,) = codenoise.split(v, single)
    assert jnp.array_equal(clip.frames, v.frames)

    with pytest.raises(ValueError, match="9 frames"):
        codenoise.split(codenoise.LongSequence(jnp.arange(9.0)), layout)


@pytest.mark.parametrize("kind", ["uniform", "tent"])
def test_merge_left_inverse_of_split(kind, getkey):
    layout = codenoise.make_layout(20, 6, 2)
    v = codenoise.LongSequence(jr.normal(getkey(), (20, 3, 2)))
    weights = codenoise.make_weights(kind, layout)
    merged = codenoise.merge_weighted(codenoise.split(v, layout), layout, weights)
    assert jnp.array_equal(merged.frames, v.frames)


def test_merge_two_candidates():
    layout = codenoise.make_layout(3, 2, 1)
    clips = [
        codenoise.Clip(jnp.array([0.0, 1.0]), 0, 0),
        codenoise.Clip(jnp.array([3.0, 5.0]), 1, 1),
    ]
    merged = codenoise.merge_weighted(clips, layout, codenoise.uniform_weights(layout))
    assert jnp.allclose(merged.frames, jnp.array([0.0, 2.0, 5.0]))

    weights = codenoise.WeightScheme("custom", jnp.array([[1.0, 1.0], [2.0, 2.0]]))
    merged = codenoise.merge_weighted(clips, layout, weights)
    assert jnp.allclose(merged.frames[1], (1 * 1.0 + 4 * 3.0) / 5, rtol=1e-14)
    # Frames covered once pass through exactly.
    assert merged.frames[0] == 0.0
    assert merged.frames[2] == 5.0


def test_merge_single_cover_bitwise(getkey):
    layout = codenoise.make_layout(12, 4, 4)
    clips = random_clips(getkey(), layout)
    merged = codenoise.merge_weighted(clips, layout, codenoise.tent_weights(layout))
    assert jnp.array_equal(
        merged.frames, jnp.concatenate([clip.frames for clip in clips])
    )


@pytest.mark.parametrize(
    "total, window, stride", [(4, 4, 1), (7, 4, 1), (8, 4, 2), (10, 6, 4), (9, 3, 2)]
)
@pytest.mark.parametrize("per_pixel", [False, True])
def test_merge_matches_lsq_oracle(total, window, stride, per_pixel, getkey):
    layout = codenoise.make_layout(total, window, stride)
    clips = random_clips(getkey(), layout, (3,))
    shape = (layout.clip_count, window, 3) if per_pixel else (layout.clip_count, window)
    tables = jr.uniform(getkey(), shape, minval=0.1, maxval=2.0)
    weights = codenoise.WeightScheme("custom", tables)
    merged = codenoise.merge_weighted(clips, layout, weights)
    oracle = codenoise.merge_lsq_oracle(clips, layout, weights)
    assert jnp.allclose(merged.frames, oracle.frames, rtol=0, atol=1e-8)
    ours = codenoise.merge_objective(merged, clips, layout, weights)
    theirs = codenoise.merge_objective(oracle, clips, layout, weights)
    assert ours <= theirs + 1e-10


def test_merge_objective_consistent_clips(getkey):
    layout = codenoise.make_layout(10, 4, 2)
    v = codenoise.LongSequence(jr.normal(getkey(), (10, 2)))
    clips = codenoise.split(v, layout)
    weights = codenoise.tent_weights(layout)
    merged = codenoise.merge_weighted(clips, layout, weights)
    assert codenoise.merge_objective(merged, clips, layout, weights) == 0

    single = codenoise.make_layout(4, 4, 1)
    (clip,) = random_clips(getkey(), single)
    uniform = codenoise.uniform_weights(single)
    oracle = codenoise.merge_lsq_oracle([clip], single, uniform)
    assert jnp.allclose(oracle.frames, clip.frames, atol=1e-12)
    merged = codenoise.merge_weighted([clip], single, uniform)
    assert jnp.array_equal(merged.frames, clip.frames)


def test_merge_order_independent(getkey):
    layout = codenoise.make_layout(14, 6, 2)
    clips = random_clips(getkey(), layout)
    weights = codenoise.tent_weights(layout)
    expected = codenoise.merge_weighted(clips, layout, weights)
    # Rebuilding the clips from fresh arrays must not change anything.
    copies = [
        codenoise.Clip(
            jnp.asarray(np.asarray(c.frames)), c.clip_index, c.start_frame, 0
        )
        for c in clips
    ]
    again = codenoise.merge_weighted(copies, layout, weights)
    assert jnp.array_equal(expected.frames, again.frames)


def test_merge_errors(getkey):
    layout = codenoise.make_layout(8, 4, 2)
    clips = random_clips(getkey(), layout)
    weights = codenoise.uniform_weights(layout)
    with pytest.raises(ValueError, match="layout has 3"):
        codenoise.merge_weighted(clips[:2], layout, weights)
    bad = codenoise.WeightScheme("custom", jnp.ones((3, 5)))
    with pytest.raises(ValueError, match="does not start with"):
        codenoise.merge_weighted(clips, layout, bad)
    zero = codenoise.WeightScheme("custom", jnp.zeros((3, 4)))
    with pytest.raises(ValueError, match="zero"):
        codenoise.merge_weighted(clips, layout, zero)
    with pytest.raises(ValueError, match="nonnegative"):
        codenoise.WeightScheme("custom", -jnp.ones((3, 4)))
    with pytest.raises(ValueError, match="Unknown weight scheme"):
        codenoise.make_weights("gaussian", layout)


def test_tent_weights():
    layout = codenoise.make_layout(5, 5, 1)
    (row,) = np.asarray(codenoise.tent_weights(layout).tables)
    assert np.allclose(row, [1 / 3, 2 / 3, 1, 2 / 3, 1 / 3])
    layout = codenoise.make_layout(4, 4, 1)
    (row,) = np.asarray(codenoise.tent_weights(layout).tables)
    assert np.all(row > 0)
    assert np.allclose(row, row[::-1])


def test_pad_to_layout():
    v = codenoise.LongSequence(jnp.arange(10.0), frame_rate=4.0)
    padded, pad = codenoise.pad_to_layout(v, 4, 4)
    assert pad == 2
    assert padded.frames.tolist() == list(range(10)) + [9, 9]
    assert padded.frame_rate == 4.0
    codenoise.make_layout(padded.num_frames, 4, 4)

    same, pad = codenoise.pad_to_layout(v, 4, 2)
    assert pad == 0
    assert same is v

    short, pad = codenoise.pad_to_layout(codenoise.LongSequence(jnp.arange(3.0)), 8, 2)
    assert pad == 5
    assert short.num_frames == 8

    assert codenoise.padding_needed(76, 16, 4) == 0
    assert codenoise.padding_needed(77, 16, 4) == 3
    with pytest.raises(ValueError):
        codenoise.padding_needed(10, 4, 5)


def _every_small_layout():
    for window in range(1, 7):
        for stride in range(1, window + 1):
            for clip_count in range(1, 5):
                if clip_count == 1 and stride > 1:
                    continue
                total = window + stride * (clip_count - 1)
                yield codenoise.make_layout(total, window, stride)


def test_merge_random_instances(getkey):
    # Every pixel is an independent instance: its own clip values and weights.
    pixels = 16
    instances = 0
    for layout in _every_small_layout():
        clips = random_clips(getkey(), layout, (pixels,))
        tables = jr.uniform(
            getkey(), (layout.clip_count, layout.window, pixels), minval=0.05
        )
        weights = codenoise.WeightScheme("custom", tables)
        merged = codenoise.merge_weighted(clips, layout, weights)
        oracle = codenoise.merge_lsq_oracle(clips, layout, weights)
        assert jnp.allclose(merged.frames, oracle.frames, rtol=0, atol=1e-8)
        objective = codenoise.merge_objective(merged, clips, layout, weights)
        minimum = codenoise.merge_objective(oracle, clips, layout, weights)
        assert abs(float(objective - minimum)) <= 1e-10

        for scale in (0.3, 7.0):
            scaled = codenoise.WeightScheme("custom", scale * tables)
            rescaled = codenoise.merge_weighted(clips, layout, scaled)
            assert jnp.allclose(rescaled.frames, merged.frames, rtol=1e-12, atol=1e-12)

        index = codenoise.coverage_index(layout)
        for j in range(layout.total_frames):
            candidates = jnp.stack([clips[i].frames[local] for i, local in index[j]])
            assert jnp.all(merged.frames[j] >= candidates.min(axis=0) - 1e-12)
            assert jnp.all(merged.frames[j] <= candidates.max(axis=0) + 1e-12)
        instances += pixels
    assert instances >= 1000
