from collections.abc import Sequence
from typing import Literal

import equinox as eqx
import jax
import jax.numpy as jnp
import lineax as lx
import numpy as np
from jaxtyping import Array, Float

from ._custom_types import IntScalarLike
from ._misc import error_if, is_traced, left_broadcast_to
from ._sequence import Clip, LongSequence


class ClipLayout(eqx.Module):
    """How a long sequence is cut into overlapping clips.

    Clip `i` covers the half-open frame interval `[S i, S i + M)`, so that
    `total_frames = S (N - 1) + M`. Use [`codenoise.make_layout`][] to build one from a
    frame count.

    **Attributes:**

    - `window`: the number of frames per clip, `M`.
    - `stride`: the offset between the first frames of adjacent clips, `S`. `S = M`
        means disjoint clips, i.e. isolated denoising.
    - `clip_count`: the number of clips, `N`.
    - `total_frames`: the length of the long sequence.
    """

    window: int = eqx.field(static=True)
    stride: int = eqx.field(static=True)
    clip_count: int = eqx.field(static=True)
    total_frames: int = eqx.field(static=True)

    def __check_init__(self):
        if self.window < 1:
            raise ValueError(f"`window` must be at least 1, but got {self.window}.")
        if not 1 <= self.stride <= self.window:
            raise ValueError(
                "Must have `1 <= stride <= window` so that every frame is covered, but "
                f"got `stride={self.stride}` and `window={self.window}`."
            )
        if self.clip_count < 1:
            raise ValueError(
                f"`clip_count` must be at least 1, but got {self.clip_count}."
            )
        expected = self.stride * (self.clip_count - 1) + self.window
        if self.total_frames != expected:
            raise ValueError(
                f"`total_frames={self.total_frames}` is inconsistent with the layout; "
                f"expected `stride * (clip_count - 1) + window = {expected}`."
            )

    def start(self, i: int) -> int:
        return self.stride * i

    def covers(self, i: int, j: int) -> bool:
        return self.stride * i <= j < self.stride * i + self.window


def make_layout(total_frames: int, window: int, stride: int) -> ClipLayout:
    """Builds the [`codenoise.ClipLayout`][] covering `total_frames` frames.

    **Arguments:**

    - `total_frames`: the length of the long sequence.
    - `window`: frames per clip, `M`.
    - `stride`: offset between clips, `S`, with `1 <= S <= M`.

    **Returns:**

    A layout with `N = (total_frames - window) / stride + 1` clips.

    **Raises:**

    `ValueError` if the frames cannot be tiled exactly. Lengths that don't tile can be
    padded with [`codenoise.pad_to_layout`][].
    """
    if window < 1:
        raise ValueError(f"`window` must be at least 1, but got {window}.")
    if not 1 <= stride <= window:
        raise ValueError(
            "Must have `1 <= stride <= window`, as otherwise some frames are not "
            f"covered by any clip. Got `stride={stride}` and `window={window}`."
        )
    if total_frames < window:
        raise ValueError(
            f"`total_frames={total_frames}` is shorter than `window={window}`."
        )
    if (total_frames - window) % stride != 0:
        raise ValueError(
            f"`total_frames - window = {total_frames - window}` is not divisible by "
            f"`stride={stride}`. Pad or trim the sequence first."
        )
    clip_count = (total_frames - window) // stride + 1
    return ClipLayout(
        window=window, stride=stride, clip_count=clip_count, total_frames=total_frames
    )


class WeightScheme(eqx.Module):
    """The merge weights `W_i`.

    **Attributes:**

    - `kind`: one of `"uniform"`, `"tent"` or `"custom"`. Informational, except that it
        is recorded in run manifests.
    - `tables`: nonnegative weights of shape `(clip_count, window)` (one weight per
        frame) or `(clip_count, window, *frame_shape)` (one weight per pixel).
    """

    kind: Literal["uniform", "tent", "custom"] = eqx.field(static=True)
    tables: Float[Array, "clips window *shape"] = eqx.field(converter=jnp.asarray)

    def __check_init__(self):
        if self.kind not in ("uniform", "tent", "custom"):
            raise ValueError(
                "`WeightScheme.kind` must be 'uniform', 'tent' or 'custom', but got "
                f"{self.kind!r}."
            )
        if jnp.ndim(self.tables) < 2:
            raise ValueError(
                "`WeightScheme.tables` must have shape `(clip_count, window, ...)`, "
                f"but got shape {jnp.shape(self.tables)}."
            )
        if not is_traced(self.tables) and np.any(np.asarray(self.tables) < 0):
            raise ValueError("`WeightScheme.tables` must be nonnegative.")


def uniform_weights(layout: ClipLayout) -> WeightScheme:
    """All weights equal to one."""
    return WeightScheme("uniform", jnp.ones((layout.clip_count, layout.window)))


def tent_weights(layout: ClipLayout) -> WeightScheme:
    """Weights rising linearly from each clip edge to the clip centre.

    `W_j = 1 - |j - c| / (c + 1)` with `c = (M - 1) / 2`, so the edge weight is
    `1 / (c + 1) > 0`.
    """
    M = layout.window
    centre = (M - 1) / 2
    row = 1 - np.abs(np.arange(M) - centre) / (centre + 1)
    tables = np.broadcast_to(row, (layout.clip_count, M))
    return WeightScheme("tent", jnp.asarray(tables))


def make_weights(kind: str, layout: ClipLayout) -> WeightScheme:
    if kind == "uniform":
        return uniform_weights(layout)
    elif kind == "tent":
        return tent_weights(layout)
    else:
        raise ValueError(
            f"Unknown weight scheme {kind!r}; expected 'uniform' or 'tent'. Custom "
            "weights must be constructed with `WeightScheme('custom', tables)`."
        )


class CoverageIndex(eqx.Module):
    """For every frame `j`, the pairs `(i, j*)` with `j = S i + j*` and `0 <= j* < M`.

    **Attributes:**

    - `entries`: a tuple with one entry per frame, each a tuple of `(clip, local frame)`
        pairs in increasing clip order.
    """

    entries: tuple[tuple[tuple[int, int], ...], ...] = eqx.field(static=True)

    def __getitem__(self, j: int) -> tuple[tuple[int, int], ...]:
        return self.entries[j]

    def __len__(self) -> int:
        return len(self.entries)


def coverage_index(layout: ClipLayout) -> CoverageIndex:
    S, M = layout.stride, layout.window
    entries = []
    for j in range(layout.total_frames):
        pairs = tuple(
            (i, j - S * i) for i in range(layout.clip_count) if 0 <= j - S * i < M
        )
        entries.append(pairs)
    return CoverageIndex(tuple(entries))


def split(
    v: LongSequence, layout: ClipLayout, time_step: IntScalarLike = 0
) -> list[Clip]:
    """Cuts `v` into the clips `F_i(v) = v[S i : S i + M]`."""
    if v.num_frames != layout.total_frames:
        raise ValueError(
            f"The sequence has {v.num_frames} frames but the layout expects "
            f"{layout.total_frames}."
        )
    clips = []
    for i in range(layout.clip_count):
        start = layout.start(i)
        clips.append(
            Clip(
                frames=v.frames[start : start + layout.window],
                clip_index=i,
                start_frame=start,
                time_step=time_step,
            )
        )
    return clips


def _stack_clips(
    clips: Sequence[Clip], layout: ClipLayout
) -> Float[Array, "clips window *shape"]:
    if len(clips) != layout.clip_count:
        raise ValueError(
            f"Got {len(clips)} clips but the layout has {layout.clip_count}."
        )
    shapes = {clip.frames.shape for clip in clips}
    if len(shapes) != 1:
        raise ValueError(f"All clips must have the same shape, but got {shapes}.")
    (shape,) = shapes
    if shape[0] != layout.window:
        raise ValueError(
            f"Clips have {shape[0]} frames but the layout window is {layout.window}."
        )
    return jnp.stack([clip.frames for clip in clips])


def _clip_weights(
    weights: WeightScheme, layout: ClipLayout, shape: tuple[int, ...]
) -> Float[Array, "clips window *shape"]:
    tables = weights.tables
    if tables.shape[:2] != (layout.clip_count, layout.window):
        raise ValueError(
            f"Weight tables have shape {tables.shape}, which does not start with "
            f"`(clip_count, window) = {(layout.clip_count, layout.window)}`."
        )
    return left_broadcast_to(tables, shape)


def merge_weighted(
    clips: Sequence[Clip], layout: ClipLayout, weights: WeightScheme
) -> LongSequence:
    """Merges per-clip estimates back into one long sequence.

    Frame `j` becomes the squared-weight average of its candidates,
    `Σ_i W_{i,j*}² v^i_{j*} / Σ_i W_{i,j*}²`, which is the minimiser of
    `Σ_i ‖W_i ⊗ (F_i(v) - v^i)‖²`.

    The average is accumulated as an offset from the first covering clip, in
    increasing clip order. As a result, frames covered by a single clip (and frames on
    which all candidates agree) are passed through bit-for-bit, and the output never
    depends on how the clips were computed.

    **Arguments:**

    - `clips`: the `N` clips, in clip order.
    - `layout`: the [`codenoise.ClipLayout`][].
    - `weights`: the [`codenoise.WeightScheme`][].

    **Returns:**

    A [`codenoise.LongSequence`][].
    """
    values = _stack_clips(clips, layout)
    w2 = jnp.square(_clip_weights(weights, layout, values.shape))
    S, M = layout.stride, layout.window
    frame_shape = values.shape[2:]
    total = layout.total_frames

    # The first clip covering frame `j` is `max(0, ceil((j - M + 1) / S))`; laying down
    # the clips in reverse order leaves exactly that one behind.
    reference = jnp.zeros((total, *frame_shape), values.dtype)
    for i in reversed(range(layout.clip_count)):
        reference = reference.at[S * i : S * i + M].set(values[i])
    numerator = jnp.zeros((total, *frame_shape), values.dtype)
    denominator = jnp.zeros((total, *frame_shape), w2.dtype)
    for i in range(layout.clip_count):
        offset = values[i] - reference[S * i : S * i + M]
        numerator = numerator.at[S * i : S * i + M].add(w2[i] * offset)
        denominator = denominator.at[S * i : S * i + M].add(w2[i])
    denominator = error_if(
        denominator,
        jnp.any(denominator == 0),
        "Merge weights are zero for every clip covering some frame.",
    )
    safe_denominator = jnp.where(denominator == 0, 1, denominator)
    return LongSequence(reference + numerator / safe_denominator)


def _design_matrix(layout: ClipLayout) -> np.ndarray:
    # Row `(i, j*)` selects frame `S i + j*`.
    design = np.zeros((layout.clip_count * layout.window, layout.total_frames))
    for i in range(layout.clip_count):
        for local in range(layout.window):
            design[i * layout.window + local, layout.start(i) + local] = 1.0
    return design


def merge_lsq_oracle(
    clips: Sequence[Clip], layout: ClipLayout, weights: WeightScheme
) -> LongSequence:
    """Solves `argmin_v Σ_i ‖W_i ⊗ (F_i(v) - v^i)‖²` directly.

    The normal equations `Dᵀ diag(W²) D v = Dᵀ diag(W²) y` are assembled from the
    explicit selection matrix `D` of the layout and solved independently for every
    pixel with a Cholesky factorisation. This does not use the closed form at all, and
    exists to check [`codenoise.merge_weighted`][].
    """
    values = _stack_clips(clips, layout)
    w2 = jnp.square(_clip_weights(weights, layout, values.shape))
    frame_shape = values.shape[2:]
    rows = layout.clip_count * layout.window
    y = values.reshape(rows, -1)
    w2 = w2.reshape(rows, -1)
    design = jnp.asarray(_design_matrix(layout), dtype=values.dtype)

    def solve_pixel(y_p, w2_p):
        normal = design.T @ (w2_p[:, None] * design)
        rhs = design.T @ (w2_p * y_p)
        operator = lx.MatrixLinearOperator(normal, lx.positive_semidefinite_tag)
        return lx.linear_solve(operator, rhs, lx.Cholesky()).value

    merged = jax.vmap(solve_pixel, in_axes=1, out_axes=1)(y, w2)
    return LongSequence(merged.reshape(layout.total_frames, *frame_shape))


def merge_objective(
    v: LongSequence,
    clips: Sequence[Clip],
    layout: ClipLayout,
    weights: WeightScheme,
) -> Float[Array, ""]:
    """Evaluates `Σ_i ‖W_i ⊗ (F_i(v) - v^i)‖²`."""
    values = _stack_clips(clips, layout)
    w = _clip_weights(weights, layout, values.shape)
    total = jnp.zeros((), values.dtype)
    for i, clip_of_v in enumerate(split(v, layout)):
        total = total + jnp.sum(jnp.square(w[i] * (clip_of_v.frames - values[i])))
    return total


def padding_needed(total_frames: int, window: int, stride: int) -> int:
    """The number of frames [`codenoise.pad_to_layout`][] would add."""
    if not 1 <= stride <= window:
        raise ValueError(
            f"Must have `1 <= stride <= window`, got `stride={stride}`, "
            f"`window={window}`."
        )
    if total_frames < window:
        return window - total_frames
    return (-(total_frames - window)) % stride


def pad_to_layout(
    v: LongSequence, window: int, stride: int
) -> tuple[LongSequence, int]:
    """Repeats the last frame until `v` can be tiled by clips of `window` frames spaced
    `stride` apart.

    **Returns:**

    A 2-tuple of the padded sequence and the number of frames added.
    """
    pad = padding_needed(v.num_frames, window, stride)
    if pad == 0:
        return v, 0
    last = jnp.repeat(v.frames[-1:], pad, axis=0)
    frames = jnp.concatenate([v.frames, last])
    return LongSequence(frames, frame_rate=v.frame_rate), pad
