import math
from collections.abc import Sequence
from typing import Literal

import equinox as eqx
import jax.numpy as jnp
import jax.random as jr
import numpy as np
from jaxtyping import Array, ArrayLike, Float

from ._conditions import ConditionEmbedding
from ._sequence import LongSequence


_MOTIONS = ("static", "linear", "sinusoidal")
CONDITION_DIM = 9


class SceneSpec(eqx.Module):
    """A synthetic scene: one Gaussian blob moving horizontally across the frame.

    The blob centre at frame `j` is `(row0, col(j))` with

    - `static`: `col(j) = col0`;
    - `linear`: `col(j) = col0 + velocity j`;
    - `sinusoidal`: `col(j) = col0 + (velocity / ω) sin(ω j)`, `ω = 2π / period`, so
        that `velocity` is the initial speed.

    The frame is treated as a torus: blobs leaving one edge wrap around to the other.

    **Attributes:**

    - `motion`: one of `"static"`, `"linear"`, `"sinusoidal"`.
    - `velocity`: pixels per frame.
    - `blob_center0`: the `(row, col)` centre at frame `0`.
    - `blob_width`: the standard deviation of the blob, in pixels.
    - `amplitude`: the peak value of the blob.
    - `period`: the period of sinusoidal motion, in frames.
    - `frame_shape`: `(height, width)`.
    - `noise_floor`: the standard deviation of i.i.d. pixel noise added on top.
    """

    motion: Literal["static", "linear", "sinusoidal"] = eqx.field(static=True)
    velocity: float = 0.0
    blob_center0: tuple[float, float] = (8.0, 8.0)
    blob_width: float = 2.0
    amplitude: float = 1.0
    period: float = 32.0
    frame_shape: tuple[int, int] = eqx.field(default=(16, 16), static=True)
    noise_floor: float = 0.0

    def __check_init__(self):
        if self.motion not in _MOTIONS:
            raise ValueError(
                f"`motion` must be one of {_MOTIONS}, but got {self.motion!r}."
            )
        if self.blob_width <= 0:
            raise ValueError(
                f"`blob_width` must be positive, but got {self.blob_width}."
            )
        if self.period <= 0:
            raise ValueError(f"`period` must be positive, but got {self.period}.")
        if self.noise_floor < 0:
            raise ValueError("`noise_floor` must be nonnegative.")
        if len(self.frame_shape) != 2 or min(self.frame_shape) < 1:
            raise ValueError(
                f"`frame_shape` must be `(height, width)`, got {self.frame_shape}."
            )


def spec_to_condition(spec: SceneSpec) -> ConditionEmbedding:
    """Encodes a scene as the vector
    `[is_static, is_linear, is_sinusoidal, velocity, row0, col0, width, amplitude,
    period]`.

    Entries are in the scene's own units and are not normalised:

    - `is_static`, `is_linear`, `is_sinusoidal`: a one-hot motion code, each `0` or
        `1`;
    - `velocity`: pixels per frame, of either sign;
    - `row0`, `col0`: pixels, usually within `[0, height)` and `[0, width)`;
    - `width`: pixels, positive;
    - `amplitude`: pixel intensity;
    - `period`: frames, positive, and typically the largest entry.

    [`codenoise.condition_to_spec`][] inverts it exactly, and the analytic scene family
    reads the motion straight off it. A learned denoiser sees the raw values through
    its condition projection.
    """
    one_hot = [float(spec.motion == motion) for motion in _MOTIONS]
    row0, col0 = spec.blob_center0
    vector = np.array(
        one_hot
        + [
            spec.velocity,
            row0,
            col0,
            spec.blob_width,
            spec.amplitude,
            spec.period,
        ],
        dtype=np.float64,
    )
    return ConditionEmbedding(jnp.asarray(vector), label=spec.motion)


def condition_to_spec(
    condition: ConditionEmbedding | ArrayLike,
    frame_shape: tuple[int, int] = (16, 16),
    noise_floor: float = 0.0,
) -> SceneSpec:
    """Inverse of [`codenoise.spec_to_condition`][]. Only defined on encodings of
    scenes, i.e. vectors whose first three entries are one-hot."""
    if isinstance(condition, ConditionEmbedding):
        condition = condition.vector
    vector = np.asarray(condition, dtype=np.float64)
    if vector.shape != (CONDITION_DIM,):
        raise ValueError(
            f"Scene conditions have {CONDITION_DIM} entries, but got shape "
            f"{vector.shape}."
        )
    one_hot = vector[:3]
    if sorted(one_hot.tolist()) != [0.0, 0.0, 1.0]:
        raise ValueError(
            f"{one_hot.tolist()} is not a one-hot motion encoding, so this condition "
            "does not describe a single scene."
        )
    velocity, row0, col0, width, amplitude, period = vector[3:].tolist()
    return SceneSpec(
        motion=_MOTIONS[int(np.argmax(one_hot))],
        velocity=velocity,
        blob_center0=(row0, col0),
        blob_width=width,
        amplitude=amplitude,
        period=period,
        frame_shape=frame_shape,
        noise_floor=noise_floor,
    )


def scene_centers(
    condition: Float[ArrayLike, " 9"], frame_indices: ArrayLike
) -> tuple[Float[Array, " frames"], Float[Array, " frames"]]:
    """The (unwrapped) blob centres `(rows, cols)` at the given frames.

    Works on any vector, not just scene encodings: the motion laws are mixed according
    to the first three entries. Traceable.
    """
    c = jnp.asarray(condition)
    j = jnp.asarray(frame_indices, dtype=c.dtype)
    is_static, is_linear, is_sinusoidal = c[0], c[1], c[2]
    velocity, row0, col0, period = c[3], c[4], c[5], c[8]
    omega = 2 * math.pi / jnp.where(period > 0, period, 1)
    col = (
        is_static * col0
        + is_linear * (col0 + velocity * j)
        + is_sinusoidal * (col0 + velocity / omega * jnp.sin(omega * j))
    )
    row = jnp.broadcast_to(row0, j.shape)
    return row, col


def _wrapped_offset(x, centre, size):
    return (x - centre + size / 2) % size - size / 2


def render_condition_frames(
    condition: Float[ArrayLike, " 9"],
    frame_indices: ArrayLike,
    frame_shape: tuple[int, int],
) -> Float[Array, "frames height width"]:
    """Renders the noiseless blob described by `condition` at the given absolute frame
    indices. Traceable, so it may be called with a traced condition."""
    c = jnp.asarray(condition)
    height, width = frame_shape
    rows, cols = scene_centers(c, frame_indices)
    blob_width = c[6]
    amplitude = c[7]
    safe_width = jnp.where(blob_width > 0, blob_width, 1)
    grid_r = jnp.arange(height, dtype=c.dtype)
    grid_c = jnp.arange(width, dtype=c.dtype)
    dr = _wrapped_offset(grid_r[None, :, None], rows[:, None, None], height)
    dc = _wrapped_offset(grid_c[None, None, :], cols[:, None, None], width)
    blob = jnp.exp(-(dr**2 + dc**2) / (2 * safe_width**2))
    return jnp.where(blob_width > 0, amplitude * blob, 0.0)


def render_scene(spec: SceneSpec, num_frames: int, seed: int = 0) -> LongSequence:
    """Renders `num_frames` frames of a scene, starting at frame `0`.

    Deterministic given `(spec, seed)`; the seed only affects the noise floor.
    """
    if num_frames < 1:
        raise ValueError(f"`num_frames` must be at least 1, got {num_frames}.")
    condition = spec_to_condition(spec).vector
    frame_indices = jnp.arange(num_frames)
    frames = render_condition_frames(condition, frame_indices, spec.frame_shape)
    if spec.noise_floor > 0:
        noise = jr.normal(jr.PRNGKey(seed), frames.shape, frames.dtype)
        frames = frames + spec.noise_floor * noise
    return LongSequence(frames)


def render_regions(
    regions: Sequence[tuple[tuple[int, int], SceneSpec]], seed: int = 0
) -> LongSequence:
    """Renders a multi-scene sequence: frames `[start, stop)` of each region show that
    region's scene, at absolute frame indices. Regions must tile `[0, total)`."""
    regions = sorted(regions, key=lambda item: item[0][0])
    shapes = {spec.frame_shape for _, spec in regions}
    if len(shapes) != 1:
        raise ValueError(f"All scenes must share one frame shape, but got {shapes}.")
    pieces = []
    cursor = 0
    for index, ((start, stop), spec) in enumerate(regions):
        if start != cursor or stop <= start:
            raise ValueError(
                f"Scene regions must tile the sequence; region [{start}, {stop}) "
                f"does not start at frame {cursor}."
            )
        condition = spec_to_condition(spec).vector
        frames = render_condition_frames(
            condition, jnp.arange(start, stop), spec.frame_shape
        )
        if spec.noise_floor > 0:
            key = jr.fold_in(jr.PRNGKey(seed), index)
            frames = frames + spec.noise_floor * jr.normal(key, frames.shape)
        pieces.append(frames)
        cursor = stop
    return LongSequence(jnp.concatenate(pieces))


def parse_scene_specs(
    text: str, frame_shape: tuple[int, int] = (16, 16), noise_floor: float = 0.0
) -> list[tuple[int, SceneSpec]]:
    """Parses scene lines `start_frame<TAB>label<TAB>comma-separated floats`, where the
    floats are the encoding produced by [`codenoise.spec_to_condition`][].

    **Returns:**

    `(start_frame, spec)` pairs sorted by start frame.
    """
    scenes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.strip().split("\t")
        if len(parts) != 3:
            raise ValueError(
                f"Line {lineno}: expected `start_frame<TAB>label<TAB>values`, got "
                f"{line!r}."
            )
        try:
            start = int(parts[0])
            vector = [float(v) for v in parts[2].split(",")]
            spec = condition_to_spec(vector, frame_shape, noise_floor)
        except ValueError as e:
            raise ValueError(f"Line {lineno}: {e}") from e
        scenes.append((start, spec))
    if len(scenes) == 0:
        raise ValueError("No scenes found.")
    scenes.sort(key=lambda item: item[0])
    return scenes


def format_scene_specs(scenes: Sequence[tuple[int, SceneSpec]]) -> str:
    lines = []
    for start, spec in scenes:
        vector = np.asarray(spec_to_condition(spec).vector)
        values = ",".join(repr(float(v)) for v in vector)
        lines.append(f"{start}\t{spec.motion}\t{values}")
    return "\n".join(lines) + "\n"
