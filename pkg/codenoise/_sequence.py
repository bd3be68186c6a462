import equinox as eqx
import jax.numpy as jnp
from jaxtyping import Array, Float

from ._custom_types import IntScalarLike


class LongSequence(eqx.Module):
    """A long sequence of frames, i.e. the long video `v_t` at some rung of the
    denoising trajectory.

    **Attributes:**

    - `frames`: an array of shape `(total_frames, *frame_shape)`.
    - `frame_rate`: purely informational; carried through to exported files.
    """

    frames: Float[Array, "frames *shape"] = eqx.field(converter=jnp.asarray)
    frame_rate: float = eqx.field(default=8.0, static=True)

    def __check_init__(self):
        if jnp.ndim(self.frames) < 1:
            raise ValueError("`LongSequence.frames` must have a leading frame axis.")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shape(self) -> tuple[int, ...]:
        return self.frames.shape[1:]


class Clip(eqx.Module):
    """A window of `M` consecutive frames cut out of a [`codenoise.LongSequence`][].

    **Attributes:**

    - `frames`: an array of shape `(window, *frame_shape)`.
    - `clip_index`: which clip of the layout this is (`i`).
    - `start_frame`: the absolute index of the first frame, `S * i`.
    - `time_step`: the diffusion step `t` the frames are at.

    The integer attributes may be JAX arrays, so that a compiled denoiser does not
    recompile once per clip.
    """

    frames: Float[Array, "window *shape"]
    clip_index: IntScalarLike = 0
    start_frame: IntScalarLike = 0
    time_step: IntScalarLike = 0

    @property
    def window(self) -> int:
        return self.frames.shape[0]
