from typing import Optional

import codenoise
import equinox as eqx
import jax
import jax.numpy as jnp
import jax.random as jr
import jax.tree_util as jtu
from jaxtyping import Array, ArrayLike, Float


def make_sched(num_steps=100, beta_start=1e-4, beta_end=0.02):
    return codenoise.make_linear_schedule(num_steps, beta_start, beta_end)


def blob(motion="linear", velocity=1.0, frame_shape=(8, 8), **kwargs):
    height, width = frame_shape
    return codenoise.SceneSpec(
        motion=motion,
        velocity=velocity,
        blob_center0=(height / 2, width / 2),
        blob_width=1.5,
        frame_shape=frame_shape,
        **kwargs,
    )


def scene_denoiser(sched, frame_shape=(8, 8), variance=0.01, **kwargs):
    family = codenoise.SceneGaussians(frame_shape, variance=variance, **kwargs)
    return codenoise.AnalyticGaussianDenoiser(family, sched)


def scene_conditions(layout, spec):
    return [codenoise.spec_to_condition(spec).vector] * layout.clip_count


class ExactNoiseDenoiser(codenoise.AbstractDenoiser):
    """Returns the true noise of a sequence built with `forward_diffuse`, whatever the
    input."""

    eps: Float[Array, "frames *shape"] = eqx.field(converter=jnp.asarray)

    @property
    def frame_shape(self):
        return self.eps.shape[1:]

    def __call__(self, clip, t, condition, identifier=None):
        del t, condition, identifier
        return jax.lax.dynamic_slice_in_dim(self.eps, clip.start_frame, clip.window)


class ConstantDenoiser(codenoise.AbstractDenoiser):
    """Predicts `value` everywhere; `value` may be NaN."""

    value: float
    shape: tuple[int, ...] = eqx.field(static=True)

    @property
    def frame_shape(self):
        return self.shape

    def __call__(self, clip, t, condition, identifier=None):
        del t, condition, identifier
        return jnp.full(clip.frames.shape, self.value)


def random_clips(key, layout, frame_shape=(3,)):
    keys = jr.split(key, layout.clip_count)
    return [
        codenoise.Clip(
            jr.normal(k, (layout.window, *frame_shape)), i, layout.start(i), 0
        )
        for i, k in enumerate(keys)
    ]


def _no_nan(x):
    if eqx.is_array(x):
        return x.at[jnp.isnan(x)].set(8.9568)  # arbitrary magic value
    else:
        return x


def tree_allclose(x, y, *, rtol=1e-5, atol=1e-8, equal_nan=False):
    if equal_nan:
        x = jtu.tree_map(_no_nan, x)
        y = jtu.tree_map(_no_nan, y)
    return eqx.tree_equal(x, y, typematch=True, rtol=rtol, atol=atol)


def relative_error(x: ArrayLike, y: ArrayLike, mask: Optional[ArrayLike] = None):
    x = jnp.asarray(x)
    y = jnp.asarray(y)
    if mask is not None:
        x = jnp.where(mask, x, 0)
        y = jnp.where(mask, y, 0)
    return float(jnp.linalg.norm((x - y).ravel()) / jnp.linalg.norm(y.ravel()))
