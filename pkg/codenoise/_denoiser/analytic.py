import abc
from typing import Optional

import equinox as eqx
import jax.numpy as jnp
import jax.random as jr
import numpy as np
from jaxtyping import Array, ArrayLike, Float, PRNGKeyArray

from .._custom_types import (
    ConditionLike,
    IdentifierLike,
    IntScalarLike,
    RealScalarLike,
)
from .._misc import check_step, error_if, is_traced
from .._schedule import NoiseSchedule
from .._sequence import Clip
from .._synthdata import render_condition_frames
from .base import AbstractDenoiser


_Moments = tuple[
    Float[Array, "window *shape"], Float[Array, "window *shape"], Float[Array, "*shape"]
]


def analytic_predict(
    x_t: Float[ArrayLike, "window *shape"],
    t: IntScalarLike,
    mean: Float[ArrayLike, "window *shape"],
    variance: Float[ArrayLike, "window *shape"],
    sched: NoiseSchedule,
    *,
    shared_variance: Float[ArrayLike, "*shape"] = 0.0,
) -> Float[Array, "window *shape"]:
    """The optimal noise prediction `E[ε | x_t]` for Gaussian data.

    The clean clip is modelled as `x_0 = μ + σ z + σ_sh u`, where `z` has one
    independent standard normal per element and `u` has one standard normal per pixel,
    shared by every frame of the clip. With `r = x_t - √ᾱ_t μ`, the covariance of
    `r` along the frame axis is `D + ᾱ_t σ_sh² 1 1ᵀ` with `D = ᾱ_t σ² + (1 - ᾱ_t)`, and

    `E[ε | x_t] = √(1 - ᾱ_t) (D + ᾱ_t σ_sh² 1 1ᵀ)⁻¹ r`,

    evaluated with the Sherman-Morrison formula. For `σ_sh = 0` this is the elementwise
    `√(1 - ᾱ_t) r / (ᾱ_t σ² + 1 - ᾱ_t)`.

    **Arguments:**

    - `x_t`: the noisy clip, of shape `(window, *frame_shape)`.
    - `t`: the diffusion step.
    - `mean`: `μ`, broadcastable against `x_t`.
    - `variance`: `σ²`, nonnegative, broadcastable against `x_t`.
    - `sched`: the noise schedule.
    - `shared_variance`: `σ_sh²`, nonnegative, broadcastable against `frame_shape`.

    **Returns:**

    An array with the same shape as `x_t`.
    """
    x_t = jnp.asarray(x_t)
    alpha_bar = sched.alpha_bar(t)
    residual = x_t - jnp.sqrt(alpha_bar) * jnp.asarray(mean)
    diag = alpha_bar * jnp.broadcast_to(variance, x_t.shape) + (1 - alpha_bar)
    shared = alpha_bar * jnp.broadcast_to(shared_variance, x_t.shape[1:])
    scaled = residual / diag
    correction = shared * jnp.sum(scaled, axis=0) / (1 + shared * jnp.sum(1 / diag, 0))
    eps = jnp.sqrt(1 - alpha_bar) * (scaled - correction[None] / diag)
    return check_step(t, 1, sched.num_steps, "t", eps)


class AbstractGaussianFamily(eqx.Module):
    """A family of Gaussian clip distributions indexed by the condition vector."""

    @abc.abstractmethod
    def moments(
        self,
        condition: ConditionLike,
        start_frame: IntScalarLike,
        window: int,
    ) -> _Moments:
        """Returns the `(mean, variance, shared_variance)` of the clip of `window`
        frames starting at absolute frame `start_frame`, given `condition`. The
        all-zeros condition selects the unconditional distribution."""

    def sample(
        self,
        key: PRNGKeyArray,
        condition: ConditionLike,
        start_frame: IntScalarLike,
        window: int,
    ) -> Float[Array, "window *shape"]:
        """Draws one clean clip from the family."""
        mean, variance, shared = self.moments(condition, start_frame, window)
        zkey, ukey = jr.split(key)
        z = jr.normal(zkey, mean.shape, mean.dtype)
        u = jr.normal(ukey, mean.shape[1:], mean.dtype)
        return mean + jnp.sqrt(variance) * z + jnp.sqrt(shared) * u


def _null_condition(condition: Array) -> Array:
    return jnp.all(condition == 0)


class TabulatedGaussians(AbstractGaussianFamily):
    """A finite table of condition vectors, each with its own clip Gaussian.

    Conditions are matched exactly against `keys`; any other nonzero condition is an
    error.
    """

    keys: Float[Array, "keys dim"]
    means: Float[Array, "keys window *shape"]
    variances: Float[Array, "keys window *shape"]
    shared_variances: Float[Array, "keys *shape"]
    null_mean: Float[Array, "window *shape"]
    null_variance: Float[Array, "window *shape"]
    null_shared_variance: Float[Array, "*shape"]

    def __init__(
        self,
        keys: Float[ArrayLike, "keys dim"],
        means: Float[ArrayLike, "keys window *shape"],
        variances: Float[ArrayLike, "keys window *shape"],
        shared_variances: Optional[Float[ArrayLike, "keys *shape"]] = None,
        null_mean: Optional[Float[ArrayLike, "window *shape"]] = None,
        null_variance: Optional[Float[ArrayLike, "window *shape"]] = None,
        null_shared_variance: Optional[Float[ArrayLike, "*shape"]] = None,
    ):
        keys = jnp.asarray(keys)
        means = jnp.asarray(means)
        variances = jnp.broadcast_to(jnp.asarray(variances), means.shape)
        if keys.ndim != 2 or means.ndim < 2 or keys.shape[0] != means.shape[0]:
            raise ValueError(
                "Must have `keys` of shape `(K, dim)` and `means` of shape "
                f"`(K, window, ...)`, but got {keys.shape} and {means.shape}."
            )
        if shared_variances is None:
            shared_variances = jnp.zeros((means.shape[0], *means.shape[2:]))
        shared_variances = jnp.broadcast_to(
            jnp.asarray(shared_variances), (means.shape[0], *means.shape[2:])
        )
        # By default the unconditional distribution is the moment-matched mixture of
        # the conditional ones.
        if null_mean is None:
            null_mean = jnp.mean(means, axis=0)
        if null_variance is None:
            second_moment = jnp.mean(variances + means**2, axis=0)
            null_variance = second_moment - jnp.mean(means, axis=0) ** 2
        if null_shared_variance is None:
            null_shared_variance = jnp.mean(shared_variances, axis=0)
        self.keys = keys
        self.means = means
        self.variances = variances
        self.shared_variances = shared_variances
        self.null_mean = jnp.asarray(null_mean)
        self.null_variance = jnp.broadcast_to(null_variance, means.shape[1:])
        self.null_shared_variance = jnp.asarray(null_shared_variance)

    def __check_init__(self):
        if not is_traced(self.keys):
            if np.any(np.all(np.asarray(self.keys) == 0, axis=1)):
                raise ValueError(
                    "The all-zeros condition is reserved for the null condition and "
                    "cannot be a key of `TabulatedGaussians`."
                )
            if np.any(np.asarray(self.variances) < 0) or np.any(
                np.asarray(self.shared_variances) < 0
            ):
                raise ValueError("Variances must be nonnegative.")

    @property
    def frame_shape(self) -> tuple[int, ...]:
        return tuple(self.means.shape[2:])

    def moments(
        self,
        condition: ConditionLike,
        start_frame: IntScalarLike,
        window: int,
    ) -> _Moments:
        del start_frame
        if window != self.means.shape[1]:
            raise ValueError(
                f"These Gaussians describe clips of {self.means.shape[1]} frames, but "
                f"a clip of {window} frames was given."
            )
        condition = jnp.asarray(condition)
        if condition.shape != self.keys.shape[1:]:
            raise ValueError(
                f"Condition has shape {condition.shape}, expected "
                f"{self.keys.shape[1:]}."
            )
        is_null = _null_condition(condition)
        matches = jnp.all(self.keys == condition, axis=1)
        index = jnp.argmax(matches)
        index = error_if(
            index,
            jnp.logical_not(jnp.any(matches) | is_null),
            "Unknown condition: it matches none of the tabulated keys.",
        )
        mean = jnp.where(is_null, self.null_mean, self.means[index])
        variance = jnp.where(is_null, self.null_variance, self.variances[index])
        shared = jnp.where(
            is_null, self.null_shared_variance, self.shared_variances[index]
        )
        return mean, variance, shared


TabulatedGaussians.__init__.__doc__ = """**Arguments:**

- `keys`: the `K` condition vectors, of shape `(K, dim)`. None may be all-zeros.
- `means`: the clip means, of shape `(K, window, *frame_shape)`.
- `variances`: the per-element variances, broadcastable to `means`.
- `shared_variances`: the variance of the per-pixel component shared by all frames of
    a clip, of shape `(K, *frame_shape)`. Defaults to zero.
- `null_mean`, `null_variance`, `null_shared_variance`: the unconditional Gaussian,
    selected by the all-zeros condition. Default to the moment-matched mixture of the
    `K` conditional Gaussians, with equal weights.
"""


class SceneGaussians(AbstractGaussianFamily):
    """Gaussians centred on the rendered synthetic scene encoded by the condition.

    The mean of frame `j` of the sequence is the blob of
    [`codenoise.render_condition_frames`][] at absolute frame `j`. Because rendering
    accepts any vector, interpolated conditions give interpolated scenes.
    """

    frame_shape: tuple[int, int] = eqx.field(static=True)
    variance: RealScalarLike = 0.01
    shared_variance: RealScalarLike = 0.0
    null_variance: RealScalarLike = 1.0

    def __check_init__(self):
        for name in ("variance", "shared_variance", "null_variance"):
            value = getattr(self, name)
            if not is_traced(value) and np.any(np.asarray(value) < 0):
                raise ValueError(f"`{name}` must be nonnegative.")

    def moments(
        self,
        condition: ConditionLike,
        start_frame: IntScalarLike,
        window: int,
    ) -> _Moments:
        condition = jnp.asarray(condition)
        frames = jnp.asarray(start_frame) + jnp.arange(window)
        mean = render_condition_frames(condition, frames, self.frame_shape)
        is_null = _null_condition(condition)
        shape = (window, *self.frame_shape)
        variance = jnp.where(
            is_null,
            jnp.broadcast_to(self.null_variance, shape),
            jnp.broadcast_to(self.variance, shape),
        )
        shared = jnp.broadcast_to(
            jnp.where(is_null, 0.0, self.shared_variance), self.frame_shape
        )
        return jnp.where(is_null, 0.0, mean), variance, shared


class AnalyticGaussianDenoiser(AbstractDenoiser):
    """The exact noise predictor for data drawn from a Gaussian family. See
    [`codenoise.analytic_predict`][].

    This is the verification oracle of the library: with it, co-denoising runs can be
    compared against closed-form answers. Clip identifiers are ignored.

    **Attributes:**

    - `family`: a [`codenoise.TabulatedGaussians`][] or [`codenoise.SceneGaussians`][].
    - `schedule`: the [`codenoise.NoiseSchedule`][] the data is diffused with.
    """

    family: AbstractGaussianFamily
    schedule: NoiseSchedule

    @property
    def frame_shape(self) -> tuple[int, ...]:
        return tuple(self.family.frame_shape)  # pyright: ignore

    def __call__(
        self,
        clip: Clip,
        t: IntScalarLike,
        condition: ConditionLike,
        identifier: Optional[IdentifierLike] = None,
    ) -> Float[Array, "window *shape"]:
        del identifier
        mean, variance, shared = self.family.moments(
            condition, clip.start_frame, clip.window
        )
        if mean.shape != clip.frames.shape:
            raise ValueError(
                f"The Gaussian family describes clips of shape {mean.shape}, but got a "
                f"clip of shape {clip.frames.shape}."
            )
        return analytic_predict(
            clip.frames, t, mean, variance, self.schedule, shared_variance=shared
        )
