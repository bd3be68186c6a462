import logging
import math
from collections.abc import Sequence
from typing import Any, Optional

import equinox as eqx
import jax
import jax.numpy as jnp
import jax.random as jr
import numpy as np
import optax
from jaxtyping import Array, ArrayLike, Float, PRNGKeyArray

from .._conditions import check_conditions, ClipIdentifier
from .._progress_meter import AbstractProgressMeter, NoProgressMeter
from .._schedule import forward_diffuse, NoiseSchedule
from .._sequence import Clip, LongSequence
from .._solution import NumericalError, RESULTS
from .._windowing import ClipLayout, split
from .learned import TinyLearnedDenoiser


logger = logging.getLogger(__name__)


class OneShotSolution(eqx.Module):
    """The output of [`codenoise.train_one_shot`][].

    **Attributes:**

    - `denoiser`: the trained [`codenoise.TinyLearnedDenoiser`][].
    - `identifiers`: the trained [`codenoise.ClipIdentifier`][]s, or `None` if training
        was without identifiers.
    - `losses`: the mean training loss of every completed epoch.
    - `result`: a [`codenoise.RESULTS`][] saying whether training succeeded.
    - `stats`: statistics about the run: the number of optimiser steps, the effective
        learning rate, and the convergence epoch (or `None`).
    """

    denoiser: TinyLearnedDenoiser
    identifiers: Optional[ClipIdentifier]
    losses: Float[Array, " epochs"]
    result: RESULTS
    stats: dict[str, Any]


def convergence_epoch(
    losses: Float[ArrayLike, " epochs"], window: int = 10, rtol: float = 0.05
) -> Optional[int]:
    """The first epoch after which the `window`-epoch moving average of the loss stays
    within `rtol` (relative) of its final value, or `None` if there are fewer than
    `window` epochs.

    Epochs are counted from one, so the returned value is the number of epochs needed.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size < window:
        return None
    moving = np.convolve(losses, np.ones(window) / window, mode="valid")
    final = moving[-1]
    outside = np.abs(moving - final) > rtol * abs(final)
    if not np.any(outside):
        return window
    return int(np.nonzero(outside)[0][-1]) + 1 + window


def has_converged(
    losses: Float[ArrayLike, " epochs"], window: int = 10, rtol: float = 0.05
) -> bool:
    """Whether training has plateaued: the `window`-epoch moving average of the loss has
    changed by at most `rtol` (relative) over the last `window` epochs."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size < 2 * window or not np.all(np.isfinite(losses)):
        return False
    moving = np.convolve(losses, np.ones(window) / window, mode="valid")
    return bool(abs(moving[-1] - moving[-1 - window]) <= rtol * abs(moving[-1]))


def _sample_batch(key, num_clips, num_steps, batch, clip_shape, drop_probability):
    ikey, tkey, ekey, dkey = jr.split(key, 4)
    index = jr.randint(ikey, (batch,), 0, num_clips)
    t = jr.randint(tkey, (batch,), 1, num_steps + 1)
    eps = jr.normal(ekey, (batch, *clip_shape))
    drop = jr.bernoulli(dkey, drop_probability, (batch,))
    return index, t, eps, drop


def _loss(params, sched, clips, conditions, index, t, eps, drop):
    denoiser, identifiers = params
    x0 = clips[index]
    x_t = jax.vmap(forward_diffuse, in_axes=(0, 0, 0, None))(x0, t, eps, sched)
    condition = jnp.where(drop[:, None], 0.0, conditions[index])
    if identifiers is None:
        identifier = None
    else:
        identifier = jnp.where(drop[:, None], 0.0, identifiers.vectors[index])

    def predict(x_t_i, t_i, c_i, e_i):
        return denoiser(Clip(x_t_i), t_i, c_i, e_i)

    pred = jax.vmap(predict)(x_t, t, condition, identifier)
    sq_err = jnp.square(eps - pred)
    return jnp.mean(jnp.sum(sq_err, axis=tuple(range(1, sq_err.ndim))))


def train_one_shot(
    denoiser: TinyLearnedDenoiser,
    video: LongSequence,
    layout: ClipLayout,
    conditions: Sequence[ArrayLike],
    identifiers: Optional[ClipIdentifier],
    sched: NoiseSchedule,
    *,
    epochs: int = 100,
    lr: float = 3e-5,
    batch: int = 5,
    scale_lr: bool = True,
    key: PRNGKeyArray,
    progress_meter: AbstractProgressMeter = NoProgressMeter(),
    throw: bool = True,
) -> OneShotSolution:
    """One-shot tuning of a denoiser (and clip identifiers) on a single long video.

    Every optimiser step draws `batch` triples `(clip i, step t, noise ε)` uniformly,
    diffuses the clean clip with [`codenoise.forward_diffuse`][], and regresses the
    noise. With probability `identifiers.drop_probability` a sample's condition and
    identifier are both replaced by `∅`, so that the model also learns the
    unconditional prediction used for guidance.

    Optimisation is plain SGD via `optax.sgd`. An epoch is `ceil(N / batch)` steps.

    **Arguments:**

    - `denoiser`: the initial [`codenoise.TinyLearnedDenoiser`][].
    - `video`: the video to tune on.
    - `layout`: the [`codenoise.ClipLayout`][] cutting `video` into clips.
    - `conditions`: one condition vector (or [`codenoise.ConditionEmbedding`][]) per
        clip.
    - `identifiers`: initial [`codenoise.ClipIdentifier`][]s, one per clip, or `None`
        to train without them (in which case conditions are still dropped with
        probability `0.1`).
    - `sched`: the noise schedule.
    - `epochs`: the number of epochs.
    - `lr`: the base learning rate.
    - `batch`: the batch size.
    - `scale_lr`: if `True`, the learning rate used is `lr * batch`.
    - `key`: a JAX random key.
    - `progress_meter`: a progress meter, stepped once per epoch.
    - `throw`: whether to raise a [`codenoise.NumericalError`][] if the loss becomes
        non-finite. If `False`, training stops early and the failure is reported in
        `result`.

    **Returns:**

    A [`codenoise.OneShotSolution`][].
    """
    if epochs < 0 or batch < 1 or lr < 0:
        raise ValueError(
            "Must have `epochs >= 0`, `batch >= 1` and `lr >= 0`, but got "
            f"`epochs={epochs}`, `batch={batch}`, `lr={lr}`."
        )
    if denoiser.num_steps != sched.num_steps:
        raise ValueError(
            f"The denoiser was built for {denoiser.num_steps} steps but the schedule "
            f"has {sched.num_steps}."
        )
    condition_table = check_conditions(conditions, layout)
    clips = jnp.stack([clip.frames for clip in split(video, layout)])
    if identifiers is not None:
        if identifiers.num_clips != layout.clip_count:
            raise ValueError(
                f"Got {identifiers.num_clips} identifiers for {layout.clip_count} "
                "clips."
            )
        if identifiers.dim != denoiser.identifier_dim:
            raise ValueError(
                f"Identifiers have dimension {identifiers.dim} but the denoiser "
                f"expects {denoiser.identifier_dim}."
            )
        drop_probability = identifiers.drop_probability
    else:
        if denoiser.identifier_dim is not None:
            raise ValueError("The denoiser expects clip identifiers, but got `None`.")
        drop_probability = 0.1

    effective_lr = lr * batch if scale_lr else lr
    optim = optax.sgd(effective_lr)
    params = (denoiser, identifiers)
    opt_state = optim.init(eqx.filter(params, eqx.is_inexact_array))
    steps_per_epoch = math.ceil(layout.clip_count / batch)
    clip_shape = clips.shape[1:]

    @eqx.filter_jit
    def make_step(params, opt_state, step_key):
        batch_data = _sample_batch(
            step_key,
            layout.clip_count,
            sched.num_steps,
            batch,
            clip_shape,
            drop_probability,
        )
        loss, grads = eqx.filter_value_and_grad(_loss)(
            params, sched, clips, condition_table, *batch_data
        )
        updates, opt_state = optim.update(grads, opt_state)
        params = eqx.apply_updates(params, updates)
        return params, opt_state, loss

    losses = []
    result = RESULTS.successful
    meter_state = progress_meter.init()
    for epoch in range(epochs):
        epoch_key = jr.fold_in(key, epoch)
        epoch_losses = []
        for step in range(steps_per_epoch):
            params, opt_state, loss = make_step(
                params, opt_state, jr.fold_in(epoch_key, step)
            )
            epoch_losses.append(loss)
        epoch_loss = float(jnp.mean(jnp.stack(epoch_losses)))
        losses.append(epoch_loss)
        logger.debug("epoch %d: loss %.6g", epoch + 1, epoch_loss)
        meter_state = progress_meter.step(meter_state, (epoch + 1) / epochs)
        if not math.isfinite(epoch_loss):
            result = RESULTS.nonfinite_loss
            diagnostic = dict(
                epoch=epoch + 1,
                steps=(epoch + 1) * steps_per_epoch,
                recent_losses=losses[-10:],
                learning_rate=effective_lr,
            )
            logger.error("Training diverged at epoch %d.", epoch + 1)
            if throw:
                progress_meter.close(meter_state)
                raise NumericalError(result, diagnostic)
            break
    progress_meter.close(meter_state)

    denoiser, identifiers = params
    converged_at = convergence_epoch(losses)
    stats = dict(
        num_steps=len(losses) * steps_per_epoch,
        learning_rate=effective_lr,
        convergence_epoch=converged_at,
    )
    if losses:
        logger.info(
            "Trained for %d epochs; final loss %.6g; converged at epoch %s.",
            len(losses),
            losses[-1],
            converged_at,
        )
    return OneShotSolution(
        denoiser=denoiser,
        identifiers=identifiers,
        losses=jnp.asarray(losses),
        result=result,
        stats=stats,
    )
