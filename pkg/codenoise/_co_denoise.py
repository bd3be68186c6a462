import logging
from collections.abc import Callable, Sequence
from typing import Literal, Optional, Union

import equinox as eqx
import jax.numpy as jnp
import jax.random as jr
from jaxtyping import Array, ArrayLike, Float
from joblib import delayed, Parallel

from ._conditions import check_conditions, ClipIdentifier, identifier_guided_noise
from ._denoiser.base import AbstractDenoiser
from ._misc import is_traced
from ._progress_meter import AbstractProgressMeter, NoProgressMeter
from ._schedule import (
    cfg_combine,
    ddim_invert_step,
    ddim_step,
    ddim_timesteps,
    ddpm_posterior_mean,
    GuidanceConfig,
    NoiseSchedule,
)
from ._sequence import Clip, LongSequence
from ._solution import NumericalError, RESULTS
from ._windowing import ClipLayout, merge_weighted, split, uniform_weights, WeightScheme


logger = logging.getLogger(__name__)

Denoisers = Union[AbstractDenoiser, Sequence[AbstractDenoiser]]


def _guided_noise(denoiser, clip, t, condition, identifier, cfg):
    if identifier is not None:
        return identifier_guided_noise(
            denoiser,
            clip,
            t,
            condition,
            identifier,
            cfg.scale,
            null_condition=cfg.null_condition,
        )
    eps_cond = denoiser(clip, t, condition)
    if not is_traced(cfg.scale) and cfg.scale == 0:
        return eps_cond
    eps_uncond = denoiser(clip, t, cfg.null_like(condition))
    return cfg_combine(eps_cond, eps_uncond, cfg)


@eqx.filter_jit
def _ddim_clip(
    denoiser,
    frames,
    clip_index,
    start_frame,
    t,
    t_prev,
    condition,
    identifier,
    cfg,
    sched,
):
    clip = Clip(frames, clip_index, start_frame, t)
    eps = _guided_noise(denoiser, clip, t, condition, identifier, cfg)
    return ddim_step(frames, eps, t, t_prev, sched)


@eqx.filter_jit
def _ddpm_clip(
    denoiser,
    frames,
    clip_index,
    start_frame,
    t,
    noise,
    condition,
    identifier,
    cfg,
    sched,
):
    clip = Clip(frames, clip_index, start_frame, t)
    eps = _guided_noise(denoiser, clip, t, condition, identifier, cfg)
    mean = ddpm_posterior_mean(frames, eps, t, sched)
    # β̃_1 = 0, so the last step adds no noise.
    return mean + jnp.sqrt(sched.posterior_beta(t)) * noise


@eqx.filter_jit
def _invert_clip(
    denoiser, frames, clip_index, start_frame, t, t_next, condition, identifier, sched
):
    # The noise is predicted at the destination rung, since the denoiser is not
    # defined at `t = 0`.
    clip = Clip(frames, clip_index, start_frame, t_next)
    eps = _guided_noise(denoiser, clip, t_next, condition, identifier, GuidanceConfig())
    return ddim_invert_step(frames, eps, t, t_next, sched)


def _per_clip_denoisers(
    denoiser: Denoisers, layout: ClipLayout
) -> list[AbstractDenoiser]:
    if isinstance(denoiser, AbstractDenoiser):
        return [denoiser] * layout.clip_count
    denoisers = list(denoiser)
    if len(denoisers) != layout.clip_count:
        raise ValueError(
            f"Got {len(denoisers)} denoisers for {layout.clip_count} clips. Pass "
            "either a single denoiser or one per clip."
        )
    return denoisers


def _identifier_list(
    identifiers: Optional[ClipIdentifier], layout: ClipLayout
) -> list[Optional[Array]]:
    if identifiers is None:
        return [None] * layout.clip_count
    if identifiers.num_clips != layout.clip_count:
        raise ValueError(
            f"Got {identifiers.num_clips} identifiers for {layout.clip_count} clips."
        )
    return [identifiers[i] for i in range(layout.clip_count)]


def _frame_shape(denoisers: list[AbstractDenoiser]) -> tuple[int, ...]:
    frame_shape = getattr(denoisers[0], "frame_shape", None)
    if frame_shape is None:
        raise ValueError(
            f"Cannot infer the frame shape from {type(denoisers[0]).__name__}; pass "
            "`frame_shape` or `init_noise`."
        )
    return tuple(frame_shape)


def _check_finite(
    v: LongSequence, throw: bool, diagnostic: dict
) -> LongSequence:
    if bool(jnp.all(jnp.isfinite(v.frames))):
        return v
    logger.error("Non-finite values at %s.", diagnostic)
    if throw:
        raise NumericalError(RESULTS.nonfinite_sample, diagnostic)
    return v


def smooth_adjacent_frames(
    v: LongSequence, lam: float
) -> LongSequence:
    """One gradient step on the adjacent-frame penalty `P(v) = Σ_j ‖v_j - v_{j+1}‖²`:
    `v_j ← v_j - λ ∂P/∂v_j`.

    Since `P` is translation-invariant, the mean over frames is preserved.

    **Arguments:**

    - `v`: the sequence.
    - `lam`: the step size `λ ∈ [0, 1]`.

    **Returns:**

    The smoothed [`codenoise.LongSequence`][].
    """
    if not 0 <= lam <= 1:
        raise ValueError(f"`lam` must lie in [0, 1], but got {lam}.")
    if lam == 0 or v.num_frames < 2:
        return v
    frames = v.frames
    forward = frames[1:] - frames[:-1]
    grad = jnp.zeros_like(frames)
    grad = grad.at[:-1].add(-2 * forward)
    grad = grad.at[1:].add(2 * forward)
    return LongSequence(frames - lam * grad, frame_rate=v.frame_rate)


def _run_rung(parallel, step: Callable, clips: list[Clip], *per_clip) -> list[Clip]:
    # Each task only touches its own clip. Results come back in clip order whatever
    # order they finish in.
    outputs = parallel(
        delayed(step)(clip, *args) for clip, *args in zip(clips, *per_clip)
    )
    return [
        Clip(out, clip.clip_index, clip.start_frame, clip.time_step)
        for clip, out in zip(clips, outputs)
    ]


def sample_long(
    denoiser: Denoisers,
    layout: ClipLayout,
    conditions: Sequence[ArrayLike],
    sched: NoiseSchedule,
    cfg: GuidanceConfig = GuidanceConfig(scale=13.5),
    steps: int = 50,
    seed: int = 0,
    *,
    identifiers: Optional[ClipIdentifier] = None,
    weights: Optional[WeightScheme] = None,
    sampler: Literal["ddim", "ddpm"] = "ddim",
    smoothing: float = 0.0,
    init_noise: Optional[LongSequence] = None,
    frame_shape: Optional[tuple[int, ...]] = None,
    callback: Optional[Callable[[int, LongSequence], None]] = None,
    workers: int = 1,
    progress_meter: AbstractProgressMeter = NoProgressMeter(),
    throw: bool = True,
) -> LongSequence:
    """Generates a long sequence by temporal co-denoising.

    At every rung `t → t'` of the sampler the current long sequence is split into
    clips, each clip takes one guided denoising step on its own (concurrently, over
    `workers` threads), and the clips are merged back with
    [`codenoise.merge_weighted`][]. All clips finish a rung before the merge.

    The output only depends on the arguments, never on `workers`.

    **Arguments:**

    - `denoiser`: a [`codenoise.AbstractDenoiser`][], or a sequence of `N` of them, one
        per clip.
    - `layout`: the [`codenoise.ClipLayout`][].
    - `conditions`: one condition per clip.
    - `sched`: the noise schedule.
    - `cfg`: the classifier-free guidance settings.
    - `steps`: the number of sampler steps; see [`codenoise.ddim_timesteps`][].
    - `seed`: seeds the initial noise, drawn for the whole long sequence at once so that
        overlapping clips share it.

    **Other arguments:**

    - `identifiers`: clip identifiers. If passed, guidance uses
        [`codenoise.identifier_guided_noise`][].
    - `weights`: the merge weights. Defaults to [`codenoise.uniform_weights`][].
    - `sampler`: `"ddim"` (deterministic) or `"ddpm"` (ancestral; requires
        `steps == T`, and draws the per-rung noise from `seed` as well).
    - `smoothing`: if nonzero, [`codenoise.smooth_adjacent_frames`][] is applied with
        this step size after every merge.
    - `init_noise`: start from this sequence instead of drawing noise, e.g. the output
        of [`codenoise.invert_long`][].
    - `frame_shape`: the shape of a frame. Inferred from the denoiser or `init_noise`
        if not given.
    - `callback`: called as `callback(t_prev, v)` after every merge, with the merged
        sequence at rung `t_prev`.
    - `workers`: the number of threads used to denoise clips.
    - `progress_meter`: a progress meter, stepped once per rung.
    - `throw`: whether to raise [`codenoise.NumericalError`][] if the sample becomes
        non-finite.

    **Returns:**

    The sample `v_0`, as a [`codenoise.LongSequence`][].
    """
    denoisers = _per_clip_denoisers(denoiser, layout)
    condition_table = check_conditions(conditions, layout)
    identifier_list = _identifier_list(identifiers, layout)
    if weights is None:
        weights = uniform_weights(layout)
    if workers < 1:
        raise ValueError(f"`workers` must be at least 1, but got {workers}.")
    if sampler == "ddim":
        rungs = ddim_timesteps(steps, sched) + (0,)
    elif sampler == "ddpm":
        if steps != sched.num_steps:
            raise ValueError(
                f"The DDPM sampler visits every step, so needs `steps = "
                f"{sched.num_steps}`, but got {steps}."
            )
        rungs = tuple(range(sched.num_steps, -1, -1))
    else:
        raise ValueError(f"`sampler` must be 'ddim' or 'ddpm', but got {sampler!r}.")

    key = jr.PRNGKey(seed)
    if init_noise is None:
        if frame_shape is None:
            frame_shape = _frame_shape(denoisers)
        v = LongSequence(jr.normal(key, (layout.total_frames, *frame_shape)))
    else:
        v = init_noise
    if v.num_frames != layout.total_frames:
        raise ValueError(
            f"The initial noise has {v.num_frames} frames but the layout expects "
            f"{layout.total_frames}."
        )
    logger.info(
        "Sampling %d frames as %d clips (M=%d, S=%d) over %d rungs.",
        layout.total_frames,
        layout.clip_count,
        layout.window,
        layout.stride,
        len(rungs) - 1,
    )

    meter_state = progress_meter.init()
    with Parallel(n_jobs=workers, backend="threading") as parallel:
        for n, (t, t_prev) in enumerate(zip(rungs[:-1], rungs[1:])):
            clips = split(v, layout, t)
            t_arr = jnp.asarray(t)
            if sampler == "ddim":
                t_prev_arr = jnp.asarray(t_prev)

                def step(clip, d, c, e):
                    return _ddim_clip(
                        d,
                        clip.frames,
                        jnp.asarray(clip.clip_index),
                        jnp.asarray(clip.start_frame),
                        t_arr,
                        t_prev_arr,
                        c,
                        e,
                        cfg,
                        sched,
                    )

                clips = _run_rung(
                    parallel, step, clips, denoisers, condition_table, identifier_list
                )
            else:
                noise = jr.normal(jr.fold_in(key, t), v.frames.shape, v.frames.dtype)
                noise_clips = split(LongSequence(noise), layout)

                def step(clip, d, c, e, z):
                    return _ddpm_clip(
                        d,
                        clip.frames,
                        jnp.asarray(clip.clip_index),
                        jnp.asarray(clip.start_frame),
                        t_arr,
                        z.frames,
                        c,
                        e,
                        cfg,
                        sched,
                    )

                clips = _run_rung(
                    parallel,
                    step,
                    clips,
                    denoisers,
                    condition_table,
                    identifier_list,
                    noise_clips,
                )
            v = merge_weighted(clips, layout, weights)
            if smoothing:
                v = smooth_adjacent_frames(v, smoothing)
            v = _check_finite(v, throw, dict(stage="sample", t=t, t_prev=t_prev))
            if callback is not None:
                callback(t_prev, v)
            meter_state = progress_meter.step(meter_state, (n + 1) / (len(rungs) - 1))
    progress_meter.close(meter_state)
    return LongSequence(v.frames, frame_rate=v.frame_rate)


def sample_isolated(
    denoiser: Denoisers,
    layout: ClipLayout,
    conditions: Sequence[ArrayLike],
    sched: NoiseSchedule,
    cfg: GuidanceConfig = GuidanceConfig(scale=13.5),
    steps: int = 50,
    seed: int = 0,
    *,
    identifiers: Optional[ClipIdentifier] = None,
    frame_shape: Optional[tuple[int, ...]] = None,
    workers: int = 1,
    progress_meter: AbstractProgressMeter = NoProgressMeter(),
) -> LongSequence:
    """The isolated-denoising baseline: `N` independent short-clip DDIM samplers, one
    per disjoint clip, each started from its own part of the same initial noise as
    [`codenoise.sample_long`][] would draw. There is no merging at all.

    Requires `layout.stride == layout.window`. Arguments are as for
    [`codenoise.sample_long`][].
    """
    if layout.stride != layout.window:
        raise ValueError(
            "Isolated denoising needs disjoint clips (`stride == window`), but got "
            f"`stride={layout.stride}` and `window={layout.window}`."
        )
    denoisers = _per_clip_denoisers(denoiser, layout)
    condition_table = check_conditions(conditions, layout)
    identifier_list = _identifier_list(identifiers, layout)
    if frame_shape is None:
        frame_shape = _frame_shape(denoisers)
    noise = jr.normal(jr.PRNGKey(seed), (layout.total_frames, *frame_shape))
    rungs = ddim_timesteps(steps, sched) + (0,)

    def ladder(clip, d, c, e):
        frames = clip.frames
        for t, t_prev in zip(rungs[:-1], rungs[1:]):
            frames = _ddim_clip(
                d,
                frames,
                jnp.asarray(clip.clip_index),
                jnp.asarray(clip.start_frame),
                jnp.asarray(t),
                jnp.asarray(t_prev),
                c,
                e,
                cfg,
                sched,
            )
        return frames

    logger.info("Sampling %d disjoint clips independently.", layout.clip_count)
    meter_state = progress_meter.init()
    clips = split(LongSequence(noise), layout)
    with Parallel(n_jobs=workers, backend="threading") as parallel:
        outputs = parallel(
            delayed(ladder)(clip, d, c, e)
            for clip, d, c, e in zip(clips, denoisers, condition_table, identifier_list)
        )
    meter_state = progress_meter.step(meter_state, 1.0)
    progress_meter.close(meter_state)
    return LongSequence(jnp.concatenate(outputs))


def invert_long(
    denoiser: Denoisers,
    video: LongSequence,
    layout: ClipLayout,
    conditions: Sequence[ArrayLike],
    sched: NoiseSchedule,
    steps: int = 50,
    *,
    identifiers: Optional[ClipIdentifier] = None,
    weights: Optional[WeightScheme] = None,
    workers: int = 1,
    progress_meter: AbstractProgressMeter = NoProgressMeter(),
    throw: bool = True,
) -> LongSequence:
    """DDIM inversion of a long sequence by temporal co-denoising.

    Walks the rungs of [`codenoise.ddim_timesteps`][] upwards from `t = 0`; at every
    rung each clip takes one [`codenoise.ddim_invert_step`][] and the clips are merged.
    Noise predictions are unguided.

    **Returns:**

    The approximate initial noise `v_T`, as a [`codenoise.LongSequence`][].
    """
    denoisers = _per_clip_denoisers(denoiser, layout)
    condition_table = check_conditions(conditions, layout)
    identifier_list = _identifier_list(identifiers, layout)
    if weights is None:
        weights = uniform_weights(layout)
    if workers < 1:
        raise ValueError(f"`workers` must be at least 1, but got {workers}.")
    if video.num_frames != layout.total_frames:
        raise ValueError(
            f"The video has {video.num_frames} frames but the layout expects "
            f"{layout.total_frames}."
        )
    rungs = (0,) + tuple(reversed(ddim_timesteps(steps, sched)))
    logger.info(
        "Inverting %d frames as %d clips over %d rungs.",
        layout.total_frames,
        layout.clip_count,
        len(rungs) - 1,
    )
    v = video
    meter_state = progress_meter.init()
    with Parallel(n_jobs=workers, backend="threading") as parallel:
        for n, (t, t_next) in enumerate(zip(rungs[:-1], rungs[1:])):
            clips = split(v, layout, t)
            t_arr = jnp.asarray(t)
            t_next_arr = jnp.asarray(t_next)

            def step(clip, d, c, e):
                return _invert_clip(
                    d,
                    clip.frames,
                    jnp.asarray(clip.clip_index),
                    jnp.asarray(clip.start_frame),
                    t_arr,
                    t_next_arr,
                    c,
                    e,
                    sched,
                )

            clips = _run_rung(
                parallel, step, clips, denoisers, condition_table, identifier_list
            )
            v = merge_weighted(clips, layout, weights)
            v = _check_finite(v, throw, dict(stage="invert", t=t, t_next=t_next))
            meter_state = progress_meter.step(meter_state, (n + 1) / (len(rungs) - 1))
    progress_meter.close(meter_state)
    return LongSequence(v.frames, frame_rate=video.frame_rate)


def edit_long(
    denoiser: Denoisers,
    video: LongSequence,
    layout: ClipLayout,
    old_conditions: Sequence[ArrayLike],
    new_conditions: Sequence[ArrayLike],
    sched: NoiseSchedule,
    cfg: GuidanceConfig = GuidanceConfig(scale=13.5),
    steps: int = 50,
    *,
    identifiers: Optional[ClipIdentifier] = None,
    weights: Optional[WeightScheme] = None,
    smoothing: float = 0.0,
    workers: int = 1,
    progress_meter: AbstractProgressMeter = NoProgressMeter(),
    throw: bool = True,
) -> LongSequence:
    """Edits a long sequence: inverts it under `old_conditions` with
    [`codenoise.invert_long`][], then samples from the recovered noise under
    `new_conditions` with [`codenoise.sample_long`][]."""
    noise = invert_long(
        denoiser,
        video,
        layout,
        old_conditions,
        sched,
        steps,
        identifiers=identifiers,
        weights=weights,
        workers=workers,
        throw=throw,
    )
    return sample_long(
        denoiser,
        layout,
        new_conditions,
        sched,
        cfg,
        steps,
        identifiers=identifiers,
        weights=weights,
        smoothing=smoothing,
        init_noise=noise,
        workers=workers,
        progress_meter=progress_meter,
        throw=throw,
    )


def trajectory_energy(
    v: LongSequence, mean: Float[ArrayLike, "frames *shape"], alpha_bar: ArrayLike
) -> Float[Array, ""]:
    """`‖v_t - √ᾱ_t μ‖²`, averaged over elements. Used to check that a sampler removes
    noise monotonically."""
    diff = v.frames - jnp.sqrt(alpha_bar) * jnp.asarray(mean)
    return jnp.mean(jnp.square(diff))

