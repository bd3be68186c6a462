from typing import Optional

import equinox as eqx
import jax.numpy as jnp
import jax.random as jr
import numpy as np
from jaxtyping import Array, ArrayLike, Float, PRNGKeyArray

from ._custom_types import IntScalarLike, RealScalarLike
from ._misc import check_same_shape, check_step, error_if, is_traced


class NoiseSchedule(eqx.Module):
    """The β/α/ᾱ tables of a discrete diffusion process with `T` steps.

    Step indices run from `1` to `T`. Every table is stored for `t = 1, ..., T` at
    position `t - 1`; [`codenoise.NoiseSchedule.alpha_bar`][] additionally accepts
    `t = 0`, where `ᾱ_0 = 1`.

    Tables are stored in whatever floating point precision JAX is configured for, so
    enable `jax_enable_x64` to get double precision.

    **Attributes:**

    - `betas`: `β_t`.
    - `alphas`: `α_t = 1 - β_t`.
    - `alpha_bars`: `ᾱ_t = α_1 ⋯ α_t`.
    - `posterior_betas`: `β̃_t = (1 - ᾱ_{t-1}) / (1 - ᾱ_t) β_t`.
    """

    betas: Float[Array, " T"] = eqx.field(converter=jnp.asarray)
    alphas: Float[Array, " T"] = eqx.field(converter=jnp.asarray)
    alpha_bars: Float[Array, " T"] = eqx.field(converter=jnp.asarray)
    posterior_betas: Float[Array, " T"] = eqx.field(converter=jnp.asarray)

    def __check_init__(self):
        shapes = {
            jnp.shape(x)
            for x in (self.betas, self.alphas, self.alpha_bars, self.posterior_betas)
        }
        if len(shapes) != 1 or jnp.ndim(self.betas) != 1:
            raise ValueError(
                "The tables of a `NoiseSchedule` must be vectors of the same length, "
                f"but got shapes {shapes}."
            )
        if jnp.size(self.betas) == 0:
            raise ValueError("`NoiseSchedule` must have at least one step.")
        if not is_traced(self.betas):
            betas = np.asarray(self.betas)
            if np.any(betas <= 0) or np.any(betas >= 1):
                raise ValueError("`NoiseSchedule.betas` must lie in the open (0, 1).")

    @property
    def num_steps(self) -> int:
        return self.betas.shape[0]

    def alpha_bar(self, t: IntScalarLike) -> Float[Array, ""]:
        """`ᾱ_t` for `0 <= t <= T`, with `ᾱ_0 = 1`."""
        one = jnp.ones((1,), self.alpha_bars.dtype)
        table = jnp.concatenate([one, self.alpha_bars])
        return table[t]

    def alpha(self, t: IntScalarLike) -> Float[Array, ""]:
        return self.alphas[jnp.asarray(t) - 1]

    def posterior_beta(self, t: IntScalarLike) -> Float[Array, ""]:
        return self.posterior_betas[jnp.asarray(t) - 1]


def _tables_from_betas(betas: np.ndarray) -> dict[str, np.ndarray]:
    betas = np.asarray(betas, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    alpha_bars_prev = np.concatenate([np.ones(1), alpha_bars[:-1]])
    posterior_betas = (1.0 - alpha_bars_prev) / (1.0 - alpha_bars) * betas
    return dict(
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        posterior_betas=posterior_betas,
    )


def make_linear_schedule(
    num_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02
) -> NoiseSchedule:
    """Builds a schedule with `β_t` linearly spaced from `beta_start` to `beta_end`.

    **Arguments:**

    - `num_steps`: the number of diffusion steps `T`.
    - `beta_start`: `β_1`.
    - `beta_end`: `β_T`.

    **Returns:**

    A [`codenoise.NoiseSchedule`][]. The tables are computed in float64 with NumPy.
    """
    if num_steps < 1:
        raise ValueError(f"`num_steps` must be at least 1, but got {num_steps}.")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(
            "Must have `0 < beta_start <= beta_end < 1`, but got "
            f"`beta_start={beta_start}` and `beta_end={beta_end}`."
        )
    betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
    return NoiseSchedule(**_tables_from_betas(betas))


class GuidanceConfig(eqx.Module):
    """Classifier-free guidance settings.

    **Attributes:**

    - `scale`: the guidance scale `w >= 0`. The guided prediction is
        `(1 + w) ε(c) - w ε(∅)`.
    - `null_condition`: the condition vector `∅` used for the unconditional branch.
        `None` means the all-zeros vector of the right dimension.
    """

    scale: RealScalarLike = 0.0
    null_condition: Optional[Float[Array, " dim"]] = None

    def __check_init__(self):
        if not is_traced(self.scale) and self.scale < 0:
            raise ValueError(
                f"`GuidanceConfig.scale` must be nonnegative, but got {self.scale}."
            )

    def null_like(self, condition: ArrayLike) -> Float[Array, " dim"]:
        if self.null_condition is None:
            return jnp.zeros_like(jnp.asarray(condition))
        check_same_shape(self.null_condition, condition, "null_condition", "condition")
        return jnp.asarray(self.null_condition)


def forward_diffuse(
    x0: ArrayLike, t: IntScalarLike, eps: ArrayLike, sched: NoiseSchedule
) -> Array:
    """Samples `x_t ~ q(x_t | x_0)` given the noise: `√ᾱ_t x_0 + √(1 - ᾱ_t) ε`."""
    check_same_shape(x0, eps, "x0", "eps")
    alpha_bar = sched.alpha_bar(t)
    out = jnp.sqrt(alpha_bar) * x0 + jnp.sqrt(1 - alpha_bar) * eps
    return check_step(t, 1, sched.num_steps, "t", out)


def ddpm_posterior_mean(
    x_t: ArrayLike, eps: ArrayLike, t: IntScalarLike, sched: NoiseSchedule
) -> Array:
    """The mean of `p(x_{t-1} | x_t)` under the ε-parameterisation."""
    check_same_shape(x_t, eps, "x_t", "eps")
    alpha = sched.alpha(t)
    alpha_bar = sched.alpha_bar(t)
    coeff = (1 - alpha) / (jnp.sqrt(1 - alpha_bar) * jnp.sqrt(alpha))
    out = x_t / jnp.sqrt(alpha) - coeff * eps
    return check_step(t, 1, sched.num_steps, "t", out)


def ddpm_step(
    x_t: ArrayLike,
    eps_hat: ArrayLike,
    t: IntScalarLike,
    sched: NoiseSchedule,
    key: PRNGKeyArray,
) -> Array:
    """One ancestral sampling step `x_t -> x_{t-1}`, adding `√β̃_t` Gaussian noise.

    Note that `β̃_1 = 0`, so the final step is deterministic.
    """
    mean = ddpm_posterior_mean(x_t, eps_hat, t, sched)
    noise = jr.normal(key, mean.shape, mean.dtype)
    return mean + jnp.sqrt(sched.posterior_beta(t)) * noise


def _check_rungs(t_low, t_high, low_name, high_name, sched, x):
    x = check_step(t_low, 0, sched.num_steps, low_name, x)
    x = check_step(t_high, 0, sched.num_steps, high_name, x)
    return error_if(
        x,
        jnp.asarray(t_low) >= jnp.asarray(t_high),
        f"Must have `{low_name} < {high_name}`.",
    )


def _predict_x0(x_t, eps_hat, alpha_bar):
    return (x_t - jnp.sqrt(1 - alpha_bar) * eps_hat) / jnp.sqrt(alpha_bar)


def ddim_step(
    x_t: ArrayLike,
    eps_hat: ArrayLike,
    t: IntScalarLike,
    t_prev: IntScalarLike,
    sched: NoiseSchedule,
) -> Array:
    """One deterministic (η = 0) DDIM step from rung `t` down to rung `t_prev < t`.

    `t_prev = 0` is allowed, and returns the predicted clean signal `x̂_0`.
    """
    check_same_shape(x_t, eps_hat, "x_t", "eps_hat")
    alpha_bar = sched.alpha_bar(t)
    alpha_bar_prev = sched.alpha_bar(t_prev)
    x0_hat = _predict_x0(x_t, eps_hat, alpha_bar)
    out = jnp.sqrt(alpha_bar_prev) * x0_hat + jnp.sqrt(1 - alpha_bar_prev) * eps_hat
    return _check_rungs(t_prev, t, "t_prev", "t", sched, out)


def ddim_invert_step(
    x_t: ArrayLike,
    eps_hat: ArrayLike,
    t: IntScalarLike,
    t_next: IntScalarLike,
    sched: NoiseSchedule,
) -> Array:
    """One DDIM inversion step from rung `t` up to rung `t_next > t`.

    Written with cumulative `ᾱ`:
    `x_{t'} / √ᾱ_{t'} = x_t / √ᾱ_t + (√((1 - ᾱ_{t'}) / ᾱ_{t'}) - √((1 - ᾱ_t) / ᾱ_t)) ε`,
    which is exactly undone by [`codenoise.ddim_step`][] with the same `eps_hat`.
    """
    check_same_shape(x_t, eps_hat, "x_t", "eps_hat")
    alpha_bar = sched.alpha_bar(t)
    alpha_bar_next = sched.alpha_bar(t_next)
    x0_hat = _predict_x0(x_t, eps_hat, alpha_bar)
    out = jnp.sqrt(alpha_bar_next) * x0_hat + jnp.sqrt(1 - alpha_bar_next) * eps_hat
    return _check_rungs(t, t_next, "t", "t_next", sched, out)


def cfg_combine(
    eps_cond: ArrayLike, eps_uncond: ArrayLike, cfg: GuidanceConfig
) -> Array:
    """Classifier-free guidance: `(1 + w) eps_cond - w eps_uncond`."""
    check_same_shape(eps_cond, eps_uncond, "eps_cond", "eps_uncond")
    w = cfg.scale
    return (1 + w) * jnp.asarray(eps_cond) - w * jnp.asarray(eps_uncond)


def ddim_timesteps(num_steps: int, sched: NoiseSchedule) -> tuple[int, ...]:
    """The rungs visited by a `num_steps`-step DDIM sampler.

    **Arguments:**

    - `num_steps`: how many denoising steps to take, `1 <= num_steps <= T`.
    - `sched`: the noise schedule.

    **Returns:**

    A strictly decreasing tuple of integers, uniformly spaced over `[1, T]` with both
    endpoints included (just `(T,)` if `num_steps == 1`). Each sampler walks these in
    order and then takes one final step to the terminal rung `t = 0`.
    """
    T = sched.num_steps
    if not 1 <= num_steps <= T:
        raise ValueError(
            f"`num_steps` must satisfy 1 <= num_steps <= {T}, but got {num_steps}."
        )
    if num_steps == 1:
        return (T,)
    rungs = np.round(np.linspace(T, 1, num_steps)).astype(int)
    return tuple(int(t) for t in rungs)


_SCHEDULE_KEYS = ("betas", "alphas", "alpha_bars", "posterior_betas")


def schedule_to_text(sched: NoiseSchedule) -> str:
    """Serialises a schedule as `key = value` lines, one array per line.

    Floats are written with `repr`, so [`codenoise.schedule_from_text`][] recovers the
    tables exactly.
    """
    lines = [f"num_steps = {sched.num_steps}"]
    for name in _SCHEDULE_KEYS:
        values = np.asarray(getattr(sched, name), dtype=np.float64)
        lines.append(f"{name} = " + ",".join(repr(float(v)) for v in values))
    return "\n".join(lines) + "\n"


def schedule_from_text(text: str) -> NoiseSchedule:
    """Inverse of [`codenoise.schedule_to_text`][]."""
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"Line {lineno}: expected `key = value`, got {line!r}.")
        entries[key.strip()] = value.strip()
    missing = {"num_steps", *_SCHEDULE_KEYS} - entries.keys()
    if missing:
        raise ValueError(f"Schedule text is missing the entries {sorted(missing)}.")
    num_steps = int(entries["num_steps"])
    tables = {}
    for name in _SCHEDULE_KEYS:
        try:
            values = np.array(
                [float(v) for v in entries[name].split(",")], dtype=np.float64
            )
        except ValueError as e:
            raise ValueError(f"Could not parse `{name}` in schedule text.") from e
        if values.shape != (num_steps,):
            raise ValueError(
                f"`{name}` has {values.size} entries but `num_steps = {num_steps}`."
            )
        tables[name] = values
    derived = _tables_from_betas(tables["betas"])
    for name in _SCHEDULE_KEYS[1:]:
        if not np.allclose(tables[name], derived[name], rtol=1e-12, atol=0):
            raise ValueError(f"`{name}` is inconsistent with `betas`.")
    return NoiseSchedule(**tables)
