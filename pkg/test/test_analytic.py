import codenoise
import jax.numpy as jnp
import jax.random as jr
import numpy as np
import pytest

from .helpers import blob, make_sched


def test_point_mass_recovers_noise(getkey):
    sched = make_sched(50)
    mean = jr.normal(getkey(), (4, 3))
    eps = jr.normal(getkey(), (4, 3))
    for t in (1, 17, 50):
        x_t = codenoise.forward_diffuse(mean, t, eps, sched)
        out = codenoise.analytic_predict(x_t, t, mean, 0.0, sched)
        assert jnp.allclose(out, eps, rtol=1e-10, atol=1e-10)


def test_mean_input_predicts_zero(getkey):
    sched = make_sched(50)
    mean = jr.normal(getkey(), (4, 3))
    x_t = jnp.sqrt(sched.alpha_bar(20)) * mean
    out = codenoise.analytic_predict(x_t, 20, mean, 0.3, sched, shared_variance=0.2)
    assert jnp.allclose(out, 0, atol=1e-14)


@pytest.mark.parametrize("t, variance", [(3, 0.01), (25, 0.5), (49, 2.0)])
def test_monte_carlo_posterior_mean(t, variance, getkey):
    # `E[ε | x_t]` is the projection of `ε` onto functions of `x_t`. For Gaussian data
    # it is affine, so the residual must be uncorrelated with `1` and with `x_t`.
    sched = make_sched(50)
    n = 100_000
    mean = 0.7
    x0 = mean + jnp.sqrt(variance) * jr.normal(getkey(), (n,))
    eps = jr.normal(getkey(), (n,))
    x_t = codenoise.forward_diffuse(x0, t, eps, sched)
    eps_hat = codenoise.analytic_predict(x_t, t, mean, variance, sched)
    residual = np.asarray(eps - eps_hat)
    features = np.asarray(x_t - jnp.mean(x_t))
    for g in (np.ones(n), features / np.std(features)):
        moment = residual * g
        standard_error = np.std(moment) / np.sqrt(n)
        assert abs(np.mean(moment)) < 3 * standard_error


def test_shared_variance_matches_dense_solve(getkey):
    sched = make_sched(40)
    t = 12
    M = 5
    x_t = jr.normal(getkey(), (M, 3))
    mean = jr.normal(getkey(), (M, 3))
    variance = jr.uniform(getkey(), (M, 3), minval=0.1, maxval=1.0)
    shared = jr.uniform(getkey(), (3,), minval=0.1, maxval=1.0)
    out = codenoise.analytic_predict(
        x_t, t, mean, variance, sched, shared_variance=shared
    )
    alpha_bar = sched.alpha_bar(t)
    for p in range(3):
        cov = jnp.diag(alpha_bar * variance[:, p] + 1 - alpha_bar)
        cov = cov + alpha_bar * shared[p] * jnp.ones((M, M))
        r = x_t[:, p] - jnp.sqrt(alpha_bar) * mean[:, p]
        expected = jnp.sqrt(1 - alpha_bar) * jnp.linalg.solve(cov, r)
        assert jnp.allclose(out[:, p], expected, rtol=1e-10, atol=1e-12)


def test_analytic_predict_checks_step():
    sched = make_sched(10)
    with pytest.raises(ValueError, match="1 <= t <= 10"):
        codenoise.analytic_predict(jnp.zeros(2), 0, 0.0, 1.0, sched)


def test_tabulated_gaussians(getkey):
    keys = jnp.array([[1.0, 0.0], [0.0, 1.0]])
    means = jnp.stack([jnp.zeros((3, 2)), jnp.full((3, 2), 2.0)])
    family = codenoise.TabulatedGaussians(keys, means, 0.5)
    assert family.frame_shape == (2,)
    mean, variance, shared = family.moments(jnp.array([0.0, 1.0]), 0, 3)
    assert jnp.all(mean == 2.0)
    assert jnp.all(variance == 0.5)
    assert jnp.all(shared == 0)

    # The default null Gaussian is the moment-matched mixture.
    mean, variance, _ = family.moments(jnp.zeros(2), 0, 3)
    assert jnp.allclose(mean, 1.0)
    assert jnp.allclose(variance, 0.5 + 1.0)

    with pytest.raises(ValueError, match="Unknown condition"):
        family.moments(jnp.array([1.0, 1.0]), 0, 3)
    with pytest.raises(ValueError, match="clips of 3 frames"):
        family.moments(jnp.array([1.0, 0.0]), 0, 4)
    with pytest.raises(ValueError, match="reserved"):
        codenoise.TabulatedGaussians(jnp.zeros((1, 2)), means[:1], 0.5)
    with pytest.raises(ValueError, match="nonnegative"):
        codenoise.TabulatedGaussians(keys, means, -1.0)


def test_tabulated_sample_statistics(getkey):
    keys = jnp.array([[1.0]])
    means = jnp.full((1, 2, 4000), 3.0)
    family = codenoise.TabulatedGaussians(keys, means, 0.25, shared_variances=0.0)
    x = family.sample(getkey(), keys[0], 0, 2)
    assert x.shape == (2, 4000)
    assert abs(float(jnp.mean(x)) - 3.0) < 3 * 0.5 / np.sqrt(8000)
    assert abs(float(jnp.var(x)) - 0.25) < 3 * 0.25 * np.sqrt(2 / 8000)


def test_scene_gaussians_use_absolute_frames(getkey):
    sched = make_sched(30)
    spec = blob("linear", velocity=1.0)
    condition = codenoise.spec_to_condition(spec).vector
    denoiser = codenoise.AnalyticGaussianDenoiser(
        codenoise.SceneGaussians((8, 8), variance=0.05), sched
    )
    assert denoiser.frame_shape == (8, 8)
    assert denoiser.identifier_dim is None
    x_t = jr.normal(getkey(), (4, 8, 8))
    out = denoiser(codenoise.Clip(x_t, 1, 6), 9, condition)
    mean = codenoise.render_scene(spec, 10).frames[6:10]
    expected = codenoise.analytic_predict(x_t, 9, mean, 0.05, sched)
    assert jnp.allclose(out, expected, rtol=1e-12, atol=1e-12)


def test_scene_gaussians_null_condition(getkey):
    sched = make_sched(30)
    denoiser = codenoise.AnalyticGaussianDenoiser(
        codenoise.SceneGaussians((8, 8), null_variance=2.0), sched
    )
    x_t = jr.normal(getkey(), (4, 8, 8))
    out = denoiser(codenoise.Clip(x_t), 5, jnp.zeros(9))
    expected = codenoise.analytic_predict(x_t, 5, 0.0, 2.0, sched)
    assert jnp.allclose(out, expected, rtol=1e-12)


def test_analytic_denoiser_shape_mismatch(getkey):
    sched = make_sched(30)
    denoiser = codenoise.AnalyticGaussianDenoiser(
        codenoise.SceneGaussians((8, 8)), sched
    )
    condition = codenoise.spec_to_condition(blob()).vector
    with pytest.raises(ValueError, match="clips of shape"):
        denoiser(codenoise.Clip(jnp.zeros((4, 6, 6))), 5, condition)
    with pytest.raises(ValueError, match="nonnegative"):
        codenoise.SceneGaussians((8, 8), variance=-0.1)
