import codenoise
import equinox as eqx
import jax.numpy as jnp
import jax.random as jr
import numpy as np
import pytest

from .helpers import blob, make_sched, tree_allclose


def _setup(key, total=8, window=4, stride=2, frame_shape=(4, 4), identifier_dim=2):
    layout = codenoise.make_layout(total, window, stride)
    spec = blob("linear", velocity=1.0, frame_shape=frame_shape)
    video = codenoise.render_scene(spec, total)
    conditions = [codenoise.spec_to_condition(spec).vector] * layout.clip_count
    mkey, ikey = jr.split(key)
    denoiser = codenoise.TinyLearnedDenoiser(
        window,
        frame_shape,
        codenoise.CONDITION_DIM,
        10,
        identifier_dim=identifier_dim,
        width=16,
        key=mkey,
    )
    return layout, video, conditions, denoiser, ikey


def test_zero_learning_rate(getkey):
    layout, video, conditions, denoiser, ikey = _setup(getkey())
    identifiers = codenoise.make_identifiers(layout.clip_count, 2, key=ikey)
    sol = codenoise.train_one_shot(
        denoiser,
        video,
        layout,
        conditions,
        identifiers,
        make_sched(10),
        epochs=3,
        lr=0.0,
        key=getkey(),
    )
    assert tree_allclose(sol.denoiser, denoiser)
    assert eqx.tree_equal(sol.identifiers, identifiers)
    assert sol.losses.shape == (3,)
    assert sol.result == codenoise.RESULTS.successful
    assert sol.stats["num_steps"] == 3
    assert sol.stats["learning_rate"] == 0.0


def test_always_dropped_identifiers_are_untouched(getkey):
    layout, video, conditions, denoiser, ikey = _setup(getkey())
    identifiers = codenoise.make_identifiers(
        layout.clip_count, 2, key=ikey, drop_probability=1.0
    )
    sol = codenoise.train_one_shot(
        denoiser,
        video,
        layout,
        conditions,
        identifiers,
        make_sched(10),
        epochs=3,
        lr=1e-3,
        key=getkey(),
    )
    assert jnp.array_equal(sol.identifiers.vectors, identifiers.vectors)
    assert not eqx.tree_equal(sol.denoiser, denoiser)


def test_training_reduces_loss(getkey):
    layout, video, conditions, denoiser, ikey = _setup(getkey())
    identifiers = codenoise.make_identifiers(layout.clip_count, 2, key=ikey)
    sol = codenoise.train_one_shot(
        denoiser,
        video,
        layout,
        conditions,
        identifiers,
        codenoise.make_linear_schedule(10, 0.5, 0.9),
        epochs=60,
        lr=2e-3,
        batch=2,
        key=getkey(),
    )
    losses = np.asarray(sol.losses)
    assert np.all(np.isfinite(losses))
    assert np.mean(losses[-10:]) < 0.9 * np.mean(losses[:10])
    assert sol.stats["learning_rate"] == pytest.approx(4e-3)
    assert sol.stats["num_steps"] == 60 * 2


@pytest.mark.slow
def test_default_settings_converge(getkey):
    layout, video, conditions, denoiser, ikey = _setup(
        getkey(), total=100, window=16, stride=4, frame_shape=(8, 8)
    )
    denoiser = codenoise.TinyLearnedDenoiser(
        16,
        (8, 8),
        codenoise.CONDITION_DIM,
        1000,
        identifier_dim=2,
        key=getkey(),
    )
    identifiers = codenoise.make_identifiers(layout.clip_count, 2, key=ikey)
    sol = codenoise.train_one_shot(
        denoiser,
        video,
        layout,
        conditions,
        identifiers,
        make_sched(1000),
        epochs=100,
        key=getkey(),
    )
    losses = np.asarray(sol.losses)
    assert codenoise.has_converged(losses)
    assert sol.stats["convergence_epoch"] is not None
    assert sol.stats["convergence_epoch"] <= 100
    assert np.mean(losses[-10:]) <= 1.05 * np.mean(losses[:10])


def test_divergence_is_reported(getkey):
    layout, video, conditions, denoiser, ikey = _setup(getkey(), identifier_dim=None)
    kwargs = dict(epochs=20, lr=1e12, batch=2, key=getkey())
    with pytest.raises(codenoise.NumericalError) as excinfo:
        codenoise.train_one_shot(
            denoiser, video, layout, conditions, None, make_sched(10), **kwargs
        )
    assert excinfo.value.result == codenoise.RESULTS.nonfinite_loss
    assert "recent_losses" in excinfo.value.diagnostic

    sol = codenoise.train_one_shot(
        denoiser,
        video,
        layout,
        conditions,
        None,
        make_sched(10),
        throw=False,
        **kwargs,
    )
    assert sol.result == codenoise.RESULTS.nonfinite_loss
    assert sol.identifiers is None
    assert len(sol.losses) < 20


def test_train_argument_errors(getkey):
    layout, video, conditions, denoiser, ikey = _setup(getkey())
    sched = make_sched(10)
    with pytest.raises(ValueError, match="expects clip identifiers"):
        codenoise.train_one_shot(
            denoiser, video, layout, conditions, None, sched, key=getkey()
        )
    wrong = codenoise.make_identifiers(layout.clip_count + 1, 2, key=ikey)
    with pytest.raises(ValueError, match="identifiers for"):
        codenoise.train_one_shot(
            denoiser, video, layout, conditions, wrong, sched, key=getkey()
        )
    identifiers = codenoise.make_identifiers(layout.clip_count, 2, key=ikey)
    with pytest.raises(ValueError, match="schedule has 20"):
        codenoise.train_one_shot(
            denoiser,
            video,
            layout,
            conditions,
            identifiers,
            make_sched(20),
            key=getkey(),
        )
    with pytest.raises(ValueError, match="conditions for"):
        codenoise.train_one_shot(
            denoiser, video, layout, conditions[:1], identifiers, sched, key=getkey()
        )


def test_convergence_epoch():
    assert codenoise.convergence_epoch([1.0] * 5) is None
    assert codenoise.convergence_epoch([1.0] * 30) == 10
    losses = [10.0] * 10 + [1.0] * 30
    # The moving average first stays within 5% once its window holds no `10.0`s.
    assert codenoise.convergence_epoch(losses) == 20
    assert codenoise.has_converged(losses)
    assert not codenoise.has_converged(np.linspace(10, 1, 40))
    assert not codenoise.has_converged([1.0] * 19)
    assert not codenoise.has_converged([1.0] * 30 + [float("nan")])
