import math

import codenoise
import jax.numpy as jnp
import numpy as np
import pytest

from .helpers import blob


def test_static_scene_is_constant():
    v = codenoise.render_scene(blob("linear", velocity=0.0), 6)
    assert v.frames.shape == (6, 8, 8)
    assert jnp.all(v.frames == v.frames[0])
    v = codenoise.render_scene(blob("static", velocity=3.0), 6)
    assert jnp.all(v.frames == v.frames[0])


def test_linear_centres():
    c = codenoise.spec_to_condition(blob("linear", velocity=1.5)).vector
    rows, cols = codenoise.scene_centers(c, jnp.arange(2))
    assert float(cols[1] - cols[0]) == 1.5
    assert jnp.all(rows == 4.0)


def test_sinusoidal_centres():
    spec = blob("sinusoidal", velocity=0.8, period=16.0)
    c = codenoise.spec_to_condition(spec).vector
    j = np.arange(64)
    _, cols = codenoise.scene_centers(c, j)
    omega = 2 * math.pi / 16
    expected = 4.0 + 0.8 / omega * np.sin(omega * j)
    assert np.allclose(np.asarray(cols), expected, rtol=0, atol=1e-9)


def test_render_peak_and_wrap():
    spec = blob("linear", velocity=1.0, amplitude=2.0)
    v = codenoise.render_scene(spec, 6)
    for j in range(6):
        row, col = np.unravel_index(np.argmax(v.frames[j]), (8, 8))
        assert (row, col) == (4, (4 + j) % 8)
        assert float(v.frames[j, row, col]) == pytest.approx(2.0)


def test_render_deterministic_noise_floor():
    spec = blob("linear", noise_floor=0.1)
    v1 = codenoise.render_scene(spec, 4, seed=3)
    v2 = codenoise.render_scene(spec, 4, seed=3)
    v3 = codenoise.render_scene(spec, 4, seed=4)
    assert jnp.array_equal(v1.frames, v2.frames)
    assert not jnp.array_equal(v1.frames, v3.frames)
    clean = codenoise.render_scene(blob("linear"), 4)
    assert 0.05 < float(jnp.std(v1.frames - clean.frames)) < 0.2


def test_condition_embedding_roundtrip():
    a = codenoise.spec_to_condition(blob("linear", velocity=1.0))
    b = codenoise.spec_to_condition(blob("linear", velocity=1.0))
    assert jnp.array_equal(a.vector, b.vector)
    c = codenoise.spec_to_condition(blob("linear", velocity=2.0))
    differs = np.nonzero(np.asarray(a.vector != c.vector))[0]
    assert differs.tolist() == [3]
    assert a.dim == codenoise.CONDITION_DIM

    spec = blob("sinusoidal", velocity=-0.3, period=24.0, amplitude=0.7)
    assert codenoise.condition_to_spec(
        codenoise.spec_to_condition(spec), frame_shape=(8, 8)
    ) == spec


def test_condition_layout_in_scene_units():
    spec = codenoise.SceneSpec(
        "sinusoidal",
        velocity=-0.75,
        blob_center0=(3.0, 11.5),
        blob_width=2.5,
        amplitude=0.6,
        period=40.0,
        frame_shape=(16, 16),
    )
    vector = codenoise.spec_to_condition(spec).vector.tolist()
    assert vector == [0.0, 0.0, 1.0, -0.75, 3.0, 11.5, 2.5, 0.6, 40.0]
    assert max(vector, key=abs) == spec.period


def test_condition_to_spec_errors():
    with pytest.raises(ValueError, match="one-hot"):
        codenoise.condition_to_spec(jnp.full(9, 0.5))
    with pytest.raises(ValueError, match="9 entries"):
        codenoise.condition_to_spec(jnp.zeros(4))


def test_scene_spec_errors():
    with pytest.raises(ValueError, match="motion"):
        codenoise.SceneSpec("circular")
    with pytest.raises(ValueError, match="blob_width"):
        codenoise.SceneSpec("static", blob_width=0.0)
    with pytest.raises(ValueError, match="frame_shape"):
        codenoise.SceneSpec("static", frame_shape=(8,))


def test_render_regions():
    a = blob("static")
    b = blob("linear", velocity=1.0)
    v = codenoise.render_regions([((4, 10), b), ((0, 4), a)])
    assert v.num_frames == 10
    assert jnp.allclose(v.frames[:4], codenoise.render_scene(a, 4).frames)
    # Scenes are rendered at absolute frame indices.
    assert jnp.allclose(v.frames[4:], codenoise.render_scene(b, 10).frames[4:])
    with pytest.raises(ValueError, match="tile"):
        codenoise.render_regions([((0, 4), a), ((5, 8), b)])


def test_interpolated_condition_renders():
    a = codenoise.spec_to_condition(blob("static", amplitude=1.0)).vector
    b = codenoise.spec_to_condition(blob("static", amplitude=3.0)).vector
    frames = codenoise.render_condition_frames((a + b) / 2, jnp.arange(2), (8, 8))
    assert float(frames.max()) == pytest.approx(2.0)
    null = codenoise.render_condition_frames(jnp.zeros(9), jnp.arange(2), (8, 8))
    assert jnp.all(null == 0)


def test_scene_text():
    scenes = [(0, blob("static")), (12, blob("sinusoidal", velocity=0.5))]
    text = codenoise.format_scene_specs(scenes)
    assert text.splitlines()[1].startswith("12\tsinusoidal\t")
    assert codenoise.parse_scene_specs(text, frame_shape=(8, 8)) == scenes
    with pytest.raises(ValueError, match="Line 1"):
        codenoise.parse_scene_specs("0\tstatic\t1,0,0\n")
    with pytest.raises(ValueError, match="No scenes"):
        codenoise.parse_scene_specs("\n")
