import hashlib

import codenoise
import equinox as eqx
import jax.numpy as jnp
import jax.random as jr
import pytest

from .helpers import make_sched, scene_denoiser


def _model(key, identifier_dim=2, mode="bidirectional"):
    mkey, hkey = jr.split(key)
    model = codenoise.TinyLearnedDenoiser(
        4,
        (3, 2),
        5,
        10,
        identifier_dim=identifier_dim,
        width=8,
        mode=mode,
        key=mkey,
    )
    # Give the zero-initialised head some values so that a round trip is meaningful.
    return eqx.tree_at(
        lambda m: m.head.weight, model, jr.normal(hkey, model.head.weight.shape)
    )


def test_roundtrip_with_identifiers(tmp_path, getkey):
    model = _model(getkey(), mode="sparse_causal")
    identifiers = codenoise.make_identifiers(
        6, 2, key=getkey(), drop_probability=0.25
    )
    path = tmp_path / "model.ckpt"
    digest = codenoise.save_checkpoint(path, model, identifiers)
    assert digest == hashlib.sha256(path.read_bytes()).hexdigest()
    assert digest == codenoise.checkpoint_hash(model, identifiers)

    model2, identifiers2 = codenoise.load_checkpoint(path)
    assert eqx.tree_equal(model2, model)
    assert jnp.array_equal(identifiers2.vectors, identifiers.vectors)
    assert identifiers2.drop_probability == 0.25
    assert model2.mode == "sparse_causal"
    assert model2.frame_shape == (3, 2)


def test_roundtrip_without_identifiers(tmp_path, getkey):
    model = _model(getkey(), identifier_dim=None)
    path = tmp_path / "model.ckpt"
    codenoise.save_checkpoint(path, model)
    model2, identifiers2 = codenoise.load_checkpoint(path)
    assert identifiers2 is None
    assert model2.identifier_dim is None
    assert eqx.tree_equal(model2, model)


def test_hash_depends_on_parameters(getkey):
    model = _model(getkey())
    other = eqx.tree_at(lambda m: m.head.bias, model, model.head.bias + 1)
    assert codenoise.checkpoint_hash(model) != codenoise.checkpoint_hash(other)
    assert codenoise.checkpoint_hash(model) == codenoise.checkpoint_hash(model)


def test_analytic_hash():
    sched = make_sched(20)
    a = codenoise.checkpoint_hash(scene_denoiser(sched, variance=0.01))
    b = codenoise.checkpoint_hash(scene_denoiser(sched, variance=0.01))
    c = codenoise.checkpoint_hash(scene_denoiser(sched, variance=0.02))
    assert a == b
    assert a != c
    assert len(a) == 64


def test_corrupt_checkpoints(tmp_path, getkey):
    model = _model(getkey())
    identifiers = codenoise.make_identifiers(3, 2, key=getkey())
    data = codenoise.checkpoint_bytes(model, identifiers)

    path = tmp_path / "truncated.ckpt"
    path.write_bytes(data[:-8])
    with pytest.raises(ValueError, match="truncated"):
        codenoise.load_checkpoint(path)

    path = tmp_path / "trailing.ckpt"
    path.write_bytes(data + bytes(8))
    with pytest.raises(ValueError, match="trailing"):
        codenoise.load_checkpoint(path)

    path = tmp_path / "magic.ckpt"
    path.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(ValueError, match="not a checkpoint"):
        codenoise.load_checkpoint(path)

    path = tmp_path / "short.ckpt"
    path.write_bytes(data[:10])
    with pytest.raises(ValueError, match="too short"):
        codenoise.load_checkpoint(path)


def test_identifier_dimension_mismatch(getkey):
    model = _model(getkey(), identifier_dim=2)
    identifiers = codenoise.make_identifiers(3, 4, key=getkey())
    with pytest.raises(ValueError, match="Identifier dimension"):
        codenoise.checkpoint_bytes(model, identifiers)
