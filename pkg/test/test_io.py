import json

import codenoise
import jax.numpy as jnp
import jax.random as jr
import numpy as np
import pytest


def test_sequence_file(tmp_path, getkey):
    v = codenoise.LongSequence(jr.normal(getkey(), (5, 3, 2)), frame_rate=24.0)
    path = tmp_path / "v.seq"
    codenoise.save_sequence(path, v)
    with open(path, "rb") as f:
        header = json.loads(f.readline())
    assert header["dims"] == [5, 3, 2]
    assert header["dtype"] == "float64"
    assert header["endianness"] == "little"
    assert path.stat().st_size == len(json.dumps(header, sort_keys=True)) + 1 + 8 * 30

    loaded = codenoise.load_sequence(path)
    assert jnp.array_equal(loaded.frames, v.frames)
    assert loaded.frame_rate == 24.0


def test_sequence_file_errors(tmp_path):
    path = tmp_path / "v.seq"
    codenoise.save_sequence(path, codenoise.LongSequence(jnp.zeros((2, 2))))
    data = path.read_bytes()

    path.write_bytes(data[:-1])
    with pytest.raises(ValueError, match="expected 32 bytes of data, got 31"):
        codenoise.load_sequence(path)

    path.write_bytes(b"not json\n" + bytes(32))
    with pytest.raises(ValueError, match="JSON header"):
        codenoise.load_sequence(path)

    header = dict(dims=[2, 2], dtype="float32", endianness="little")
    path.write_bytes(json.dumps(header).encode() + b"\n" + bytes(16))
    with pytest.raises(ValueError, match="float64"):
        codenoise.load_sequence(path)


def test_dump_frames_pgm(tmp_path):
    frames = jnp.stack([jnp.zeros((2, 3)), jnp.full((2, 3), 0.5), jnp.ones((2, 3))])
    paths = codenoise.dump_frames_pgm(tmp_path / "pgm", codenoise.LongSequence(frames))
    assert [p.name for p in paths] == ["frame_0.pgm", "frame_1.pgm", "frame_2.pgm"]
    data = paths[1].read_bytes()
    header = b"P5\n3 2\n255\n"
    assert data.startswith(header)
    pixels = np.frombuffer(data[len(header) :], dtype=np.uint8)
    assert pixels.tolist() == [128] * 6
    assert paths[2].read_bytes()[len(header) :] == bytes([255] * 6)

    with pytest.raises(ValueError, match="height, width"):
        codenoise.dump_frames_pgm(tmp_path, codenoise.LongSequence(jnp.zeros((2, 3))))


def test_dump_constant_frames(tmp_path):
    v = codenoise.LongSequence(jnp.full((12, 2, 2), 3.0))
    paths = codenoise.dump_frames_pgm(tmp_path, v, prefix="v")
    assert paths[0].name == "v_00.pgm"
    assert paths[-1].name == "v_11.pgm"
    assert paths[0].read_bytes().endswith(bytes(4))
