import json
import logging
import os
import pathlib
from typing import Union

import jax.numpy as jnp
import numpy as np

from ._sequence import LongSequence


logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


def save_sequence(path: PathLike, v: LongSequence) -> None:
    """Writes a sequence as a one-line JSON header followed by the raw frames as
    little-endian float64, in C order."""
    frames = np.asarray(v.frames, dtype="<f8")
    header = dict(
        dims=list(frames.shape),
        dtype="float64",
        endianness="little",
        frame_rate=v.frame_rate,
    )
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(frames.tobytes(order="C"))


def load_sequence(path: PathLike) -> LongSequence:
    """Reads a sequence written by [`codenoise.save_sequence`][]."""
    with open(path, "rb") as f:
        line = f.readline()
        body = f.read()
    try:
        header = json.loads(line)
    except json.JSONDecodeError as e:
        raise ValueError(f"{path} does not start with a JSON header.") from e
    if header.get("dtype") != "float64" or header.get("endianness") != "little":
        raise ValueError(
            f"{path}: only little-endian float64 sequences are supported, got "
            f"{header.get('dtype')}/{header.get('endianness')}."
        )
    dims = tuple(int(d) for d in header["dims"])
    expected = 8 * int(np.prod(dims))
    if len(body) != expected:
        raise ValueError(f"{path}: expected {expected} bytes of data, got {len(body)}.")
    frames = np.frombuffer(body, dtype="<f8").reshape(dims)
    return LongSequence(
        jnp.asarray(frames), frame_rate=float(header.get("frame_rate", 8.0))
    )


def dump_frames_pgm(
    directory: PathLike, v: LongSequence, prefix: str = "frame"
) -> list[pathlib.Path]:
    """Writes every frame of a 2-dimensional-frame sequence as an 8-bit binary PGM,
    for inspection. Intensities are scaled linearly from the sequence's minimum and
    maximum onto `[0, 255]`.

    **Returns:**

    The paths written, in frame order.
    """
    frames = np.asarray(v.frames, dtype=np.float64)
    if frames.ndim != 3:
        raise ValueError(
            f"PGM dumps need frames of shape (height, width), got {frames.shape[1:]}."
        )
    low, high = frames.min(), frames.max()
    span = high - low if high > low else 1.0
    pixels = np.round(255 * (frames - low) / span).astype(np.uint8)
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    height, width = frames.shape[1:]
    width_digits = len(str(len(frames) - 1))
    paths = []
    for j, image in enumerate(pixels):
        path = directory / f"{prefix}_{j:0{width_digits}d}.pgm"
        with open(path, "wb") as f:
            f.write(f"P5\n{width} {height}\n255\n".encode())
            f.write(image.tobytes())
        paths.append(path)
    logger.debug("Wrote %d PGM frames to %s.", len(paths), directory)
    return paths
