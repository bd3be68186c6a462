import hashlib
import logging
import os
import struct
from typing import Optional, Union

import equinox as eqx
import jax.numpy as jnp
import jax.random as jr
import jax.tree_util as jtu
import numpy as np

from ._conditions import ClipIdentifier
from ._denoiser.base import AbstractDenoiser
from ._denoiser.learned import TinyLearnedDenoiser


logger = logging.getLogger(__name__)

_MAGIC = b"CNDN"
_VERSION = 1
# magic, version, window, condition_dim, identifier_dim, num_steps, width, mode,
# num_clips, drop_probability, len(frame_shape)
_HEADER = struct.Struct("<4sIIIIIIIIdI")
_MODE_CODES = {"bidirectional": 0, "sparse_causal": 1}

PathLike = Union[str, os.PathLike]


def _leaves(tree) -> list[np.ndarray]:
    return [np.asarray(x) for x in jtu.tree_leaves(eqx.filter(tree, eqx.is_array))]


def checkpoint_bytes(
    denoiser: TinyLearnedDenoiser, identifiers: Optional[ClipIdentifier] = None
) -> bytes:
    """Serialises a denoiser (and optionally its identifiers) to the checkpoint format:
    a fixed little-endian header with the model dimensions, followed by every parameter
    array as little-endian float64, in tree order."""
    if identifiers is not None and identifiers.dim != denoiser.identifier_dim:
        raise ValueError("Identifier dimension does not match the denoiser.")
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        denoiser.window,
        denoiser.condition_dim,
        denoiser.identifier_size or 0,
        denoiser.num_steps,
        denoiser.width,
        _MODE_CODES[denoiser.mode],
        0 if identifiers is None else identifiers.num_clips,
        0.0 if identifiers is None else identifiers.drop_probability,
        len(denoiser.frame_shape),
    )
    shape = struct.pack(f"<{len(denoiser.frame_shape)}I", *denoiser.frame_shape)
    arrays = _leaves(denoiser)
    if identifiers is not None:
        arrays.append(np.asarray(identifiers.vectors))
    body = b"".join(a.astype("<f8").tobytes() for a in arrays)
    return header + shape + body


def save_checkpoint(
    path: PathLike,
    denoiser: TinyLearnedDenoiser,
    identifiers: Optional[ClipIdentifier] = None,
) -> str:
    """Writes a checkpoint to `path` and returns its SHA-256 hash."""
    data = checkpoint_bytes(denoiser, identifiers)
    with open(path, "wb") as f:
        f.write(data)
    digest = hashlib.sha256(data).hexdigest()
    logger.info("Saved checkpoint %s (sha256 %s).", path, digest[:12])
    return digest


def load_checkpoint(
    path: PathLike,
) -> tuple[TinyLearnedDenoiser, Optional[ClipIdentifier]]:
    """Reads a checkpoint written by [`codenoise.save_checkpoint`][].

    **Returns:**

    A 2-tuple of the denoiser and the identifiers (`None` if none were saved).
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path} is too short to be a checkpoint.")
    (
        magic,
        version,
        window,
        condition_dim,
        identifier_dim,
        num_steps,
        width,
        mode_code,
        num_clips,
        drop_probability,
        ndim,
    ) = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError(f"{path} is not a checkpoint.")
    if version != _VERSION:
        raise ValueError(f"Unsupported checkpoint version {version} in {path}.")
    offset = _HEADER.size
    frame_shape = struct.unpack_from(f"<{ndim}I", data, offset)
    offset += 4 * ndim
    modes = {code: mode for mode, code in _MODE_CODES.items()}
    skeleton = TinyLearnedDenoiser(
        window,
        frame_shape,
        condition_dim,
        num_steps,
        identifier_dim=identifier_dim or None,
        width=width,
        mode=modes[mode_code],
        key=jr.PRNGKey(0),
    )
    dynamic, static = eqx.partition(skeleton, eqx.is_array)
    leaves, treedef = jtu.tree_flatten(dynamic)
    body = np.frombuffer(data, dtype="<f8", offset=offset)
    loaded = []
    cursor = 0
    for leaf in leaves:
        size = leaf.size
        if cursor + size > body.size:
            raise ValueError(f"{path} is truncated.")
        array = body[cursor : cursor + size].reshape(leaf.shape)
        loaded.append(jnp.asarray(array, dtype=leaf.dtype))
        cursor += size
    denoiser = eqx.combine(jtu.tree_unflatten(treedef, loaded), static)
    identifiers = None
    if num_clips > 0:
        size = num_clips * identifier_dim
        if cursor + size > body.size:
            raise ValueError(f"{path} is truncated.")
        vectors = body[cursor : cursor + size].reshape(num_clips, identifier_dim)
        identifiers = ClipIdentifier(
            jnp.asarray(vectors), drop_probability=drop_probability
        )
        cursor += size
    if cursor != body.size:
        raise ValueError(f"{path} has {body.size - cursor} unexpected trailing values.")
    return denoiser, identifiers


def checkpoint_hash(
    denoiser: AbstractDenoiser, identifiers: Optional[ClipIdentifier] = None
) -> str:
    """A SHA-256 hash identifying a denoiser, recorded in run manifests.

    For a [`codenoise.TinyLearnedDenoiser`][] this is the hash of its checkpoint file.
    For other denoisers it hashes the tree structure and every array, as float64.
    """
    if isinstance(denoiser, TinyLearnedDenoiser):
        return hashlib.sha256(checkpoint_bytes(denoiser, identifiers)).hexdigest()
    digest = hashlib.sha256()
    digest.update(type(denoiser).__name__.encode())
    digest.update(str(jtu.tree_structure(denoiser)).encode())
    for leaf in jtu.tree_leaves((denoiser, identifiers)):
        if eqx.is_array(leaf):
            digest.update(np.asarray(leaf).astype("<f8").tobytes())
        else:
            digest.update(repr(leaf).encode())
    return digest.hexdigest()
