import math
from collections.abc import Sequence
from typing import Literal, Optional

import equinox as eqx
import jax
import jax.numpy as jnp
import jax.random as jr
import jax.tree_util as jtu
import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
from jaxtyping import Array, ArrayLike, Bool, Float, Int, PRNGKeyArray

from .._custom_types import ConditionLike, IdentifierLike, IntScalarLike
from .._sequence import Clip
from .._windowing import ClipLayout
from .base import AbstractDenoiser


AttentionMode = Literal["bidirectional", "sparse_causal"]
_MODES = ("bidirectional", "sparse_causal")


def _check_mode(mode: str):
    if mode not in _MODES:
        raise ValueError(f"Attention mode must be one of {_MODES}, but got {mode!r}.")


def anchor_frame(M: int, mode: AttentionMode = "bidirectional") -> int:
    """The anchor frame of a clip: `⌊M / 2⌋`, or `0` in sparse-causal mode."""
    _check_mode(mode)
    return M // 2 if mode == "bidirectional" else 0


def _kv_frames(j: int, M: int, mode: AttentionMode) -> tuple[int, ...]:
    if not 0 <= j < M:
        raise ValueError(f"Frame index must satisfy 0 <= j < {M}, but got {j}.")
    anchor = anchor_frame(M, mode)
    if j == anchor:
        return (anchor,)
    elif j > anchor:
        return (j - 1, anchor)
    else:
        return (j + 1, anchor)


def crossframe_kv(
    features: Sequence[Float[ArrayLike, " width"]] | Float[ArrayLike, "window width"],
    j: int,
    M: int,
    mode: AttentionMode = "bidirectional",
) -> Float[Array, "kv width"]:
    """The keys/values that frame `j` of a clip attends to.

    With anchor `a = ⌊M / 2⌋`:

    - `j > a`: `[z_{j-1}, z_a]`;
    - `j < a`: `[z_{j+1}, z_a]`;
    - `j = a`: `[z_a]`, i.e. the anchor only attends to itself.

    Frames next to the anchor get `[z_a, z_a]`. In `"sparse_causal"` mode the anchor is
    frame `0` and the same rule applies, so that every frame attends to its predecessor
    and the first frame.

    **Arguments:**

    - `features`: the `M` per-frame feature vectors `z_0, ..., z_{M-1}`.
    - `j`: the query frame.
    - `M`: the clip length.
    - `mode`: `"bidirectional"` or `"sparse_causal"`.

    **Returns:**

    An array of shape `(1, width)` or `(2, width)`.
    """
    features = jnp.asarray(features)
    if features.shape[0] != M:
        raise ValueError(f"Expected {M} feature vectors, got {features.shape[0]}.")
    return features[jnp.array(_kv_frames(j, M, mode))]


def kv_indices(
    M: int, mode: AttentionMode = "bidirectional"
) -> tuple[Int[np.ndarray, "window 2"], Bool[np.ndarray, "window 2"]]:
    """[`codenoise.crossframe_kv`][] for every frame at once, padded to two entries.

    **Returns:**

    A 2-tuple `(indices, mask)` of arrays of shape `(M, 2)`; entries of `indices` where
    `mask` is `False` are padding.
    """
    indices = np.zeros((M, 2), dtype=np.int32)
    mask = np.zeros((M, 2), dtype=bool)
    for j in range(M):
        frames = _kv_frames(j, M, mode)
        indices[j, : len(frames)] = frames
        mask[j, : len(frames)] = True
    return indices, mask


def attention_edges(
    M: int, mode: AttentionMode = "bidirectional"
) -> list[tuple[int, int]]:
    """The information-flow edges `(source, target)` of one clip: frame `source` is a
    key/value of query frame `target`. Self edges are omitted."""
    edges = []
    for j in range(M):
        for source in _kv_frames(j, M, mode):
            if source != j and (source, j) not in edges:
                edges.append((source, j))
    return edges


def attention_graph(
    layout: ClipLayout, mode: AttentionMode = "bidirectional"
) -> sp.csr_matrix:
    """The information-flow graph over all frames of a long sequence, formed from the
    cross-frame attention edges of every clip. Frames shared by overlapping clips tie
    the per-clip graphs together.

    **Returns:**

    A `(total_frames, total_frames)` sparse adjacency matrix, with entry `[s, t]`
    nonzero if frame `t` attends to frame `s` in some clip.
    """
    local = attention_edges(layout.window, mode)
    rows, cols = [], []
    for i in range(layout.clip_count):
        start = layout.start(i)
        for source, target in local:
            rows.append(start + source)
            cols.append(start + target)
    data = np.ones(len(rows))
    n = layout.total_frames
    graph = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    # Duplicate edges from overlapping clips are summed by the conversion.
    graph.data[:] = 1.0
    return graph


def reachability(graph: sp.spmatrix) -> Bool[np.ndarray, "frames frames"]:
    """Entry `[s, t]` is `True` if there is a directed path from `s` to `t`."""
    distances = csgraph.shortest_path(graph, directed=True, unweighted=True)
    return np.isfinite(distances)


def _zero_linear(linear: eqx.nn.Linear) -> eqx.nn.Linear:
    return eqx.tree_at(
        lambda l: (l.weight, l.bias),
        linear,
        (jnp.zeros_like(linear.weight), jnp.zeros_like(linear.bias)),
    )


class TinyLearnedDenoiser(AbstractDenoiser):
    """A small noise-prediction network with cross-frame attention.

    Each frame is flattened and encoded by a dense layer (plus a learned time
    embedding). One cross-frame attention block then lets every frame attend to the
    keys/values given by [`codenoise.crossframe_kv`][], and one cross-attention block
    attends to the condition and clip identifier tokens. A dense head maps back to
    pixels; it is initialised to zero, so a fresh model predicts zero noise.
    """

    encoder: eqx.nn.Linear
    time_embedding: eqx.nn.Embedding
    query_proj: eqx.nn.Linear
    key_proj: eqx.nn.Linear
    value_proj: eqx.nn.Linear
    condition_proj: eqx.nn.Linear
    identifier_proj: Optional[eqx.nn.Linear]
    cross_query: eqx.nn.Linear
    cross_key: eqx.nn.Linear
    cross_value: eqx.nn.Linear
    head: eqx.nn.Linear
    mode: AttentionMode = eqx.field(static=True)
    window: int = eqx.field(static=True)
    frame_shape: tuple[int, ...] = eqx.field(static=True)
    condition_dim: int = eqx.field(static=True)
    identifier_size: Optional[int] = eqx.field(static=True)
    num_steps: int = eqx.field(static=True)
    width: int = eqx.field(static=True)

    def __init__(
        self,
        window: int,
        frame_shape: tuple[int, ...],
        condition_dim: int,
        num_steps: int,
        *,
        identifier_dim: Optional[int] = None,
        width: int = 32,
        mode: AttentionMode = "bidirectional",
        key: PRNGKeyArray,
    ):
        _check_mode(mode)
        pixels = math.prod(frame_shape)
        keys = jr.split(key, 11)
        self.encoder = eqx.nn.Linear(pixels, width, key=keys[0])
        self.time_embedding = eqx.nn.Embedding(num_steps + 1, width, key=keys[1])
        self.query_proj = eqx.nn.Linear(width, width, use_bias=False, key=keys[2])
        self.key_proj = eqx.nn.Linear(width, width, use_bias=False, key=keys[3])
        self.value_proj = eqx.nn.Linear(width, width, use_bias=False, key=keys[4])
        self.condition_proj = eqx.nn.Linear(condition_dim, width, key=keys[5])
        if identifier_dim is None:
            self.identifier_proj = None
        else:
            self.identifier_proj = eqx.nn.Linear(identifier_dim, width, key=keys[6])
        self.cross_query = eqx.nn.Linear(width, width, use_bias=False, key=keys[7])
        self.cross_key = eqx.nn.Linear(width, width, use_bias=False, key=keys[8])
        self.cross_value = eqx.nn.Linear(width, width, use_bias=False, key=keys[9])
        self.head = _zero_linear(eqx.nn.Linear(width, pixels, key=keys[10]))
        self.mode = mode
        self.window = window
        self.frame_shape = tuple(frame_shape)
        self.condition_dim = condition_dim
        self.identifier_size = identifier_dim
        self.num_steps = num_steps
        self.width = width

    @property
    def identifier_dim(self) -> Optional[int]:
        return self.identifier_size

    def with_mode(self, mode: AttentionMode) -> "TinyLearnedDenoiser":
        """The same parameters under another attention mode."""
        _check_mode(mode)
        if mode == self.mode:
            return self
        skeleton = TinyLearnedDenoiser(
            self.window,
            self.frame_shape,
            self.condition_dim,
            self.num_steps,
            identifier_dim=self.identifier_size,
            width=self.width,
            mode=mode,
            key=jr.PRNGKey(0),
        )
        return jtu.tree_unflatten(jtu.tree_structure(skeleton), jtu.tree_leaves(self))

    def _cross_frame(
        self, h: Float[Array, "window width"]
    ) -> Float[Array, "window width"]:
        indices, mask = kv_indices(self.window, self.mode)
        q = jax.vmap(self.query_proj)(h)
        k = jax.vmap(self.key_proj)(h)[indices]
        v = jax.vmap(self.value_proj)(h)[indices]
        logits = jnp.einsum("mw,mkw->mk", q, k) / math.sqrt(self.width)
        logits = jnp.where(mask, logits, -jnp.inf)
        weights = jax.nn.softmax(logits, axis=-1)
        return jnp.einsum("mk,mkw->mw", weights, v)

    def _cross_condition(
        self, h: Float[Array, "window width"], condition: Array, identifier: Array
    ) -> Float[Array, "window width"]:
        tokens = [self.condition_proj(condition)]
        if self.identifier_proj is not None:
            tokens.append(self.identifier_proj(identifier))
        tokens = jnp.stack(tokens)
        q = jax.vmap(self.cross_query)(h)
        k = jax.vmap(self.cross_key)(tokens)
        v = jax.vmap(self.cross_value)(tokens)
        weights = jax.nn.softmax(q @ k.T / math.sqrt(self.width), axis=-1)
        return weights @ v

    def __call__(
        self,
        clip: Clip,
        t: IntScalarLike,
        condition: ConditionLike,
        identifier: Optional[IdentifierLike] = None,
    ) -> Float[Array, "window *shape"]:
        frames = clip.frames
        if frames.shape != (self.window, *self.frame_shape):
            raise ValueError(
                f"This denoiser was built for clips of shape "
                f"{(self.window, *self.frame_shape)}, but got {frames.shape}."
            )
        condition = jnp.asarray(condition)
        if condition.shape != (self.condition_dim,):
            raise ValueError(
                f"Expected a condition of shape ({self.condition_dim},), got "
                f"{condition.shape}."
            )
        if self.identifier_size is None:
            if identifier is not None:
                raise ValueError("This denoiser was built without clip identifiers.")
            identifier = jnp.zeros(0)
        elif identifier is None:
            identifier = jnp.zeros(self.identifier_size)
        else:
            identifier = jnp.asarray(identifier)
        x = frames.reshape(self.window, -1)
        h = jax.vmap(self.encoder)(x) + self.time_embedding(jnp.asarray(t))
        h = jnp.tanh(h)
        h = h + self._cross_frame(h)
        h = h + self._cross_condition(h, condition, identifier)
        out = jax.vmap(self.head)(h)
        return out.reshape(frames.shape)


TinyLearnedDenoiser.__init__.__doc__ = """**Arguments:**

- `window`: the clip length `M` the model is built for.
- `frame_shape`: the shape of a single frame.
- `condition_dim`: the dimension `d` of condition vectors.
- `num_steps`: the number of diffusion steps `T`, which sizes the time embedding.
- `identifier_dim`: the dimension `d_e` of clip identifiers, or `None` for a model
    that takes none.
- `width`: the feature width of the hidden layers.
- `mode`: `"bidirectional"` (anchor at the middle frame) or `"sparse_causal"`
    (anchor at the first frame, attend to the previous frame).
- `key`: a JAX random key used to initialise the parameters.
"""
