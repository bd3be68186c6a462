import csv
import math
import os
from collections.abc import Iterable, Sequence
from typing import Literal, Optional, Union

import equinox as eqx
import jax
import jax.numpy as jnp
import jax.random as jr
from jaxtyping import Array, ArrayLike, Float

from ._conditions import ConditionEmbedding
from ._misc import error_if
from ._sequence import LongSequence
from ._synthdata import render_condition_frames

PathLike = Union[str, os.PathLike]

CSV_HEADER = (
    "run_id",
    "method",
    "frame_consistency",
    "align_mean",
    "align_var_x100",
    "seed",
)


class EmbedderSpec(eqx.Module):
    """A fixed frame embedder, standing in for a pretrained image encoder.

    **Attributes:**

    - `kind`: `"flatten"` uses the raw pixels; `"random_projection"` multiplies them by
        a Gaussian matrix drawn from `seed`, scaled by `1/√output_dim`.
    - `seed`: seeds the projection matrix.
    - `output_dim`: the embedding dimension for `"random_projection"`. Ignored by
        `"flatten"`.
    """

    kind: Literal["flatten", "random_projection"] = eqx.field(
        static=True, default="flatten"
    )
    seed: int = eqx.field(static=True, default=0)
    output_dim: int = eqx.field(static=True, default=64)

    def __check_init__(self):
        if self.kind not in ("flatten", "random_projection"):
            raise ValueError(
                "`kind` must be 'flatten' or 'random_projection', but got "
                f"{self.kind!r}."
            )
        if self.output_dim < 1:
            raise ValueError(f"`output_dim` must be positive, got {self.output_dim}.")

    def projection(self, input_dim: int) -> Float[Array, "in out"]:
        key = jr.PRNGKey(self.seed)
        return jr.normal(key, (input_dim, self.output_dim)) / math.sqrt(self.output_dim)


def embed_frames(
    frames: Float[ArrayLike, "frames *shape"], emb: EmbedderSpec
) -> Float[Array, "frames dim"]:
    """Embeds each frame as a vector."""
    frames = jnp.asarray(frames)
    flat = frames.reshape(frames.shape[0], -1)
    if emb.kind == "flatten":
        return flat
    return flat @ emb.projection(flat.shape[1])


def _normalise(embeddings: Array, name: str) -> Array:
    norms = jnp.linalg.norm(embeddings, axis=-1, keepdims=True)
    norms = error_if(norms, jnp.any(norms == 0), f"Zero-norm {name} embedding.")
    return embeddings / norms


def frame_consistency(v: LongSequence, emb: EmbedderSpec) -> float:
    """The average cosine similarity of the embeddings of all unordered pairs of
    frames, in `[-1, 1]`."""
    if v.num_frames < 2:
        raise ValueError(f"Need at least two frames, but got {v.num_frames}.")
    unit = _normalise(embed_frames(v.frames, emb), "frame")
    gram = unit @ unit.T
    upper = jnp.triu_indices(v.num_frames, k=1)
    return float(jnp.mean(gram[upper]))


def embed_conditions(
    conditions: Sequence[Union[ConditionEmbedding, ArrayLike]],
    frame_shape: tuple[int, ...],
    emb: EmbedderSpec,
    *,
    start_frame: int = 0,
) -> Float[Array, "frames dim"]:
    """Maps per-frame condition vectors into the frame-embedding space, by rendering
    the scene each condition describes at its frame and embedding the rendering.

    This plays the part of a text encoder sharing its space with the image encoder.
    """
    vectors = jnp.stack(
        [
            c.vector if isinstance(c, ConditionEmbedding) else jnp.asarray(c)
            for c in conditions
        ]
    )
    frame_indices = start_frame + jnp.arange(len(conditions))

    def render_one(condition, j):
        return render_condition_frames(condition, j[None], frame_shape)[0]

    rendered = jax.vmap(render_one)(vectors, frame_indices)
    return embed_frames(rendered, emb)


def alignment_statistics(
    scores: Float[ArrayLike, " frames"],
) -> tuple[float, float]:
    """The mean and population variance of per-frame alignment scores."""
    scores = jnp.asarray(scores)
    mean = jnp.mean(scores)
    return float(mean), float(jnp.mean(jnp.square(scores - mean)))


def textual_alignment(
    v: LongSequence,
    c_per_frame: Sequence[Union[ConditionEmbedding, ArrayLike]],
    emb: EmbedderSpec,
    *,
    condition_embeddings: Optional[Float[ArrayLike, "frames dim"]] = None,
) -> tuple[float, float]:
    """Alignment of each frame with its condition.

    The score of frame `j` is the cosine similarity between its embedding and the
    embedding of its condition (see [`codenoise.embed_conditions`][]).

    **Arguments:**

    - `v`: the sequence.
    - `c_per_frame`: one condition per frame.
    - `emb`: the embedder.
    - `condition_embeddings`: precomputed condition embeddings, of shape
        `(frames, dim)`, used instead of rendering `c_per_frame`.

    **Returns:**

    A 2-tuple of the mean score and the population variance of the scores.
    """
    if len(c_per_frame) != v.num_frames:
        raise ValueError(
            f"Got {len(c_per_frame)} conditions for {v.num_frames} frames."
        )
    frames = _normalise(embed_frames(v.frames, emb), "frame")
    if condition_embeddings is None:
        condition_embeddings = embed_conditions(c_per_frame, v.frame_shape, emb)
    conds = _normalise(jnp.asarray(condition_embeddings), "condition")
    if conds.shape != frames.shape:
        raise ValueError(
            f"Condition embeddings have shape {conds.shape} but frame embeddings have "
            f"shape {frames.shape}."
        )
    return alignment_statistics(jnp.sum(frames * conds, axis=-1))


class MetricsRow(eqx.Module):
    """One row of a metrics CSV."""

    run_id: str = eqx.field(static=True)
    method: str = eqx.field(static=True)
    frame_consistency: float = eqx.field(static=True)
    align_mean: float = eqx.field(static=True)
    align_var_x100: float = eqx.field(static=True)
    seed: int = eqx.field(static=True)


def write_metrics_csv(path: PathLike, rows: Iterable[MetricsRow]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row.run_id,
                    row.method,
                    repr(row.frame_consistency),
                    repr(row.align_mean),
                    repr(row.align_var_x100),
                    row.seed,
                ]
            )


def read_metrics_csv(path: PathLike) -> list[MetricsRow]:
    """Reads a CSV written by [`codenoise.write_metrics_csv`][]. Raises `ValueError`
    naming the offending line if the file is malformed."""
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        seen_header = False
        for lineno, record in enumerate(reader, start=1):
            if not seen_header:
                seen_header = True
                if tuple(record) != CSV_HEADER:
                    raise ValueError(
                        f"{path}, line 1: expected header {','.join(CSV_HEADER)}."
                    )
                continue
            if not record:
                continue
            if len(record) != len(CSV_HEADER):
                raise ValueError(
                    f"{path}, line {lineno}: expected {len(CSV_HEADER)} fields, got "
                    f"{len(record)}."
                )
            run_id, method, consistency, mean, var, seed = record
            try:
                rows.append(
                    MetricsRow(
                        run_id=run_id,
                        method=method,
                        frame_consistency=float(consistency),
                        align_mean=float(mean),
                        align_var_x100=float(var),
                        seed=int(seed),
                    )
                )
            except ValueError as e:
                raise ValueError(f"{path}, line {lineno}: {e}") from e
    if not seen_header:
        raise ValueError(f"{path} is empty.")
    return rows
