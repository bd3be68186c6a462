from collections.abc import Sequence
from typing import Optional, TYPE_CHECKING

import equinox as eqx
import jax.numpy as jnp
import jax.random as jr
import numpy as np
from jaxtyping import Array, ArrayLike, Float, PRNGKeyArray

from ._custom_types import IntScalarLike, RealScalarLike
from ._misc import check_same_shape, is_traced
from ._schedule import cfg_combine, GuidanceConfig
from ._sequence import Clip
from ._windowing import ClipLayout


if TYPE_CHECKING:
    from ._denoiser.base import AbstractDenoiser


class ConditionEmbedding(eqx.Module):
    """A condition vector `c`, e.g. the encoding of a prompt.

    **Attributes:**

    - `vector`: a finite vector of dimension `d`.
    - `label`: optional free text, carried into manifests and reports.
    """

    vector: Float[Array, " dim"] = eqx.field(converter=jnp.asarray)
    label: Optional[str] = eqx.field(default=None, static=True)

    def __check_init__(self):
        if jnp.ndim(self.vector) != 1:
            raise ValueError(
                "`ConditionEmbedding.vector` must be a vector, but got shape "
                f"{jnp.shape(self.vector)}."
            )
        if not is_traced(self.vector) and not np.all(np.isfinite(self.vector)):
            raise ValueError("`ConditionEmbedding.vector` must be finite.")

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


def null_condition(dim: int) -> ConditionEmbedding:
    """The null condition `∅`: the all-zeros vector of dimension `dim`."""
    return ConditionEmbedding(jnp.zeros(dim), label="null")


class ConditionTrack(eqx.Module):
    """Sparse per-clip conditions, to be filled in by
    [`codenoise.interpolate_conditions`][].

    **Attributes:**

    - `anchors`: `(clip index, embedding)` pairs, with strictly increasing clip indices.
    - `dense`: optionally, an already interpolated per-clip list.
    """

    anchors: tuple[tuple[int, ConditionEmbedding], ...]
    dense: Optional[tuple[ConditionEmbedding, ...]] = None

    def __check_init__(self):
        if len(self.anchors) == 0:
            raise ValueError("`ConditionTrack` must have at least one anchor.")
        indices = [index for index, _ in self.anchors]
        if any(b <= a for a, b in zip(indices[:-1], indices[1:])):
            raise ValueError(
                f"Anchor clip indices must be strictly increasing, but got {indices}."
            )
        dims = {embedding.dim for _, embedding in self.anchors}
        if len(dims) != 1:
            raise ValueError(f"All anchors must have the same dimension, got {dims}.")

    @property
    def dim(self) -> int:
        return self.anchors[0][1].dim


def interpolate_conditions(track: ConditionTrack, N: int) -> list[ConditionEmbedding]:
    """Fills in one condition per clip by linear interpolation between anchors.

    Clip `k` between anchors `a < k < b` gets `((b - k) c_a + (k - a) c_b) / (b - a)`.
    Anchors need not be uniformly spaced; anchor clips get their anchor unchanged.

    **Arguments:**

    - `track`: the [`codenoise.ConditionTrack`][]. Its first anchor must be at clip `0`
        and its last at clip `N - 1`.
    - `N`: the number of clips.

    **Returns:**

    A list of `N` [`codenoise.ConditionEmbedding`][]s.
    """
    first = track.anchors[0][0]
    last = track.anchors[-1][0]
    if first != 0 or last != N - 1:
        raise ValueError(
            f"Anchors must span clips 0 to {N - 1}, but span {first} to {last}."
        )
    out = []
    for (a, c_a), (b, c_b) in zip(track.anchors[:-1], track.anchors[1:]):
        out.append(c_a)
        for k in range(a + 1, b):
            vector = ((b - k) * c_a.vector + (k - a) * c_b.vector) / (b - a)
            out.append(ConditionEmbedding(vector))
    out.append(track.anchors[-1][1])
    return out


def assign_clip_conditions(
    frame_prompts: Sequence[tuple[tuple[int, int], ConditionEmbedding]],
    layout: ClipLayout,
) -> list[ConditionEmbedding]:
    """Assigns one condition to each clip from per-frame prompt regions.

    **Arguments:**

    - `frame_prompts`: `((start, stop), embedding)` pairs whose half-open frame ranges
        partition `[0, total_frames)`. Order does not matter.
    - `layout`: the [`codenoise.ClipLayout`][].

    **Returns:**

    A list of `N` embeddings. A clip inside a single region gets that region's
    embedding; a clip straddling regions gets their average, weighted by the fraction
    of the clip's frames falling in each.
    """
    if len(frame_prompts) == 0:
        raise ValueError("`frame_prompts` must not be empty.")
    regions = sorted(frame_prompts, key=lambda item: item[0][0])
    cursor = 0
    for (start, stop), _ in regions:
        if start != cursor or stop <= start:
            raise ValueError(
                "Prompt regions must partition the frames without gaps or overlaps; "
                f"found region [{start}, {stop}) where frame {cursor} was expected."
            )
        cursor = stop
    if cursor != layout.total_frames:
        raise ValueError(
            f"Prompt regions cover {cursor} frames but the layout has "
            f"{layout.total_frames}."
        )

    out = []
    M = layout.window
    for i in range(layout.clip_count):
        lo, hi = layout.start(i), layout.start(i) + M
        counts = [
            (max(0, min(hi, stop) - max(lo, start)), embedding)
            for (start, stop), embedding in regions
        ]
        counts = [(count, embedding) for count, embedding in counts if count > 0]
        if len(counts) == 1:
            out.append(counts[0][1])
        else:
            vector = sum(count / M * embedding.vector for count, embedding in counts)
            out.append(ConditionEmbedding(vector))
    return out


class ClipIdentifier(eqx.Module):
    """Learnable per-clip identifiers `e^i`, used for one-shot tuning.

    **Attributes:**

    - `vectors`: an array of shape `(clip_count, d_e)`.
    - `drop_probability`: the probability, during training, of replacing both the
        condition and the identifier of a sample by `∅`.
    """

    vectors: Float[Array, "clips dim"]
    drop_probability: float = eqx.field(default=0.1, static=True)

    def __check_init__(self):
        if jnp.ndim(self.vectors) != 2:
            raise ValueError(
                "`ClipIdentifier.vectors` must have shape `(clip_count, dim)`, but got "
                f"{jnp.shape(self.vectors)}."
            )
        if not 0 <= self.drop_probability <= 1:
            raise ValueError(
                "`drop_probability` must lie in [0, 1], but got "
                f"{self.drop_probability}."
            )

    @property
    def num_clips(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __getitem__(self, i: IntScalarLike) -> Float[Array, " dim"]:
        return self.vectors[i]


def make_identifiers(
    num_clips: int,
    dim: int,
    *,
    key: PRNGKeyArray,
    drop_probability: float = 0.1,
    scale: float = 0.1,
) -> ClipIdentifier:
    """Randomly initialised [`codenoise.ClipIdentifier`][]s."""
    vectors = scale * jr.normal(key, (num_clips, dim))
    return ClipIdentifier(vectors, drop_probability=drop_probability)


def identifier_guided_noise(
    denoiser: "AbstractDenoiser",
    clip: Clip,
    t: IntScalarLike,
    c: ArrayLike,
    e: ArrayLike,
    w: RealScalarLike,
    null_condition: Optional[ArrayLike] = None,
) -> Array:
    """Guided noise prediction using both the condition and the clip identifier:
    `(1 + w) ε(v, t, c, e) - w ε(v, t, ∅, ∅)`.

    The unconditional branch drops the condition and the identifier together. The
    dropped condition is `null_condition`, or zeros if it is `None`; the dropped
    identifier is always zeros.
    """
    c = jnp.asarray(c)
    e = jnp.asarray(e)
    if denoiser.identifier_dim is None:
        raise ValueError(
            f"{type(denoiser).__name__} does not take clip identifiers."
        )
    if e.shape != (denoiser.identifier_dim,):
        raise ValueError(
            f"Identifier has shape {e.shape} but the denoiser expects "
            f"({denoiser.identifier_dim},)."
        )
    if null_condition is not None:
        null_condition = jnp.asarray(null_condition)
    cfg = GuidanceConfig(scale=w, null_condition=null_condition)
    eps_cond = denoiser(clip, t, c, e)
    eps_uncond = denoiser(clip, t, cfg.null_like(c), jnp.zeros_like(e))
    return cfg_combine(eps_cond, eps_uncond, cfg)


def parse_condition_track(text: str, dim: Optional[int] = None) -> ConditionTrack:
    """Parses lines of the form `clip_index<TAB>label<TAB>comma-separated floats`.

    Blank lines and lines starting with `#` are ignored. Anchors may appear in any
    order.
    """
    anchors = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.strip().split("\t")
        if len(parts) != 3:
            raise ValueError(
                f"Line {lineno}: expected `clip_index<TAB>label<TAB>values`, got "
                f"{line!r}."
            )
        index, label, values = parts
        try:
            vector = np.array([float(v) for v in values.split(",")])
            index = int(index)
        except ValueError as e:
            raise ValueError(f"Line {lineno}: could not parse {line!r}.") from e
        if dim is not None and vector.shape != (dim,):
            raise ValueError(
                f"Line {lineno}: expected {dim} values but got {vector.size}."
            )
        anchors.append((index, ConditionEmbedding(vector, label=label or None)))
    if len(anchors) == 0:
        raise ValueError("No condition anchors found.")
    anchors.sort(key=lambda item: item[0])
    return ConditionTrack(tuple(anchors))


def format_condition_track(track: ConditionTrack) -> str:
    lines = []
    for index, embedding in track.anchors:
        values = ",".join(repr(float(v)) for v in np.asarray(embedding.vector))
        lines.append(f"{index}\t{embedding.label or ''}\t{values}")
    return "\n".join(lines) + "\n"


def check_conditions(conditions: Sequence[ArrayLike], layout: ClipLayout) -> Array:
    """Stacks per-clip condition vectors, checking there is one per clip."""
    if len(conditions) != layout.clip_count:
        raise ValueError(
            f"Got {len(conditions)} conditions for {layout.clip_count} clips."
        )
    vectors = [
        c.vector if isinstance(c, ConditionEmbedding) else jnp.asarray(c)
        for c in conditions
    ]
    for v in vectors[1:]:
        check_same_shape(vectors[0], v, "conditions[0]", "conditions[i]")
    return jnp.stack(vectors)
