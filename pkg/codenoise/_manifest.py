import logging
import os
from typing import Literal, Optional, Union

import equinox as eqx
import wadler_lindig as wl

from ._conditions import (
    ConditionTrack,
    format_condition_track,
    parse_condition_track,
)
from ._metrics import EmbedderSpec
from ._schedule import (
    make_linear_schedule,
    NoiseSchedule,
    schedule_from_text,
    schedule_to_text,
)
from ._synthdata import format_scene_specs, parse_scene_specs, SceneSpec
from ._windowing import padding_needed


logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

Mode = Literal["generate", "invert", "edit", "train_one_shot", "ablate"]
_MODES = ("generate", "invert", "edit", "train_one_shot", "ablate")
# Sections whose bodies are tab-separated lines rather than `key = value` pairs.
_LINE_SECTIONS = ("scenes", "conditions")
_SECTIONS = (
    "run",
    "schedule",
    "layout",
    "weights",
    "sampler",
    "denoiser",
    "training",
    "scenes",
    "conditions",
    "metrics",
)


class RunManifest(eqx.Module):
    """Everything needed to reproduce a run bit-exactly.

    A manifest is read from the sectioned text format of
    [`codenoise.parse_manifest`][]; the fully-resolved manifest (schedule tables
    expanded, padding and checkpoint hash filled in) is written next to every output
    by [`codenoise.format_manifest`][].
    """

    mode: Mode = eqx.field(static=True)
    seed: int = eqx.field(static=True)
    repeat: int = eqx.field(static=True)
    schedule: NoiseSchedule
    total_frames: int = eqx.field(static=True)
    window: int = eqx.field(static=True)
    stride: int = eqx.field(static=True)
    weights: Literal["uniform", "tent"] = eqx.field(static=True)
    sampler: Literal["ddim", "ddpm"] = eqx.field(static=True)
    steps: int = eqx.field(static=True)
    guidance_scale: float = eqx.field(static=True)
    smoothing: float = eqx.field(static=True)
    denoiser: Literal["analytic", "learned"] = eqx.field(static=True)
    checkpoint: Optional[str] = eqx.field(static=True)
    checkpoint_hash: Optional[str] = eqx.field(static=True)
    attention: Literal["bidirectional", "sparse_causal"] = eqx.field(static=True)
    width: int = eqx.field(static=True)
    identifier_dim: int = eqx.field(static=True)
    variance: float = eqx.field(static=True)
    shared_variance: float = eqx.field(static=True)
    null_variance: float = eqx.field(static=True)
    epochs: int = eqx.field(static=True)
    lr: float = eqx.field(static=True)
    batch: int = eqx.field(static=True)
    scale_lr: bool = eqx.field(static=True)
    drop_probability: float = eqx.field(static=True)
    scenes: tuple[tuple[int, SceneSpec], ...]
    conditions: Optional[ConditionTrack]
    input: Optional[str] = eqx.field(static=True)
    frame_shape: tuple[int, int] = eqx.field(static=True)
    noise_floor: float = eqx.field(static=True)
    frame_rate: float = eqx.field(static=True)
    embedder: EmbedderSpec

    def __check_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"Unknown mode {self.mode!r}; expected one of {_MODES}.")
        if self.repeat < 1:
            raise ValueError(f"`repeat` must be at least 1, got {self.repeat}.")
        if self.weights not in ("uniform", "tent"):
            raise ValueError(f"Unknown weight scheme {self.weights!r}.")
        if self.sampler not in ("ddim", "ddpm"):
            raise ValueError(f"Unknown sampler {self.sampler!r}.")
        if self.denoiser not in ("analytic", "learned"):
            raise ValueError(f"Unknown denoiser {self.denoiser!r}.")
        if self.attention not in ("bidirectional", "sparse_causal"):
            raise ValueError(f"Unknown attention mode {self.attention!r}.")
        if self.identifier_dim < 0:
            raise ValueError("`identifier_dim` must be nonnegative.")
        if len(self.scenes) == 0 and self.conditions is None:
            raise ValueError("A manifest needs a [scenes] or a [conditions] section.")

    @property
    def pad(self) -> int:
        """How many frames are appended to `total_frames` to tile it with clips."""
        return padding_needed(self.total_frames, self.window, self.stride)

    @property
    def padded_frames(self) -> int:
        return self.total_frames + self.pad

    def scene_regions(
        self, total_frames: Optional[int] = None
    ) -> list[tuple[tuple[int, int], SceneSpec]]:
        """The `[start, stop)` frame range of each scene. The last scene runs to
        `total_frames` (by default the padded length)."""
        if total_frames is None:
            total_frames = self.padded_frames
        starts = [start for start, _ in self.scenes]
        stops = starts[1:] + [total_frames]
        return [
            ((start, stop), spec)
            for (start, spec), stop in zip(self.scenes, stops)
        ]


def split_sections(text: str) -> dict[str, list[tuple[int, str]]]:
    """Splits manifest text into `{section: [(line number, line), ...]}`."""
    sections: dict[str, list[tuple[int, str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            if current not in _SECTIONS:
                raise ValueError(f"Line {lineno}: unknown section [{current}].")
            if current in sections:
                raise ValueError(f"Line {lineno}: duplicate section [{current}].")
            sections[current] = []
            continue
        if not stripped or stripped.startswith("#"):
            continue
        if current is None:
            raise ValueError(f"Line {lineno}: content before the first section.")
        # Tab-separated sections keep their tabs.
        line = raw.rstrip("\n") if current in _LINE_SECTIONS else stripped
        sections[current].append((lineno, line))
    return sections


def _key_values(lines: list[tuple[int, str]]) -> dict[str, tuple[int, str]]:
    out = {}
    for lineno, line in lines:
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"Line {lineno}: expected `key = value`, got {line!r}.")
        out[key.strip()] = (lineno, value.strip())
    return out


class _Section:
    def __init__(self, name: str, lines: list[tuple[int, str]]):
        self.name = name
        self.entries = _key_values(lines)
        self.used: set[str] = set()

    def get(self, key, convert, default):
        self.used.add(key)
        if key not in self.entries:
            if default is _REQUIRED:
                raise ValueError(f"[{self.name}] is missing `{key}`.")
            return default
        lineno, value = self.entries[key]
        try:
            return convert(value)
        except ValueError as e:
            raise ValueError(
                f"Line {lineno}: invalid value {value!r} for `{key}` in [{self.name}]."
            ) from e

    def check_all_used(self):
        unknown = self.entries.keys() - self.used
        if unknown:
            key = sorted(unknown)[0]
            raise ValueError(
                f"Line {self.entries[key][0]}: unknown key `{key}` in [{self.name}]."
            )


_REQUIRED = object()


def _bool(value: str) -> bool:
    if value.lower() in ("true", "yes", "1"):
        return True
    if value.lower() in ("false", "no", "0"):
        return False
    raise ValueError(value)


def _optional_str(value: str) -> Optional[str]:
    return value or None


def _shape(value: str) -> tuple[int, int]:
    parts = tuple(int(v) for v in value.replace("x", ",").split(","))
    if len(parts) != 2:
        raise ValueError(value)
    return parts  # pyright: ignore


def _parse_schedule(lines: list[tuple[int, str]]) -> NoiseSchedule:
    keys = {line.partition("=")[0].strip() for _, line in lines}
    if "betas" in keys:
        text = "\n".join(line for _, line in lines if not line.startswith("kind"))
        return schedule_from_text(text)
    section = _Section("schedule", lines)
    kind = section.get("kind", str, "linear")
    if kind != "linear":
        raise ValueError(f"Unknown schedule kind {kind!r}; expected 'linear'.")
    num_steps = section.get("num_steps", int, 1000)
    beta_start = section.get("beta_start", float, 1e-4)
    beta_end = section.get("beta_end", float, 0.02)
    section.check_all_used()
    return make_linear_schedule(num_steps, beta_start, beta_end)


def _body(lines: list[tuple[int, str]]) -> str:
    return "\n".join(line for _, line in lines)


def _with_line_offset(parse, lines: list[tuple[int, str]], *args):
    # Report line numbers of the manifest rather than of the section body.
    try:
        return parse(_body(lines), *args)
    except ValueError as e:
        message = str(e)
        if message.startswith("Line ") and lines:
            local, _, rest = message[5:].partition(":")
            if local.isdigit():
                lineno = lines[int(local) - 1][0]
                raise ValueError(f"Line {lineno}:{rest}") from e
        raise


def parse_manifest(text: str) -> RunManifest:
    """Parses a run manifest.

    A manifest is a sequence of `[section]` headers, each followed by `key = value`
    lines (or, for `[scenes]` and `[conditions]`, tab-separated lines; see
    [`codenoise.parse_scene_specs`][] and [`codenoise.parse_condition_track`][]).
    `#` starts a comment line. Unknown sections and keys are errors, reported with
    their line number.
    """
    sections = split_sections(text)
    get = lambda name: _Section(name, sections.get(name, []))  # noqa: E731

    run = get("run")
    mode = run.get("mode", str, "generate")
    seed = run.get("seed", int, 0)
    repeat = run.get("repeat", int, 1)
    input_path = run.get("input", _optional_str, None)
    frame_rate = run.get("frame_rate", float, 8.0)
    run.check_all_used()

    schedule = _parse_schedule(sections.get("schedule", []))

    layout = get("layout")
    window = layout.get("window", int, 16)
    stride = layout.get("stride", int, 4)
    total_frames = layout.get("total_frames", int, _REQUIRED)
    layout.get("pad", int, None)
    layout.check_all_used()

    weights = get("weights")
    weight_kind = weights.get("kind", str, "uniform")
    weights.check_all_used()

    sampler = get("sampler")
    sampler_kind = sampler.get("kind", str, "ddim")
    steps = sampler.get("steps", int, 50)
    guidance_scale = sampler.get("guidance_scale", float, 13.5)
    smoothing = sampler.get("smoothing", float, 0.0)
    sampler.check_all_used()

    denoiser = get("denoiser")
    denoiser_kind = denoiser.get("kind", str, "analytic")
    checkpoint = denoiser.get("checkpoint", _optional_str, None)
    checkpoint_hash = denoiser.get("hash", _optional_str, None)
    attention = denoiser.get("attention", str, "bidirectional")
    width = denoiser.get("width", int, 32)
    identifier_dim = denoiser.get("identifier_dim", int, 0)
    variance = denoiser.get("variance", float, 0.01)
    shared_variance = denoiser.get("shared_variance", float, 0.0)
    null_variance = denoiser.get("null_variance", float, 1.0)
    denoiser.check_all_used()

    training = get("training")
    epochs = training.get("epochs", int, 100)
    lr = training.get("lr", float, 3e-5)
    batch = training.get("batch", int, 5)
    scale_lr = training.get("scale_lr", _bool, True)
    drop_probability = training.get("drop_probability", float, 0.1)
    training.check_all_used()

    metrics = get("metrics")
    embedder = EmbedderSpec(
        kind=metrics.get("embedder", str, "flatten"),
        seed=metrics.get("seed", int, 0),
        output_dim=metrics.get("output_dim", int, 64),
    )
    frame_shape = metrics.get("frame_shape", _shape, (16, 16))
    noise_floor = metrics.get("noise_floor", float, 0.0)
    metrics.check_all_used()

    scenes: tuple = ()
    if sections.get("scenes"):
        scenes = tuple(
            _with_line_offset(
                parse_scene_specs, sections["scenes"], frame_shape, noise_floor
            )
        )
        if scenes[0][0] != 0:
            raise ValueError("The first scene must start at frame 0.")
    conditions = None
    if sections.get("conditions"):
        conditions = _with_line_offset(parse_condition_track, sections["conditions"])

    return RunManifest(
        mode=mode,
        seed=seed,
        repeat=repeat,
        schedule=schedule,
        total_frames=total_frames,
        window=window,
        stride=stride,
        weights=weight_kind,
        sampler=sampler_kind,
        steps=steps,
        guidance_scale=guidance_scale,
        smoothing=smoothing,
        denoiser=denoiser_kind,
        checkpoint=checkpoint,
        checkpoint_hash=checkpoint_hash,
        attention=attention,
        width=width,
        identifier_dim=identifier_dim,
        variance=variance,
        shared_variance=shared_variance,
        null_variance=null_variance,
        epochs=epochs,
        lr=lr,
        batch=batch,
        scale_lr=scale_lr,
        drop_probability=drop_probability,
        scenes=scenes,
        conditions=conditions,
        input=input_path,
        frame_shape=frame_shape,
        noise_floor=noise_floor,
        frame_rate=frame_rate,
        embedder=embedder,
    )


def read_manifest(path: PathLike) -> RunManifest:
    with open(path) as f:
        text = f.read()
    try:
        return parse_manifest(text)
    except ValueError as e:
        raise ValueError(f"{path}: {e}") from e


def format_manifest(manifest: RunManifest) -> str:
    """Writes the fully-resolved manifest. Parsing the result with
    [`codenoise.parse_manifest`][] and formatting again gives the same text."""
    m = manifest
    lines = [
        "[run]",
        f"mode = {m.mode}",
        f"seed = {m.seed}",
        f"repeat = {m.repeat}",
        f"frame_rate = {m.frame_rate!r}",
    ]
    if m.input is not None:
        lines.append(f"input = {m.input}")
    lines += ["", "[schedule]", schedule_to_text(m.schedule).rstrip("\n")]
    lines += [
        "",
        "[layout]",
        f"total_frames = {m.total_frames}",
        f"window = {m.window}",
        f"stride = {m.stride}",
        f"pad = {m.pad}",
        "",
        "[weights]",
        f"kind = {m.weights}",
        "",
        "[sampler]",
        f"kind = {m.sampler}",
        f"steps = {m.steps}",
        f"guidance_scale = {m.guidance_scale!r}",
        f"smoothing = {m.smoothing!r}",
        "",
        "[denoiser]",
        f"kind = {m.denoiser}",
        f"attention = {m.attention}",
        f"width = {m.width}",
        f"identifier_dim = {m.identifier_dim}",
        f"variance = {m.variance!r}",
        f"shared_variance = {m.shared_variance!r}",
        f"null_variance = {m.null_variance!r}",
    ]
    if m.checkpoint is not None:
        lines.append(f"checkpoint = {m.checkpoint}")
    if m.checkpoint_hash is not None:
        lines.append(f"hash = {m.checkpoint_hash}")
    lines += [
        "",
        "[training]",
        f"epochs = {m.epochs}",
        f"lr = {m.lr!r}",
        f"batch = {m.batch}",
        f"scale_lr = {m.scale_lr}",
        f"drop_probability = {m.drop_probability!r}",
        "",
        "[metrics]",
        f"embedder = {m.embedder.kind}",
        f"seed = {m.embedder.seed}",
        f"output_dim = {m.embedder.output_dim}",
        f"frame_shape = {m.frame_shape[0]},{m.frame_shape[1]}",
        f"noise_floor = {m.noise_floor!r}",
    ]
    if m.scenes:
        lines += ["", "[scenes]", format_scene_specs(m.scenes).rstrip("\n")]
    if m.conditions is not None:
        lines += ["", "[conditions]", format_condition_track(m.conditions).rstrip("\n")]
    return "\n".join(lines) + "\n"


def describe_manifest(manifest: RunManifest) -> str:
    """A short human-readable summary, for logs."""
    summary = dict(
        mode=manifest.mode,
        frames=manifest.total_frames,
        pad=manifest.pad,
        window=manifest.window,
        stride=manifest.stride,
        denoiser=manifest.denoiser,
        sampler=manifest.sampler,
        steps=manifest.steps,
        guidance_scale=manifest.guidance_scale,
        seed=manifest.seed,
        repeat=manifest.repeat,
    )
    return wl.pformat(summary)
