import argparse
import dataclasses
import hashlib
import importlib.util
import json
import logging
import math
import os
import pathlib
import sys
from collections.abc import Sequence
from typing import Optional

import equinox as eqx
import jax
import jax.numpy as jnp
import jax.random as jr
import wadler_lindig as wl

from ._checkpoint import checkpoint_hash, load_checkpoint, save_checkpoint
from ._co_denoise import edit_long, invert_long, sample_isolated, sample_long
from ._conditions import (
    assign_clip_conditions,
    ClipIdentifier,
    ConditionEmbedding,
    interpolate_conditions,
    make_identifiers,
)
from ._denoiser import (
    AbstractDenoiser,
    AnalyticGaussianDenoiser,
    SceneGaussians,
    TinyLearnedDenoiser,
    train_one_shot,
)
from ._io import dump_frames_pgm, load_sequence, save_sequence
from ._manifest import describe_manifest, format_manifest, read_manifest, RunManifest
from ._metrics import (
    frame_consistency,
    MetricsRow,
    textual_alignment,
    write_metrics_csv,
)
from ._progress_meter import (
    AbstractProgressMeter,
    NoProgressMeter,
    TextProgressMeter,
    TqdmProgressMeter,
)
from ._report import report
from ._schedule import GuidanceConfig
from ._sequence import LongSequence
from ._solution import NumericalError
from ._synthdata import CONDITION_DIM, render_regions, spec_to_condition
from ._windowing import ClipLayout, coverage_index, make_layout, make_weights


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_NUMERICAL_ERROR = 2


class ExperimentConfig(eqx.Module):
    """What the command line asks for.

    **Attributes:**

    - `manifest`: path to the run manifest.
    - `out`: the output directory; created if missing.
    - `mode`: overrides `[run] mode` of the manifest if given.
    - `workers`: threads used to denoise clips.
    - `seed`: overrides `[run] seed` if given.
    - `repeat`: overrides `[run] repeat` if given.
    - `dump_frames`: also write every output frame as a PGM image.
    - `progress`: `"none"`, `"text"` or `"tqdm"`.
    """

    manifest: str = eqx.field(static=True)
    out: str = eqx.field(static=True)
    mode: Optional[str] = eqx.field(static=True, default=None)
    workers: int = eqx.field(static=True, default=1)
    seed: Optional[int] = eqx.field(static=True, default=None)
    repeat: Optional[int] = eqx.field(static=True, default=None)
    dump_frames: bool = eqx.field(static=True, default=False)
    progress: str = eqx.field(static=True, default="none")

    def __check_init__(self):
        if self.workers < 1:
            raise ValueError(f"`workers` must be at least 1, got {self.workers}.")
        if not os.path.isfile(self.manifest):
            raise ValueError(f"Manifest {self.manifest} does not exist.")
        if self.progress not in ("none", "text", "tqdm"):
            raise ValueError(f"Unknown progress meter {self.progress!r}.")


def _progress_meter(config: ExperimentConfig) -> AbstractProgressMeter:
    if config.progress == "text":
        return TextProgressMeter()
    if config.progress == "tqdm":
        if importlib.util.find_spec("tqdm") is None:
            logger.warning("tqdm is not installed; not showing progress.")
            return NoProgressMeter()
        return TqdmProgressMeter()
    return NoProgressMeter()


def _resolve(path: str, base: pathlib.Path) -> pathlib.Path:
    p = pathlib.Path(path)
    return p if p.is_absolute() else base / p


class _Run:
    """The state shared by the modes of one invocation."""

    def __init__(self, config: ExperimentConfig, manifest: RunManifest):
        self.config = config
        self.manifest = manifest
        self.base = pathlib.Path(config.manifest).resolve().parent
        self.out = pathlib.Path(config.out)
        self.meter = _progress_meter(config)
        self.layout = make_layout(
            manifest.padded_frames, manifest.window, manifest.stride
        )
        self.weights = make_weights(manifest.weights, self.layout)
        self.cfg = GuidanceConfig(scale=manifest.guidance_scale)
        self.summary: list[str] = []
        self.rows: list[MetricsRow] = []

    # Conditions

    def scene_conditions(self, layout: ClipLayout) -> list[ConditionEmbedding]:
        m = self.manifest
        if not m.scenes:
            raise ValueError(f"Mode {m.mode!r} needs a [scenes] section.")
        regions = [
            (frames, spec_to_condition(spec))
            for frames, spec in m.scene_regions(layout.total_frames)
        ]
        return assign_clip_conditions(regions, layout)

    def target_conditions(self) -> list[ConditionEmbedding]:
        """The [conditions] track interpolated over the clips, or else the scenes."""
        if self.manifest.conditions is not None:
            conditions = interpolate_conditions(
                self.manifest.conditions, self.layout.clip_count
            )
        else:
            conditions = self.scene_conditions(self.layout)
        if conditions[0].dim != CONDITION_DIM:
            raise ValueError(
                f"Conditions must have {CONDITION_DIM} entries, got "
                f"{conditions[0].dim}."
            )
        return conditions

    @staticmethod
    def frame_conditions(
        conditions: Sequence[ConditionEmbedding], layout: ClipLayout
    ) -> list[ConditionEmbedding]:
        # Frame `j` is labelled with the mean condition of the clips covering it.
        index = coverage_index(layout)
        out = []
        for j in range(layout.total_frames):
            clips = [i for i, _ in index[j]]
            vector = sum(conditions[i].vector for i in clips) / len(clips)
            out.append(ConditionEmbedding(vector))
        return out

    # Data and models

    def video(self, total_frames: Optional[int] = None) -> LongSequence:
        m = self.manifest
        if total_frames is None:
            total_frames = m.padded_frames
        if m.input is not None:
            v = load_sequence(_resolve(m.input, self.base))
            if v.num_frames != m.total_frames:
                raise ValueError(
                    f"{m.input} has {v.num_frames} frames but `[layout] total_frames` "
                    f"is {m.total_frames}."
                )
        else:
            if not m.scenes:
                raise ValueError("Need either `[run] input` or a [scenes] section.")
            v = render_regions(m.scene_regions(m.total_frames), seed=m.seed)
        last = jnp.repeat(v.frames[-1:], total_frames - v.num_frames, axis=0)
        frames = jnp.concatenate([v.frames, last])
        return LongSequence(frames, frame_rate=m.frame_rate)

    def denoiser(self) -> tuple[AbstractDenoiser, Optional[ClipIdentifier]]:
        m = self.manifest
        if m.denoiser == "analytic":
            family = SceneGaussians(
                m.frame_shape,
                variance=m.variance,
                shared_variance=m.shared_variance,
                null_variance=m.null_variance,
            )
            denoiser = AnalyticGaussianDenoiser(family, m.schedule)
            digest = checkpoint_hash(denoiser)
            if m.checkpoint_hash is not None and digest != m.checkpoint_hash:
                raise ValueError(
                    f"The analytic denoiser has hash {digest}, but the manifest "
                    f"expects {m.checkpoint_hash}."
                )
            self.manifest = dataclasses.replace(m, checkpoint_hash=digest)
            return denoiser, None
        if m.checkpoint is None:
            raise ValueError(
                "A learned denoiser needs `[denoiser] checkpoint`; run the "
                "`train_one_shot` mode first."
            )
        path = _resolve(m.checkpoint, self.base)
        with open(path, "rb") as f:
            digest = hashlib.sha256(f.read()).hexdigest()
        if m.checkpoint_hash is not None and digest != m.checkpoint_hash:
            raise ValueError(
                f"{path} has hash {digest}, but the manifest expects "
                f"{m.checkpoint_hash}."
            )
        denoiser, identifiers = load_checkpoint(path)
        if denoiser.num_steps != m.schedule.num_steps:
            raise ValueError(
                f"The checkpoint was trained for {denoiser.num_steps} steps but the "
                f"schedule has {m.schedule.num_steps}."
            )
        if denoiser.mode != m.attention:
            denoiser = denoiser.with_mode(m.attention)
        self.manifest = dataclasses.replace(
            m,
            checkpoint=str(path.resolve()),
            checkpoint_hash=digest,
        )
        return denoiser, identifiers

    # Outputs

    def record_metrics(
        self,
        method: str,
        seed: int,
        v: LongSequence,
        frame_conditions: Sequence[ConditionEmbedding],
    ) -> None:
        m = self.manifest
        frames = LongSequence(v.frames[: m.total_frames], frame_rate=v.frame_rate)
        consistency = frame_consistency(frames, m.embedder)
        mean, var = textual_alignment(
            frames, frame_conditions[: m.total_frames], m.embedder
        )
        self.rows.append(
            MetricsRow(
                run_id=f"{m.mode}-{seed}",
                method=method,
                frame_consistency=consistency,
                align_mean=mean,
                align_var_x100=100 * var,
                seed=seed,
            )
        )
        self.summary.append(
            f"{method} seed {seed}: frame_consistency {consistency:.6f}, "
            f"alignment {mean:.6f} (variance x100 {100 * var:.6f})"
        )

    def save(self, name: str, v: LongSequence, trim: bool = True) -> None:
        if trim:
            v = LongSequence(v.frames[: self.manifest.total_frames], v.frame_rate)
        save_sequence(self.out / f"{name}.seq", v)
        if self.config.dump_frames:
            dump_frames_pgm(self.out / name, v)

    def finish(self) -> None:
        if self.rows:
            write_metrics_csv(self.out / "metrics.csv", self.rows)
        with open(self.out / "manifest.txt", "w") as f:
            f.write(format_manifest(self.manifest))
        with open(self.out / "summary.txt", "w") as f:
            f.write(describe_manifest(self.manifest) + "\n\n")
            f.write("\n".join(self.summary) + "\n")

    def seeds(self) -> range:
        m = self.manifest
        return range(m.seed, m.seed + m.repeat)

    def sample(
        self, denoiser, identifiers, conditions, seed, layout=None, weights=None
    ):
        m = self.manifest
        return sample_long(
            denoiser,
            self.layout if layout is None else layout,
            conditions,
            m.schedule,
            self.cfg,
            m.steps,
            seed,
            identifiers=identifiers,
            weights=self.weights if weights is None else weights,
            sampler=m.sampler,
            smoothing=m.smoothing,
            frame_shape=m.frame_shape,
            workers=self.config.workers,
            progress_meter=self.meter,
        )


def _generate(run: _Run) -> None:
    denoiser, identifiers = run.denoiser()
    conditions = run.target_conditions()
    frame_conditions = run.frame_conditions(conditions, run.layout)
    for seed in run.seeds():
        v = run.sample(denoiser, identifiers, conditions, seed)
        run.save(f"sample_{seed}", v)
        run.record_metrics("co_denoise", seed, v, frame_conditions)


def _invert(run: _Run) -> None:
    m = run.manifest
    denoiser, identifiers = run.denoiser()
    noise = invert_long(
        denoiser,
        run.video(),
        run.layout,
        run.scene_conditions(run.layout),
        m.schedule,
        m.steps,
        identifiers=identifiers,
        weights=run.weights,
        workers=run.config.workers,
        progress_meter=run.meter,
    )
    # The noise keeps its padding frames, so that it can seed a sampler directly.
    run.save("noise", noise, trim=False)
    run.summary.append(
        f"inverted noise: mean {float(jnp.mean(noise.frames)):.6f}, "
        f"std {float(jnp.std(noise.frames)):.6f}"
    )


def _edit(run: _Run) -> None:
    m = run.manifest
    if m.conditions is None:
        raise ValueError("Mode 'edit' needs the new prompts in a [conditions] section.")
    denoiser, identifiers = run.denoiser()
    new_conditions = run.target_conditions()
    edited = edit_long(
        denoiser,
        run.video(),
        run.layout,
        run.scene_conditions(run.layout),
        new_conditions,
        m.schedule,
        run.cfg,
        m.steps,
        identifiers=identifiers,
        weights=run.weights,
        smoothing=m.smoothing,
        workers=run.config.workers,
        progress_meter=run.meter,
    )
    run.save("edited", edited)
    run.record_metrics(
        "edit", m.seed, edited, run.frame_conditions(new_conditions, run.layout)
    )


def _train_one_shot(run: _Run) -> None:
    m = run.manifest
    if m.denoiser != "learned":
        raise ValueError("Mode 'train_one_shot' needs `[denoiser] kind = learned`.")
    key = jr.PRNGKey(m.seed)
    dkey, ikey, tkey = jr.split(key, 3)
    denoiser = TinyLearnedDenoiser(
        m.window,
        m.frame_shape,
        CONDITION_DIM,
        m.schedule.num_steps,
        identifier_dim=m.identifier_dim or None,
        width=m.width,
        mode=m.attention,
        key=dkey,
    )
    identifiers = None
    if m.identifier_dim:
        identifiers = make_identifiers(
            run.layout.clip_count,
            m.identifier_dim,
            key=ikey,
            drop_probability=m.drop_probability,
        )
    solution = train_one_shot(
        denoiser,
        run.video(),
        run.layout,
        run.scene_conditions(run.layout),
        identifiers,
        m.schedule,
        epochs=m.epochs,
        lr=m.lr,
        batch=m.batch,
        scale_lr=m.scale_lr,
        key=tkey,
        progress_meter=run.meter,
    )
    digest = save_checkpoint(
        run.out / "checkpoint.bin", solution.denoiser, solution.identifiers
    )
    with open(run.out / "losses.txt", "w") as f:
        f.writelines(f"{loss!r}\n" for loss in solution.losses.tolist())
    # Relative to the output directory, where the resolved manifest is written.
    run.manifest = dataclasses.replace(
        m, checkpoint="checkpoint.bin", checkpoint_hash=digest
    )
    losses = solution.losses.tolist()
    final = losses[-1] if losses else math.nan
    run.summary.append(
        f"trained {len(losses)} epochs, final loss {final:.6g}, converged at epoch "
        f"{solution.stats['convergence_epoch']}"
    )


def _ablation_frames(m: RunManifest) -> int:
    # Both the overlapping layout and the disjoint one must tile the sequence.
    period = math.lcm(m.window, m.stride)
    excess = max(m.total_frames - m.window, 0)
    return m.window + period * math.ceil(excess / period)


def _isolated_identifiers(
    identifiers: Optional[ClipIdentifier], layout: ClipLayout, isolated: ClipLayout
) -> tuple[Optional[ClipIdentifier], str]:
    """Identifiers for the disjoint clips of the isolated baseline, and how they were
    chosen.

    When the stride divides the window, every disjoint clip starts where an
    overlapping clip starts and takes that clip's trained identifier. Otherwise the
    disjoint clips get the dropped (zero) identifier.
    """
    if identifiers is None:
        return None, "none"
    if layout.window % layout.stride == 0:
        every = layout.window // layout.stride
        vectors = identifiers.vectors[::every][: isolated.clip_count]
        source = "trained, from the overlapping clip with the same first frame"
    else:
        vectors = jnp.zeros((isolated.clip_count, identifiers.dim))
        source = "dropped (zero), as the stride does not divide the window"
    isolated_identifiers = ClipIdentifier(
        vectors, drop_probability=identifiers.drop_probability
    )
    return isolated_identifiers, source


def _ablate(run: _Run) -> None:
    m = run.manifest
    total = _ablation_frames(m)
    if total != m.padded_frames:
        logger.info("Padding to %d frames so that disjoint clips tile too.", total)
    layout = make_layout(total, m.window, m.stride)
    isolated = make_layout(total, m.window, m.window)
    weights = make_weights(m.weights, layout)
    denoiser, identifiers = run.denoiser()
    conditions = run.scene_conditions(layout)
    isolated_conditions = run.scene_conditions(isolated)
    frame_conditions = run.frame_conditions(conditions, layout)
    if identifiers is not None and identifiers.num_clips != layout.clip_count:
        raise ValueError(
            f"The checkpoint has identifiers for {identifiers.num_clips} clips but "
            f"the layout has {layout.clip_count}."
        )
    isolated_identifiers, source = _isolated_identifiers(identifiers, layout, isolated)
    logger.info("Isolated baseline identifiers: %s.", source)
    run.summary.append(f"isolated baseline identifiers: {source}")
    sparse = None
    if isinstance(denoiser, TinyLearnedDenoiser):
        sparse = denoiser.with_mode("sparse_causal")
    else:
        logger.warning(
            "The sparse-causal variant needs a learned denoiser; skipping it."
        )
    for seed in run.seeds():
        v = run.sample(denoiser, identifiers, conditions, seed, layout, weights)
        run.record_metrics("co_denoise", seed, v, frame_conditions)
        v = sample_isolated(
            denoiser,
            isolated,
            isolated_conditions,
            m.schedule,
            run.cfg,
            m.steps,
            seed,
            identifiers=isolated_identifiers,
            frame_shape=m.frame_shape,
            workers=run.config.workers,
        )
        run.record_metrics("isolated", seed, v, frame_conditions)
        if sparse is not None:
            v = run.sample(sparse, identifiers, conditions, seed, layout, weights)
            run.record_metrics("sparse-causal", seed, v, frame_conditions)


_MODES = dict(
    generate=_generate,
    invert=_invert,
    edit=_edit,
    train_one_shot=_train_one_shot,
    ablate=_ablate,
)


def run(config: ExperimentConfig) -> int:
    """Executes one experiment and returns the process exit status: `0` on success,
    `1` for a configuration error, `2` for a numerical failure (in which case
    `diagnostic.json` is written to the output directory)."""
    out = pathlib.Path(config.out)
    try:
        manifest = read_manifest(config.manifest)
        overrides = dict(mode=config.mode, seed=config.seed, repeat=config.repeat)
        overrides = {k: v for k, v in overrides.items() if v is not None}
        if overrides:
            manifest = dataclasses.replace(manifest, **overrides)
        if manifest.input is not None:
            base = pathlib.Path(config.manifest).resolve().parent
            absolute = str(_resolve(manifest.input, base).resolve())
            manifest = dataclasses.replace(manifest, input=absolute)
        out.mkdir(parents=True, exist_ok=True)
        logger.info("Running\n%s", describe_manifest(manifest))
        state = _Run(config, manifest)
        _MODES[manifest.mode](state)
        state.finish()
    except NumericalError as e:
        logger.error("%s", e)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "diagnostic.json", "w") as f:
            json.dump(
                dict(error=str(e), **e.diagnostic), f, indent=2, default=repr
            )
        return EXIT_NUMERICAL_ERROR
    except (ValueError, OSError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG_ERROR
    logger.info("Wrote outputs to %s.", out)
    return EXIT_OK


def _run_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codenoise",
        description="Long-sequence generation and editing by temporal co-denoising.",
        epilog="Use `codenoise report CSV...` to summarise metrics files.",
    )
    parser.add_argument("--config", required=True, help="the run manifest")
    parser.add_argument("--out", required=True, help="the output directory")
    parser.add_argument(
        "--mode", choices=sorted(_MODES), help="overrides `[run] mode`"
    )
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--seed", type=int, help="overrides `[run] seed`")
    parser.add_argument("--repeat", type=int, help="overrides `[run] repeat`")
    parser.add_argument(
        "--dump-frames", action="store_true", help="also write PGM frames"
    )
    parser.add_argument(
        "--progress", choices=("none", "text", "tqdm"), default="none"
    )
    parser.add_argument("--log-level", default="INFO")
    return parser


def _report_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codenoise report", description="Summarise metrics CSV files."
    )
    parser.add_argument("csv", nargs="+", help="CSV files written by a run")
    parser.add_argument("--out", help="directory for the plot data files")
    parser.add_argument("--log-level", default="INFO")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    jax.config.update("jax_enable_x64", True)
    if argv and argv[0] == "report":
        args = _report_parser().parse_args(argv[1:])
        logging.basicConfig(level=args.log_level.upper())
        try:
            text = report(args.csv, args.out)
        except (ValueError, OSError) as e:
            logger.error("%s", e)
            return EXIT_CONFIG_ERROR
        print(text, end="")
        return EXIT_OK
    args = _run_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper())
    try:
        config = ExperimentConfig(
            manifest=args.config,
            out=args.out,
            mode=args.mode,
            workers=args.workers,
            seed=args.seed,
            repeat=args.repeat,
            dump_frames=args.dump_frames,
            progress=args.progress,
        )
    except ValueError as e:
        logger.error("%s", e)
        return EXIT_CONFIG_ERROR
    logger.debug("%s", wl.pformat(config))
    return run(config)
