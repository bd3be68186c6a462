import importlib.metadata

from ._checkpoint import (
    checkpoint_bytes as checkpoint_bytes,
    checkpoint_hash as checkpoint_hash,
    load_checkpoint as load_checkpoint,
    save_checkpoint as save_checkpoint,
)
from ._cli import ExperimentConfig as ExperimentConfig, main as main, run as run
from ._co_denoise import (
    edit_long as edit_long,
    invert_long as invert_long,
    sample_isolated as sample_isolated,
    sample_long as sample_long,
    smooth_adjacent_frames as smooth_adjacent_frames,
    trajectory_energy as trajectory_energy,
)
from ._conditions import (
    assign_clip_conditions as assign_clip_conditions,
    ClipIdentifier as ClipIdentifier,
    ConditionEmbedding as ConditionEmbedding,
    ConditionTrack as ConditionTrack,
    format_condition_track as format_condition_track,
    identifier_guided_noise as identifier_guided_noise,
    interpolate_conditions as interpolate_conditions,
    make_identifiers as make_identifiers,
    null_condition as null_condition,
    parse_condition_track as parse_condition_track,
)
from ._denoiser import (
    AbstractDenoiser as AbstractDenoiser,
    AbstractGaussianFamily as AbstractGaussianFamily,
    analytic_predict as analytic_predict,
    AnalyticGaussianDenoiser as AnalyticGaussianDenoiser,
    anchor_frame as anchor_frame,
    attention_edges as attention_edges,
    attention_graph as attention_graph,
    AttentionMode as AttentionMode,
    convergence_epoch as convergence_epoch,
    crossframe_kv as crossframe_kv,
    has_converged as has_converged,
    kv_indices as kv_indices,
    OneShotSolution as OneShotSolution,
    reachability as reachability,
    SceneGaussians as SceneGaussians,
    TabulatedGaussians as TabulatedGaussians,
    TinyLearnedDenoiser as TinyLearnedDenoiser,
    train_one_shot as train_one_shot,
)
from ._io import (
    dump_frames_pgm as dump_frames_pgm,
    load_sequence as load_sequence,
    save_sequence as save_sequence,
)
from ._manifest import (
    describe_manifest as describe_manifest,
    format_manifest as format_manifest,
    parse_manifest as parse_manifest,
    read_manifest as read_manifest,
    RunManifest as RunManifest,
)
from ._metrics import (
    alignment_statistics as alignment_statistics,
    CSV_HEADER as CSV_HEADER,
    embed_conditions as embed_conditions,
    embed_frames as embed_frames,
    EmbedderSpec as EmbedderSpec,
    frame_consistency as frame_consistency,
    MetricsRow as MetricsRow,
    read_metrics_csv as read_metrics_csv,
    textual_alignment as textual_alignment,
    write_metrics_csv as write_metrics_csv,
)
from ._progress_meter import (
    AbstractProgressMeter as AbstractProgressMeter,
    NoProgressMeter as NoProgressMeter,
    TextProgressMeter as TextProgressMeter,
    TqdmProgressMeter as TqdmProgressMeter,
)
from ._report import (
    compare as compare,
    MethodSummary as MethodSummary,
    PairedComparison as PairedComparison,
    report as report,
    sign_test as sign_test,
    summarise as summarise,
)
from ._schedule import (
    cfg_combine as cfg_combine,
    ddim_invert_step as ddim_invert_step,
    ddim_step as ddim_step,
    ddim_timesteps as ddim_timesteps,
    ddpm_posterior_mean as ddpm_posterior_mean,
    ddpm_step as ddpm_step,
    forward_diffuse as forward_diffuse,
    GuidanceConfig as GuidanceConfig,
    make_linear_schedule as make_linear_schedule,
    NoiseSchedule as NoiseSchedule,
    schedule_from_text as schedule_from_text,
    schedule_to_text as schedule_to_text,
)
from ._sequence import Clip as Clip, LongSequence as LongSequence
from ._solution import NumericalError as NumericalError, RESULTS as RESULTS
from ._synthdata import (
    CONDITION_DIM as CONDITION_DIM,
    condition_to_spec as condition_to_spec,
    format_scene_specs as format_scene_specs,
    parse_scene_specs as parse_scene_specs,
    render_condition_frames as render_condition_frames,
    render_regions as render_regions,
    render_scene as render_scene,
    scene_centers as scene_centers,
    SceneSpec as SceneSpec,
    spec_to_condition as spec_to_condition,
)
from ._windowing import (
    ClipLayout as ClipLayout,
    coverage_index as coverage_index,
    CoverageIndex as CoverageIndex,
    make_layout as make_layout,
    make_weights as make_weights,
    merge_lsq_oracle as merge_lsq_oracle,
    merge_objective as merge_objective,
    merge_weighted as merge_weighted,
    pad_to_layout as pad_to_layout,
    padding_needed as padding_needed,
    split as split,
    tent_weights as tent_weights,
    uniform_weights as uniform_weights,
    WeightScheme as WeightScheme,
)


__version__ = importlib.metadata.version("codenoise")
