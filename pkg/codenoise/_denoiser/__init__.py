from .analytic import (
    AbstractGaussianFamily as AbstractGaussianFamily,
    analytic_predict as analytic_predict,
    AnalyticGaussianDenoiser as AnalyticGaussianDenoiser,
    SceneGaussians as SceneGaussians,
    TabulatedGaussians as TabulatedGaussians,
)
from .base import AbstractDenoiser as AbstractDenoiser
from .learned import (
    anchor_frame as anchor_frame,
    attention_edges as attention_edges,
    attention_graph as attention_graph,
    AttentionMode as AttentionMode,
    crossframe_kv as crossframe_kv,
    kv_indices as kv_indices,
    reachability as reachability,
    TinyLearnedDenoiser as TinyLearnedDenoiser,
)
from .train import (
    convergence_epoch as convergence_epoch,
    has_converged as has_converged,
    OneShotSolution as OneShotSolution,
    train_one_shot as train_one_shot,
)
