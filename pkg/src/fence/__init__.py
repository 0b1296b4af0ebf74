"""FENCE: feedback-controlled classifier-free guidance for diffusion
imputation of spatial-temporal grids, with an exactly-verifiable Gaussian
oracle backend and a small trainable denoiser."""

from .backends import (ConditioningContext, ContaminatedBackend, DenoiserBackend,
                       OracleBackend, conditional_context, node_affinity,
                       oracle_cond_score, oracle_uncond_score,
                       unconditional_context)
from .clustering import (cluster_log_posterior, cluster_scales,
                         default_cluster_count, kmeans)
from .diffusion import (NoiseSchedule, noise_from_score, q_sample,
                        quadratic_schedule, reverse_mean, reverse_step,
                        score_from_noise, sincos_embedding)
from .errors import (ConfigError, DataError, DivergenceError, FenceError,
                     InvalidInputError, StateError)
from .grid import (DatasetSplit, GraphSpec, MaskMatrix, TrafficGrid,
                   chronological_split, denormalize, load_grid_csv,
                   load_mask_csv, normalize, observed_stats, save_grid_csv,
                   save_mask_csv, sliding_windows, zero_fill)
from .guidance import (GuidanceConfig, PosteriorTracker, calibrate_delta,
                       calibrate_tau, calibrated_constants, combine_scores,
                       guidance_gradient_norm, guidance_scale, mode_from_string,
                       posterior_update, step_at_time)
from .masking import MaskPatternConfig, mask_sc_tc, mask_sr_tc, patch_bounds
from .metrics import crps, crps_masked, point_metrics
from .neural import NetConfig, NeuralDenoiser
from .checkpoint import load_checkpoint, save_checkpoint
from .sampler import ImputationResult, TraceRow, emit_trace, impute
from .training import (TrainConfig, TrainResult, finetune_conditional,
                       stage1_defaults, stage2_defaults, train_unconditional)
from .world import (GaussianOracleWorld, gaussian_mixture_1d,
                    make_contaminated_scores, make_gaussian_world,
                    observations_from_mask, ring_hops)

__version__ = "0.1.0"

__all__ = [
    "ConditioningContext", "ContaminatedBackend", "DenoiserBackend",
    "OracleBackend", "conditional_context", "node_affinity",
    "oracle_cond_score", "oracle_uncond_score", "unconditional_context",
    "cluster_log_posterior", "cluster_scales", "default_cluster_count", "kmeans",
    "NoiseSchedule", "noise_from_score", "q_sample", "quadratic_schedule",
    "reverse_mean", "reverse_step", "score_from_noise", "sincos_embedding",
    "ConfigError", "DataError", "DivergenceError", "FenceError",
    "InvalidInputError", "StateError",
    "DatasetSplit", "GraphSpec", "MaskMatrix", "TrafficGrid",
    "chronological_split", "denormalize", "load_grid_csv", "load_mask_csv",
    "normalize", "observed_stats", "save_grid_csv", "save_mask_csv",
    "sliding_windows", "zero_fill",
    "GuidanceConfig", "PosteriorTracker", "calibrate_delta", "calibrate_tau",
    "calibrated_constants", "combine_scores", "guidance_gradient_norm",
    "guidance_scale", "mode_from_string", "posterior_update", "step_at_time",
    "MaskPatternConfig", "mask_sc_tc", "mask_sr_tc", "patch_bounds",
    "crps", "crps_masked", "point_metrics",
    "NetConfig", "NeuralDenoiser",
    "load_checkpoint", "save_checkpoint",
    "ImputationResult", "TraceRow", "emit_trace", "impute",
    "TrainConfig", "TrainResult", "finetune_conditional", "stage1_defaults",
    "stage2_defaults", "train_unconditional",
    "GaussianOracleWorld", "gaussian_mixture_1d", "make_contaminated_scores",
    "make_gaussian_world", "observations_from_mask", "ring_hops",
    "__version__",
]
