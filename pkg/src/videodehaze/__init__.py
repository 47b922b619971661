"""Progressive multi-frame video dehazing.

Restores hazy video by fusing overlapping frame triplets in two stages and
refining the result against the original frame, guided by dark-channel haze
density maps. Ships with a synthetic-haze data engine, a training loop and
PSNR/SSIM evaluation.
"""

from .errors import (
    CheckpointVersionError,
    ConfigError,
    DimensionError,
    DomainError,
    NonFiniteLossError,
)
from .frames import (
    Frame,
    FrameSequence,
    SamplePair,
    TimeUnit,
    load_clip_pair,
    load_frame,
    load_paired_clips,
    load_sequence,
    multi_scale_expand,
    random_crop_pair,
    save_frame,
    window,
)
from .haze import (
    HazeFieldSpec,
    HazeParams,
    dark_channel,
    estimate_haze_map,
    generate_haze_sequence,
    invert_hazy,
    synthesize_hazy,
)
from .fusion import FusionConfig, FusionNet, build_fusion, fusion_forward
from .refine import RefineConfig, RefineNet, build_refine, refine_forward
from .pipeline import (
    MODE_FULL,
    MODE_STAGE2_ONLY,
    MODES,
    DehazeModel,
    StageOutputs,
    build_model,
    dehaze_sequence,
    load_checkpoint,
    model_forward,
    model_forward_stage2,
    save_checkpoint,
)
from .losses import FeatureExtractor, LossWeights, perceptual_loss, smooth_l1, total_loss
from .metrics import EvalReport, evaluate_clip, psnr, ssim
from .trainer import TrainConfig, TrainState, fit, lr_schedule, train_step
from .config import RunConfig, build_extractor, load_run_config, resolve, run_config_from_dict

__version__ = "0.1.0"

__all__ = [
    "CheckpointVersionError", "ConfigError", "DimensionError", "DomainError",
    "NonFiniteLossError",
    "Frame", "FrameSequence", "TimeUnit", "SamplePair",
    "load_frame", "save_frame", "load_sequence", "load_clip_pair", "load_paired_clips",
    "window", "random_crop_pair", "multi_scale_expand",
    "HazeParams", "HazeFieldSpec", "synthesize_hazy", "invert_hazy",
    "estimate_haze_map", "dark_channel", "generate_haze_sequence",
    "FusionConfig", "FusionNet", "build_fusion", "fusion_forward",
    "RefineConfig", "RefineNet", "build_refine", "refine_forward",
    "DehazeModel", "StageOutputs", "build_model", "model_forward", "model_forward_stage2",
    "dehaze_sequence", "save_checkpoint", "load_checkpoint",
    "MODE_FULL", "MODE_STAGE2_ONLY", "MODES",
    "LossWeights", "FeatureExtractor", "smooth_l1", "perceptual_loss", "total_loss",
    "EvalReport", "psnr", "ssim", "evaluate_clip",
    "TrainConfig", "TrainState", "lr_schedule", "train_step", "fit",
    "RunConfig", "run_config_from_dict", "load_run_config", "resolve", "build_extractor",
]
