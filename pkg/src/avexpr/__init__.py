"""avexpr: audio-visual frame-level expression recognition toolkit.

Feature alignment, mixture-of-experts and gated-fusion classification heads
with hand-written gradients, temporal smoothing of per-frame logits,
macro-F1 evaluation, padding augmentation, and the binary file formats
(AFF1/AFA1/LGT1/NTC1) that tie the stages together.
"""

__version__ = "0.1.0"

from .datamodel import (
    SCALES,
    ClassWeights,
    ExpressionLabel,
    FoldSplit,
    FrameRecord,
    VideoSequence,
    compute_class_weights,
    make_folds,
    read_feature_file,
    read_manifest,
    write_feature_file,
    write_manifest,
)
from .alignment import (
    AlignmentConfig,
    AlignMode,
    AudioTrack,
    align_audio,
    attach_audio,
    average_multiscale,
    build_frame_pairs,
    pairs_from_sequence,
    read_audio_track,
    write_audio_track,
)
from .errors import (
    CorruptionError,
    FormatError,
    ShapeError,
    ToolkitError,
    TrainingError,
    ValidationError,
)
from .fusion import (
    BaselineFusionParams,
    BaselineKind,
    GatedFusionParams,
    LinearProbeParams,
    baseline_forward,
    fusion_param_count,
    gated_forward,
    init_baseline_params,
    init_gated_params,
    init_probe_params,
)
from .metrics import ConfusionMatrix, confusion, evaluation_report, macro_f1
from .moe import MoEHeadParams, init_moe_params, moe_forward, moe_param_count
from .ndmath import Rng, read_named_tensors, write_named_tensors
from .smoothing import (
    SmoothingConfig,
    Strategy,
    decide,
    read_logits,
    smooth_logits,
    sweep_windows,
    write_logits,
)
from .imageops import FaceBox, PadAugConfig, crop_scaled, padaug, read_ppm, write_ppm
from .trainer import (
    AdamWState,
    HeadKind,
    TrainConfig,
    adamw_step,
    cross_validate,
    head_from_tensors,
    init_adamw,
    mixup_batch,
    predict_logits,
    soft_targets,
    train_head,
)
