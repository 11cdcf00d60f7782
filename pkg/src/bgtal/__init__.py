"""Background-click supervised temporal action localization."""

from .data import (
    Click,
    DatasetManifest,
    FeatureSequence,
    GroundTruthSegment,
    VideoAnnotation,
    load_annotation,
    load_dataset,
    load_feature_file,
    load_manifest,
    map_time_to_frame,
    rescale_to_fixed_length,
    write_feature_file,
)
from .clicks import (
    generate_synthetic_dataset,
    simulate_action_clicks,
    simulate_background_clicks,
)
from .network import (
    CASNet,
    cosine_affinity,
    load_checkpoint,
    local_affinity_matrix,
    modulated_temporal_conv,
    save_checkpoint,
    select_pseudo_action_frames,
    topk_aggregate,
    topk_hit_ratio,
)
from .losses import (
    affinity_loss,
    frame_cls_loss,
    score_separation_loss,
    video_cls_loss,
)
from .trainer import TrainConfig, gradcheck, train
from .inference import DetectedInstance, localize, oic_score, temporal_nms
from .evaluation import average_precision, map_at, tiou

__version__ = "0.1.0"
