"""Training-free blind anomaly detection on contaminated image sets.

Builds a memory bank of locally pooled multi-scale patch features from the
unlabeled set itself, scores each patch by the mean distance to its K nearest
bank rows, and evaluates with threshold-free metrics (AUROC, PRO). No normal
training data or labels are required.
"""

__version__ = "0.1.0"

from .bank import (
    InsufficientBankError,
    MemoryBank,
    NeighborSet,
    assemble,
    coreset_subsample,
    load_bank,
    query_knn,
    query_knn_batch,
    save_bank,
)
from .evaluation import (
    EvalReport,
    auroc,
    connected_components,
    evaluate_run,
    pixel_auroc,
    pro_score,
)
from .features import (
    LayerFeatureMap,
    PatchFeatureMap,
    align_and_concat,
    bilinear_resize,
    build_patch_feature_map,
    load_patch_feature_map,
    local_average_pool,
)
from .manifest import (
    BadSetting,
    DatasetManifest,
    ImageRecord,
    build_bad_setting,
    load_manifest,
    save_manifest,
)
from .scoring import (
    LofModel,
    RawScoreMap,
    ScoreMap,
    ScorerConfig,
    default_k_for_ratio,
    image_score,
    lof_score,
    patch_score,
    score_feature_map,
    score_feature_map_sweep,
    score_image,
    upsample_and_smooth,
)
from .synthetic import SynthConfig, generate_bad_dataset
from .tensorfile import read_tensor, write_tensor
