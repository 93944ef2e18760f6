"""Cross-view object grouping and queryable 3D Gaussian feature fields.

Pipeline: segmentation masks from posed views are grouped into scene
objects, each object gets a distinct low-dimensional feature (a cell
center on a cubic lattice in the unit cube), per-Gaussian features are
trained so rendered feature maps reproduce the per-view targets, and
open-vocabulary queries select the best cell by embedding relevancy and
threshold the rendered map around its center.
"""

from .errors import (
    ContractViolation,
    DomainError,
    FormatError,
    GenerationError,
    GridfieldError,
    TrainingDiverged,
)
from .scene_data import (
    CANONICAL_NAMES,
    FEATURE_DIM,
    FEATURE_SCALE,
    Camera,
    ColorHistogram,
    Dataset,
    DatasetMeta,
    FeatureMap,
    GaussianCloud,
    GridCell,
    GridLattice,
    KeypointMatchSet,
    MaskRecord,
    MatchParams,
    PosedImage,
    QueryConfig,
    TrainConfig,
    Violation,
    decode_feature,
    encode_feature,
    validate_cloud,
    validate_dataset,
)
from .dataset_io import (
    load_dataset,
    load_embedding_file,
    load_gaussians,
    quantize_rgb,
    save_dataset,
    save_embedding_file,
    save_gaussians,
)
from .ingest import (
    builtin_match_pair,
    compute_color_histogram,
    denoise_masks,
    detect_and_match_keypoints,
    harris_corners,
    mask_iou,
)
from .mapping import (
    MappingResult,
    apply_mapping,
    bake_feature_maps,
    build_lattice,
    count_mask_correspondences,
    cross_view_grid_mapping,
    hybrid_similarity,
    lattice_side,
    load_mapping,
    save_mapping,
    similarity_clip,
    similarity_color,
)
from .splatting import (
    FeatureLoss,
    RenderConfig,
    Splat2D,
    backward_features,
    composite_pixel,
    feature_loss,
    project_gaussian,
    quat_to_rotation,
    render_feature_map,
    render_with_transmittance,
    train_features,
)
from .query import (
    QueryResult,
    SemanticField,
    extract_target_mask,
    relevancy_score,
    score_cells,
)
from .synth import (
    SyntheticScene,
    SyntheticSceneSpec,
    generate_synthetic_scene,
    load_truth,
    look_at_camera,
    preferred_query_view,
    project_points,
    save_scene_fixtures,
    truth_box,
)
from .evalharness import (
    ABLATION_CONFIGS,
    EvalReport,
    MaskMetrics,
    evaluate_field,
    evaluate_mapping,
    localization_hit,
    mask_metrics,
    run_ablation,
    run_pipeline,
)
from .service import (
    create_app,
    decode_mask_rle,
    encode_mask_rle,
    load_saved_queries,
)

__version__ = "0.1.0"
