"""Person re-identification toolkit.

Mid-level body-structure feature encoding (patch descriptors, locality
constrained coding over per-part codebooks, max pooling) plus
orientation-driven multi-shot matching with learned metrics.
"""

from .codebook import (
    BodyStructureCodebook,
    KmeansResult,
    SubCodebook,
    collect_part_pools,
    kmeans,
    learn_codebook,
    learn_codebook_from_pools,
)
from .core import (
    CHANNELS,
    N_ORIENTATIONS,
    Channel,
    ConfigError,
    DataError,
    DegenerateLabelsError,
    EmptyBagError,
    GalleryMismatchError,
    ManifestError,
    MixedIdentityError,
    NoValidPairsError,
    NumericError,
    PersonImage,
    RankDeficientError,
    ReidError,
    SingularCovarianceError,
    SingularSystemError,
    child_seed,
    is_similar_orientation,
    orientation_distance,
    orientation_mod,
)
from .encoding import (
    LlcParams,
    Signature,
    encode_image,
    llc_encode_exact,
    llc_encode_knn,
    llc_encode_knn_batch,
    pool_part,
)
from .evaluation import (
    CmcCurve,
    ExperimentConfig,
    ExperimentResult,
    cmc,
    load_dataset,
    load_manifest,
    report,
    run_experiment,
    synth_generate,
    write_dataset,
)
from .features import (
    Descriptor,
    Patch,
    build_weight_map,
    extract_patch_grid,
    hog_descriptor,
    lab_descriptor,
    lab_descriptors,
    resize_bilinear,
    sift_descriptor,
    sift_descriptors,
    whsv_descriptor,
    whsv_descriptors,
)
from .metric import (
    FusionWeights,
    KernelPcaModel,
    MetricModel,
    fit_kernel_pca,
    fit_kissme,
    fuse_distances,
    generate_pairs,
    kpca_project,
    mahalanobis,
    normalize_distances,
)
from .odboa import (
    AppearanceBag,
    BagSlot,
    MatchMethod,
    MatchResult,
    SelectionResult,
    adjacent_lookup,
    build_bag,
    distance_matrices,
    match_bags,
    pool_vectors,
    select_pairs,
    select_slot_pairs,
)
from .orientation import (
    OrientationClassifier,
    accuracy_adjacent,
    accuracy_same,
    predict_orientation,
    smooth_scores,
    train_orientation,
)
from .pyramid import BodyStructurePyramid, PartRegion, assign_center_y, build_pyramid

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
