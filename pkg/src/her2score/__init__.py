"""Segmentation-free HER-2 scoring from whole-slide image patches.

The pipeline tiles slides into 250x250 patches, filters tissue by
histogram, extracts color/texture descriptors, classifies patches, and
scores each slide from its per-class occurrence fractions. Evaluation is
leave-one-patient-out.
"""

from .errors import (
    ConfigError,
    DataError,
    DegenerateSlideError,
    DimensionMismatchError,
    EmptyInputError,
    EmptyTrainingSetError,
    Her2ScoreError,
    InputError,
    InsufficientSupportError,
    ManifestError,
    MissingClassError,
    ModelFormatError,
    UndefinedMetricError,
)
from .evaluation import (
    ConfusionMatrix,
    LopoResult,
    StainClassModel,
    SyntheticCohortSpec,
    accuracy,
    generate_synthetic_cohort,
    report_tables,
    run_lopo,
    sensitivity_specificity,
)
from .features import (
    DescriptorId,
    FeatureVector,
    HistogramConfig,
    LbpParams,
    channel_mean_std,
    descriptor_dim,
    descriptor_hsv_ms,
    descriptor_hsv_rgb,
    extract_feature,
    hsv_histogram,
    lbp_descriptor,
    pftas_descriptor,
    rgb_histogram,
)
from .imaging import (
    STANDARD_TILE_SIZE,
    RasterImage,
    RasterPatch,
    TissueFilterConfig,
    load_image,
    rgb_to_hsv,
    save_patch_png,
    tile_image,
    tissue_filter,
)
from .manifest import load_manifest
from .pipeline import (
    CaseRecord,
    ClassifierSpec,
    ClassMode,
    CuratedPatch,
    FeatureCache,
    Her2Score,
    OccurrenceVector,
    PatchClass,
    PipelineConfig,
    classify_slide_patches,
    occurrence_vector,
    patch_classes,
    score_classes,
    score_wsi,
    train_image_level,
    train_patient_level,
)

__version__ = "0.1.0"
