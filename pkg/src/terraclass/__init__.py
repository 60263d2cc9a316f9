"""Maximum-likelihood, fuzzy maximum-likelihood and fuzzy rule-based classification of multiband rasters."""

from .errors import DataError, NumericalError, TerraclassError
from .fuzzy import (
    FuzzyConfig,
    FuzzyFit,
    MembershipMap,
    fit_fuzzy,
    fuzzy_cardinality,
    fuzzy_classify,
    fuzzy_covariance,
    fuzzy_mean,
    membership_grades,
)
from .mlc import (
    ClassificationResult,
    GaussianClassModel,
    classify,
    discriminant,
    estimate_class_stats,
    fit_models,
    log_likelihood,
)
from .raster import (
    Raster,
    RasterHeader,
    SceneClass,
    TrainingSet,
    generate_synthetic_scene,
    load_raster,
    rasterize_roi,
    save_raster,
)

__version__ = "0.1.0"
