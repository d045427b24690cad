"""Cross-spectral feature registration pipelines and evaluation tools."""

from .errors import RegistrationError
from .estimation import (
    InlierConfig,
    RansacConfig,
    RegistrationResult,
    classical_pipeline_from_grids,
    inlier_score,
    ransac,
    refine_dls,
    run_classical_pipeline,
    run_weighted_pipeline,
    score_inliers_gt,
    weighted_dlt,
)
from .extraction import (
    ClassicalExtractConfig,
    Keypoint,
    SoftExtractConfig,
    extract_classical,
    extract_soft,
    load_keypoints,
    save_keypoints,
)
from .featuregrid import (
    DescriptorMap,
    DetectionResponse,
    DetectorTarget,
    Heatmap,
    bilinear_sample_descriptor,
    bilinear_sample_scalar,
    decode_heatmap,
    read_xsfm,
    write_xsfm,
)
from .geometry import (
    Frame,
    Homography,
    HomographySamplerConfig,
    PointSet,
    corner_set,
    normalize_homography,
    sample_homography,
    transform_points,
)
from .gradients import (
    PairSetup,
    PipelineParams,
    ToyPairConfig,
    averaging_effect_demo,
    finite_diff,
    forward_total_loss,
    grad_total_loss,
    make_toy_pair,
    toy_train,
)
from .harness import (
    ExperimentSpec,
    PhotometricConfig,
    SyntheticPairConfig,
    emit_experiment,
    make_pair,
    run_experiment,
)
from .losses import (
    DescriptorLossConfig,
    DetectorLossWeights,
    LossTerms,
    LossWeights,
    RobustConfig,
    corner_loss,
    descriptor_loss,
    detector_loss,
    frobenius_loss,
    total_loss,
    transfer_loss,
    welsch,
)
from .matching import Match, MatcherConfig, match_score, mutual_nn, soft_match, zncc
from .metrics import (
    MetricsConfig,
    MetricsReport,
    ace,
    matching_score,
    mean_ap,
    mma,
    repeatability,
    success_fractions,
)
from .mock import MockFeatureConfig, MockFeatures, generate_mock_features

__version__ = "0.1.0"
