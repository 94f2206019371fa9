"""Per-campaign click-response models composed into a polytomous ensemble.

Pipeline: ingest click logs, label each campaign's clicks against everyone
else's, fit logistic models by IRLS over an explored feature ladder, pick
thresholds from the ROC's farthest-from-chance point, correct intercepts for
retrospective sampling, then serve the ensemble through a compiled
sum-of-betas scoring engine.
"""

from .calibration import (
    DegenerateCalibrationError,
    RocCurve,
    RocPoint,
    ThresholdChoice,
    compare,
    roc,
    roc_from_scores,
    select_threshold,
)
from .dataset import (
    ClickPool,
    EmptyInputError,
    IngestResult,
    LabeledSet,
    NoNegativesError,
    NoPositivesError,
    SchemaMismatchError,
    Split,
    TooSmallError,
    build_labeled_set,
    emit,
    ingest,
    split_random,
    split_time,
)
from .engine import (
    BenchReport,
    ClockResolutionError,
    CompiledModel,
    EncodedBatch,
    bench,
    compile,
    encode_batch,
    eta_batch,
    score_batch,
)
from .features import (
    AllCandidatesFailedError,
    Candidate,
    ExplorationReport,
    explore,
    top_k_levels,
)
from .irls import (
    DegenerateDataError,
    DesignMatrix,
    FitConfig,
    FitResult,
    RankDeficientError,
    deviance,
    fit,
    weighted_least_squares,
)
from .model_core import (
    DIMENSIONS,
    BinaryModel,
    FeatureIndex,
    Impression,
    LabeledVector,
    adjust_intercept_ex_ante,
    inverse_logit,
    linear_predictor,
    log_likelihood,
    logit,
    model_from_json,
    model_to_json,
    predict_probability,
)
from .polytomous import (
    Assignment,
    ConfusionTotals,
    CoverageReport,
    Counts,
    EmptyPoolError,
    MetricsReport,
    PolytomousModel,
    assign,
    coverage,
    evaluate,
    metrics_from_counts,
    metrics_timeseries,
)

__version__ = "0.1.0"
