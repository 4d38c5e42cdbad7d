"""Scenario-aware conformal prediction intervals for multimodal trajectory
forecasts in the Frenet frame, with reliability curves and a risk-based
critical-point discriminator."""

from .calibration import (
    CalibrationMethod,
    CalibrationResult,
    CopulaLevel,
    MarginalCdf,
    calibrate_bonferroni,
    calibrate_copula_shared,
    calibrate_scenario,
    fit_marginals,
    read_calibration,
    write_calibration,
)
from .errors import (
    AlphaTooSmallForN,
    DegenerateRoute,
    EmptyCalibration,
    EmptySet,
    EmptyTestSet,
    FitDiverged,
    FrenetCpError,
    GeometryError,
    HorizonMismatch,
    InfeasibleLevel,
    InsufficientData,
    InsufficientPoints,
    OutOfRange,
    SchemaError,
)
from .geometry import (
    FrenetPoint,
    PlanarPoint,
    ProjectionQualityWarning,
    ReferenceRoute,
    project,
    project_trajectory,
    unproject,
    unproject_trajectory,
)
from .metrics import (
    IntervalBand,
    MetricsReport,
    avg_area_size,
    build_band,
    evaluate,
    joint_coverage,
)
from .records import (
    MultimodalForecast,
    ScenarioClass,
    ScenarioRecord,
    SplitConfig,
    load_records,
    split,
    write_records,
)
from .reliability import (
    DeviationProfile,
    ReliabilityCoefficients,
    ReliabilityModel,
    compute_deviation_profile,
    default_terms,
    fit_rm,
    fit_scenario_models,
    lane_change_split,
    pair_training_data,
    rm_eval,
)
from .risk import (
    BoundSource,
    CriticalPointReport,
    RiskConfig,
    critical_point,
    directional_critical_point,
    risk_at,
)
from .scores import QuantileVector, quantile, quantile_vector, score, score_matrix
from .synth import SynthConfig, generate

__version__ = "0.1.0"
