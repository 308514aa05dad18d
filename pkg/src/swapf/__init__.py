"""Semantic-weighted adaptive particle filter for 4-DoF aerial localization.

Estimates (x, y, altitude, yaw) of a nadir camera over a 2D semantic map by
scoring pose hypotheses against per-class Euclidean distance fields, with a
synthetic scenario generator and an evaluation harness.
"""

from .config import FilterParams, RunConfig, load_run_config, resolve_alpha
from .distance import (
    CenterDistanceField,
    DistanceFieldStack,
    build_cdf,
    build_swdm,
    flat_cdf,
    load_swdm,
    sample_distance,
    save_swdm,
)
from .errors import (
    ConfigError,
    DegenerateWeights,
    EmptySupport,
    LabelOutOfRange,
    MalformedFile,
    SwapfError,
    TrajectoryOutOfBounds,
    ZeroResultant,
)
from .estimate import DbscanParams, PoseEstimate, circular_mean, dbscan, extract_estimate
from .evaluate import (
    BatchReport,
    MetricSummary,
    RunReport,
    compute_metrics,
    export_batch,
    export_report,
    run,
    run_batch,
)
from .filtering import (
    CenterSemantic,
    FullSpace,
    Layered,
    initialize,
    resample_if_needed,
    step,
    systematic_resample,
)
from .measurement import (
    CameraModel,
    MeasurementContext,
    RotationCache,
    SemanticWeights,
    build_rotation_cache,
    footprint_side,
    nearest_bin,
    particle_weight,
    weigh_all,
)
from .motion import NoiseParams, OdometryInput, Pose4, predict, predict_all
from .raster import (
    ClassPalette,
    SemanticRaster,
    crop_window,
    from_indexed_image,
    load_palette,
    load_raster,
    resize_nearest,
    rotate_discard,
    save_palette,
    save_raster,
)
from .sim import (
    DEFAULT_PALETTE,
    ObservationFrame,
    SensorNoiseSpec,
    TrajectorySpec,
    Waypoint,
    WorldSpec,
    generate_world,
    load_frames,
    render_observation,
    run_scenario,
    save_frames,
)
from .state import ParticleSet, StateBounds

__version__ = "0.1.0"
