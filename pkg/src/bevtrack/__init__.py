"""bevtrack: BEV multi-camera trajectory association at desk scale.

Associates per-frame bird's-eye-view detections with trajectories over a
sliding window of K past timestamps, combining a trajectory motion cost
(distances to motion-extrapolated locations, with a Kalman fallback for
unlocated slots) and a trajectory appearance cost (negated per-lag softmax
similarities), solved by gated Hungarian matching. Ships with a synthetic
multi-camera pedestrian simulator, toy attention branches with hand-derived
gradients, CLEAR-style tracking metrics, and an ablation sweep CLI.
"""

from .association import (
    AssociationResult,
    CostMatrix,
    Tracker,
    TrackerConfig,
    Trajectory,
    ema_aggregate,
    fuse,
    hungarian,
    trajectory_appearance_cost,
    trajectory_motion_cost,
)
from .branches import (
    BranchParams,
    LossReport,
    TokenSet,
    TrainingBatch,
    appearance_branch_forward,
    forward_backward,
    init_params,
    load_params,
    loss_all,
    loss_det,
    loss_tac,
    loss_tmc,
    motion_branch_forward,
    save_params,
    temporal_embedding,
    train,
)
from .experiments import (
    ExperimentSpec,
    TrainingSettings,
    default_spec,
    run_experiment,
    sweep,
    synthetic_detection_run,
)
from .geometry import (
    BevGrid,
    CameraModel,
    FeatureGrid,
    OccupancyMap,
    aggregate_max,
    aggregate_mean,
    extract_peaks,
    pixel_to_ground,
    project_ground_to_pixel,
    render_smoothed_targets,
)
from .kalman import KalmanConfig, KalmanTrack, kf_init, kf_predict, kf_update
from .metrics import EvalConfig, MetricReport, evaluate_detection, evaluate_tracking
from .simulator import (
    Detection,
    DetectionFrame,
    GroundTruth,
    ScenarioConfig,
    camera_ring,
    generate_scenario,
    occlusion_visibility,
)

__version__ = "0.1.0"
