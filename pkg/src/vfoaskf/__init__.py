"""Joint tracking of gaze and visual focus of attention.

Per video frame and per person, the tracker infers which target the
person is looking at (their visual focus of attention) and their gaze
direction, from observed head orientations and 3D target positions.
The model couples a discrete focus label with linear-Gaussian gaze and
head-reference dynamics; inference runs a bank of constrained Kalman
filters collapsed by moment matching, and all Gaussian parameters are
learned from annotated recordings by EM.
"""

from .dynamics import (
    ModelParams,
    emission_matrix,
    gaussian_logpdf,
    predictive_obs_likelihood,
    predictive_obs_loglik,
    process_noise,
    transition_system,
)
from .geometry import (
    DegenerateGeometryError,
    Direction,
    Position3D,
    angular_distance,
    direction_from_points,
    wrap_angle,
    wrap_delta,
)
from .learning import EMResult, SmoothedMoments, em_fit, kalman_smoother, m_step_covariances, m_step_mixing
from .metrics import ConfusionMatrix, average_precision, confusion, frr, mutual_gaze_score, srr
from .scene import (
    FrameObservation,
    NO_TARGET,
    Recording,
    RecordingSet,
    Scene,
    Target,
    eligible_vfoa_labels,
    validate_recording,
)
from .synth import SynthConfig, SynthGroundTruth, easy_scene_preset, sample_recording, sample_vfoa_chains
from .tracker import (
    PersonBelief,
    TrackResult,
    TrackerState,
    constrained_kf_step,
    gaze_estimate,
    initialize,
    map_vfoa,
    moment_match,
    track,
    update,
    vfoa_from_gaze_geometric,
)
from .transitions import TransitionTable, learn_table, marginal_transition_prior, transition_prob

__version__ = "0.1.0"

__all__ = [
    "ConfusionMatrix",
    "DegenerateGeometryError",
    "Direction",
    "EMResult",
    "FrameObservation",
    "ModelParams",
    "NO_TARGET",
    "PersonBelief",
    "Position3D",
    "Recording",
    "RecordingSet",
    "Scene",
    "SmoothedMoments",
    "SynthConfig",
    "SynthGroundTruth",
    "Target",
    "TrackResult",
    "TrackerState",
    "TransitionTable",
    "angular_distance",
    "average_precision",
    "confusion",
    "constrained_kf_step",
    "direction_from_points",
    "easy_scene_preset",
    "eligible_vfoa_labels",
    "em_fit",
    "emission_matrix",
    "frr",
    "gaussian_logpdf",
    "gaze_estimate",
    "initialize",
    "kalman_smoother",
    "learn_table",
    "m_step_covariances",
    "m_step_mixing",
    "map_vfoa",
    "marginal_transition_prior",
    "moment_match",
    "mutual_gaze_score",
    "predictive_obs_likelihood",
    "predictive_obs_loglik",
    "process_noise",
    "sample_recording",
    "sample_vfoa_chains",
    "srr",
    "track",
    "transition_prob",
    "transition_system",
    "update",
    "validate_recording",
    "vfoa_from_gaze_geometric",
    "wrap_angle",
    "wrap_delta",
]
