"""Asynchronous UAV tracking pipeline simulation and evaluation toolkit."""

from .confidence import (
    EwmaState,
    GatingConfig,
    coordinate_score,
    ewma_update,
    gate_ego,
    gate_template,
    gate_tracker,
    pmf4_confidence,
    window_bounds,
)
from .egomotion import (
    Correspondence,
    EgoConfig,
    EgoMeasurement,
    build_pyramid,
    estimate_egomotion,
    homography_covariance,
    lk_flow,
    ransac_homography,
    sample_grid,
)
from .ekf import (
    EkfConfig,
    EkfState,
    TrackerMeasurement,
    current_bbox,
    init,
    predict,
    search_center,
    transition_jacobian,
    update_ego,
    update_tracker,
)
from .geom import BBox, Frame, Homography, Pmf, Pmf4, iou, jacobian_at, normalize_h33, warp_point
from .metrics import (
    MetricConfig,
    MetricReport,
    aggregate,
    evaluate_sequence,
    mean_success_rate,
    normalized_precision,
    nt2f,
    success_rate,
)
from .protocols import ResultTrace, ScheduleConfig, TraceRecord, run_dsp, run_eop, run_ltp
from .trackers import (
    EchoTracker,
    ExternTracker,
    NccConfig,
    NccTracker,
    TraceTracker,
    TrackerOutput,
)

__version__ = "0.1.0"
