"""CIR-domain WiFi sensing: LS tap recovery, distortion removal, dynamic-path alignment."""

from .channel_model import (
    CsiSeries,
    DistortionPolicy,
    GroundTruth,
    MotionTrajectory,
    MovingPath,
    PathSpec,
    SystemConfig,
    synth_csi_frame,
    synth_scene,
)
from .domino import DominoResult, align_dominant
from .dylign import AlignmentResult, align_dynamic, align_multi, tap_variance_profile
from .estimators import SensingResult, SsnrReport, respiration_rate, ssnr_report, target_distance
from .recovery import CirSeries, PartialDftOperator, build_operator, delay_shift, recover_cir
from .search import SearchSpec

__version__ = "0.1.0"

__all__ = [
    "AlignmentResult",
    "CirSeries",
    "CsiSeries",
    "DistortionPolicy",
    "DominoResult",
    "GroundTruth",
    "MotionTrajectory",
    "MovingPath",
    "PartialDftOperator",
    "PathSpec",
    "SearchSpec",
    "SensingResult",
    "SsnrReport",
    "SystemConfig",
    "align_dominant",
    "align_dynamic",
    "align_multi",
    "build_operator",
    "delay_shift",
    "recover_cir",
    "respiration_rate",
    "ssnr_report",
    "synth_csi_frame",
    "synth_scene",
    "tap_variance_profile",
    "target_distance",
]
