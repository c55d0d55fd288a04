"""Detection metrics, score fusion and calibration."""

from .calibration import CalibrationModel, calibrate, calibration_objective
from .fusion import (
    ALIASES,
    STRATEGIES,
    DevSplit,
    FusionModel,
    ScoreNorm,
    StrategyResult,
    empirical_weights,
    fuse,
    run_strategy,
    split_devset,
)
from .metrics import DcfParams, act_dcf, cllr, det_points, eer, min_dcf, operating_points, report

__all__ = [
    "CalibrationModel", "calibrate", "calibration_objective",
    "ALIASES", "STRATEGIES", "DevSplit", "FusionModel", "ScoreNorm", "StrategyResult",
    "empirical_weights", "fuse", "run_strategy", "split_devset",
    "DcfParams", "act_dcf", "cllr", "det_points", "eer", "min_dcf", "operating_points", "report",
]
