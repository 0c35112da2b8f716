"""Curvature-aware calibration workbench for flexible resistive tactile arrays."""

from .sensor_sim import (
    CircuitConfig,
    CurvatureLabel,
    ScanFrame,
    SensorIdentity,
    SimConfig,
    block_reading,
    make_identity,
    node_resistance,
    readout_voltage,
    scan,
)
from .featurize import (
    BaselineMeasurement,
    FeatureVector,
    NormalizationSpec,
    average_baseline,
    extract_features,
)
from .curvnet import CurvNetModel, RegressionMetrics, TrainConfig, evaluate, train
from .forcecal import (
    CalibrationSample,
    CalibrationSurface,
    ForceErrorReport,
    compare_variants,
    fit_surface,
    predict_force,
    prune_surface,
)
from .pipeline import FixtureSet, Manifest, RunConfig, run_full, run_gate
from .session import SessionDriver, SessionReport, SessionSpec, SimulatedRig, run_session, step

__version__ = "0.1.0"

__all__ = [
    "CircuitConfig", "CurvatureLabel", "ScanFrame", "SensorIdentity", "SimConfig",
    "block_reading", "make_identity", "node_resistance", "readout_voltage", "scan",
    "BaselineMeasurement", "FeatureVector", "NormalizationSpec", "average_baseline",
    "extract_features",
    "CurvNetModel", "RegressionMetrics", "TrainConfig", "evaluate", "train",
    "CalibrationSample", "CalibrationSurface", "ForceErrorReport", "compare_variants",
    "fit_surface", "predict_force", "prune_surface",
    "FixtureSet", "Manifest", "RunConfig", "run_full", "run_gate",
    "SessionDriver", "SessionReport", "SessionSpec", "SimulatedRig", "run_session", "step",
]
