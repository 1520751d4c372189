"""Total leaf area estimation from plant point clouds.

Pipeline: refine a raw cloud (crop, denoise, color-filter, scale), reconstruct a
mesh, extract nine geometric features, and regress leaf area with one of
seven models. A synthetic plant generator stands in for real scans.
"""

from .config import RunConfig, load_config
from .core import (
    FEATURE_NAMES, CameraPoses, Cultivar, Dataset, Experiment, LeafAreaError, MeshFeatures, PointCloud, Sample,
    TriangleMesh, ValidationError,
)
from .features import extract_features
from .harness import SplitMode, SplitPlan, SweepGrid, SweepReport, run_sweep, summarize
from .io import load_ply, read_dataset_csv, save_ply, write_dataset_csv
from .reconstruct import Algorithm, ReconstructionParams, reconstruct
from .refine import refine_cloud
from .report import emit_report

__version__ = "0.1.0"

__all__ = [
    "FEATURE_NAMES", "Algorithm", "CameraPoses", "Cultivar", "Dataset", "Experiment", "LeafAreaError",
    "MeshFeatures", "PointCloud", "ReconstructionParams", "RunConfig", "Sample", "SplitMode", "SplitPlan",
    "SweepGrid", "SweepReport", "TriangleMesh", "ValidationError", "emit_report", "extract_features",
    "load_config", "load_ply", "read_dataset_csv", "reconstruct", "refine_cloud", "run_sweep", "save_ply",
    "summarize", "write_dataset_csv",
]
