"""Active electrolocation: forward BEM model, SF-MUSIC imaging and target characterization."""

__version__ = "0.1.0"

from .geometry import BoundaryCurve, CurveMesh, FishBody, default_fish, discretize, make_ellipse, make_fourier_curve
from .forward import FishSolver, MaterialSpectrum, TargetSpec, solve_background, solve_free_space, solve_with_target
from .measurements import Measurement, SFRMatrix, measure
from .imaging import GridIllumination, GridSpec, signal_projector
from .characterization import PolarizationTensor, characterize_ellipse, fit_disk
from .config import ExperimentConfig, load_config, parse_config, seed_schedule

__all__ = [
    "BoundaryCurve", "CurveMesh", "FishBody", "default_fish", "discretize", "make_ellipse", "make_fourier_curve",
    "FishSolver", "MaterialSpectrum", "TargetSpec", "solve_background", "solve_free_space", "solve_with_target",
    "Measurement", "SFRMatrix", "measure", "GridIllumination", "GridSpec", "signal_projector",
    "PolarizationTensor", "characterize_ellipse", "fit_disk",
    "ExperimentConfig", "load_config", "parse_config", "seed_schedule",
]
