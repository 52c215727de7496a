"""Gradient echo memory simulator and analysis toolkit."""
from .core import (
    ConfigError,
    CouplingProfile,
    EnsembleParams,
    GemError,
    GradientProfile,
    PulseSpec,
    SimConfig,
    SimulationGrid,
    StabilityError,
    UnitSystem,
    derived_beta,
    load_config,
)

__version__ = "0.1.0"
