"""Isogeometric density-based topology optimisation of Reissner-Mindlin NURBS shells."""

from __future__ import annotations

from .analysis import AnalysisModel, Load, MaterialParams, Support, compliance
from .density import DensityField, LocalVolumeSpec, load_field, save_field
from .fairing import FairingConfig, fair_boundaries
from .geometry import ShellModel, build_multilevel, make_preset
from .mma import MmaConfig, mma_update
from .optimize import OptProblem, run
from .splines import KnotVector, NurbsCurve, NurbsSurface

__version__ = "0.1.0"

__all__ = [
    "AnalysisModel",
    "DensityField",
    "FairingConfig",
    "KnotVector",
    "Load",
    "LocalVolumeSpec",
    "MaterialParams",
    "MmaConfig",
    "NurbsCurve",
    "NurbsSurface",
    "OptProblem",
    "ShellModel",
    "Support",
    "build_multilevel",
    "compliance",
    "fair_boundaries",
    "load_field",
    "make_preset",
    "mma_update",
    "run",
    "save_field",
]
