"""Spectral decomposition of overcomplete symmetric 4-tensors."""

from __future__ import annotations

__version__ = "0.1.0"

from .decompose import DecomposeParams, RecoveryReport, decompose, recovery_report, signed_hausdorff
from .errors import ConditionFailure, GapTooSmall, OvtError
from .implicit_tensor import ImplicitTensor3, contract, mode_multiply, spectral_truncate
from .instances import Ensemble, NoiseModel, add_noise, build_tensor, gen_components
from .lift import SymTensor4, condition_quantities, kappa, lift
from .rounding import RoundParams, round_all

__all__ = [
    "ConditionFailure",
    "DecomposeParams",
    "Ensemble",
    "GapTooSmall",
    "ImplicitTensor3",
    "NoiseModel",
    "OvtError",
    "RecoveryReport",
    "RoundParams",
    "SymTensor4",
    "add_noise",
    "build_tensor",
    "condition_quantities",
    "contract",
    "decompose",
    "gen_components",
    "kappa",
    "lift",
    "mode_multiply",
    "recovery_report",
    "round_all",
    "signed_hausdorff",
    "spectral_truncate",
]
