"""Device-independent QKD key rates from displacement-based photonic Bell tests."""

__version__ = "0.1.0"

from .circuit import Behavior, CircuitParams, OPERATING_POINT, behavior, apply_preprocessing, best_chsh, chsh_score
from .entropy import h_cond_bound, h_joint_bound
from .analytic import h_a_given_b, r0, r0_of_params, optimize_r0
from .keyrate import IScore, EntropyCurve, entropy_curve, iscore_from_bound, iscore_bounds, optimize_keyrate
from .finite import SecurityParams, KeyLengthReport, key_length, setup_from_params

__all__ = [
    "Behavior",
    "CircuitParams",
    "OPERATING_POINT",
    "behavior",
    "apply_preprocessing",
    "best_chsh",
    "chsh_score",
    "h_cond_bound",
    "h_joint_bound",
    "h_a_given_b",
    "r0",
    "r0_of_params",
    "optimize_r0",
    "IScore",
    "EntropyCurve",
    "entropy_curve",
    "iscore_from_bound",
    "iscore_bounds",
    "optimize_keyrate",
    "SecurityParams",
    "KeyLengthReport",
    "key_length",
    "setup_from_params",
]
