"""Biased random walks on bond-percolation clusters of Z^d.

Exact killed Green functions, the electrical-network dictionary with a
cemetery state, the averaged auxiliary chain, trap-geometry statistics,
Monte Carlo walk simulation, and the first-order expansion of the
limiting velocity in the dilution parameter.
"""

from .environment import (
    EdgeConfig,
    EnvironmentOracle,
    all_open,
    condition_on_I,
    from_states,
    materialize,
)
from .expansion import ExpansionReport, derivative, slowdown_holds
from .green import GreenTable, build_box_kernel, green_exact, green_mc
from .kalikow import (
    EnumerableInstance,
    kalikow_drift_decomposed,
    kalikow_exhaustive,
    kalikow_row_mc,
)
from .kernel import Bias, LocalKernel, ModelConstants, bias_along_axis, constants
from .lattice import Ball, canonical_edge, directions, unit
from .network import KilledNetwork, build_killed, resistance_to_delta
from .speedsim import SpeedEstimate, estimate_speed, run_walk, sweep_and_fit
from .traps import TailSurvey, compute_L1_L, compute_M, compute_T, tail_survey

__version__ = "0.1.0"

__all__ = [
    "Ball",
    "Bias",
    "EdgeConfig",
    "EnumerableInstance",
    "EnvironmentOracle",
    "ExpansionReport",
    "GreenTable",
    "KilledNetwork",
    "LocalKernel",
    "ModelConstants",
    "SpeedEstimate",
    "TailSurvey",
    "all_open",
    "bias_along_axis",
    "build_box_kernel",
    "build_killed",
    "canonical_edge",
    "compute_L1_L",
    "compute_M",
    "compute_T",
    "condition_on_I",
    "constants",
    "derivative",
    "directions",
    "estimate_speed",
    "from_states",
    "green_exact",
    "green_mc",
    "kalikow_drift_decomposed",
    "kalikow_exhaustive",
    "kalikow_row_mc",
    "materialize",
    "resistance_to_delta",
    "run_walk",
    "slowdown_holds",
    "sweep_and_fit",
    "tail_survey",
    "unit",
    "__version__",
]
