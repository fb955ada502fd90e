"""Optimal switching by control randomization.

Modules: ``modespace`` (mode sets and their measure), ``problem`` (problem
data and the benchmark catalog), ``simulate`` (noise, marks, Euler paths),
``strategy`` (switching policies), ``girsanov`` (intensity controls and
randomized rewards), ``bsde`` (regression solver), ``oracle`` (lattice
dynamic programming) and ``cli``.
"""
from .bsde import (PenalizedSolution, RegressionBasis, evaluate_value, extract_epsilon_control, lsq_fit,
                   solve_penalized, solve_reflected)
from .girsanov import (IntensityControl, constant_control, estimate_randomized_reward, simulate_controlled,
                       simulate_scenarios, two_level_control)
from .modespace import ModeSpace, ModeSpaceError
from .oracle import DPTable, dp_optimal_policy, dp_solve, dp_value
from .problem import NumericalError, PathPrefix, SwitchingProblem, catalog, from_config, validate
from .simulate import TimeGrid, euler_path, poisson_batch, sample_poisson_measure
from .strategy import SwitchingPolicy, estimate_reward, never_switch, run_policy, threshold_policy

__version__ = "0.1.0"
