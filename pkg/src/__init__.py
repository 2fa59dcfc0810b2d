"""
Power-Constrained Downloads
===========================

Scheduling file downloads under an average power budget.

This package provides:
- A frame-based drift-plus-penalty policy for a single downloading user
- A Lyapunov indexing policy for N users sharing M servers
- A slotted simulator with memoryless and packet-level file lengths
- An occupation-measure LP oracle with a built-in dense simplex

License: Non-Commercial

Usage Examples
--------------

Single user:
    >>> from src import baseline_system, run_single_user
    >>> spec = baseline_system().subsystem(2)
    >>> trace = run_single_user(spec, v=70.0, beta=1.0, horizon_slots=100_000, seed=1)
    >>> print(f"Throughput: {trace.throughput_expected:.4f}, power: {trace.avg_power:.4f}")

Multi-user against the LP optimum:
    >>> from src import baseline_system, run_multi_user, solve_system
    >>> system = baseline_system(v=70.0)
    >>> trace = run_multi_user(system, horizon_slots=100_000, seed=1)
    >>> lp, solution = solve_system(system)
    >>> print(f"{trace.throughput_expected:.4f} vs OPT {solution.opt_value:.4f}")
"""

__version__ = "0.1.0"
__author__ = "Power-Constrained Downloads Contributors"
__license__ = "Non-Commercial"
__all__ = [
    # Version info
    "__version__",
    "__author__",
    "__license__",
    # Model
    "SubsystemSpec",
    "SystemSpec",
    "FileLengthModel",
    "QueueCeilingViolation",
    "baseline_system",
    "robustness_system",
    "dpp_reward",
    # Simulation
    "SimTrace",
    "SlotSimulator",
    "matched_dynamics",
    "relative_error",
    # Policies
    "run_single_user",
    "queue_ceiling_single",
    "run_multi_user",
    "queue_ceiling_multi",
    # Oracle
    "DenseSimplex",
    "build_occupancy_lp",
    "solve_lp",
    "solve_system",
    "extract_policy",
    "simulate_policy",
    # Utils
    "BaselineConstants",
    "ExperimentConstants",
]

# Import core classes
try:
    from .core_model import (
        FileLengthModel,
        QueueCeilingViolation,
        SubsystemSpec,
        SystemSpec,
        baseline_system,
        dpp_reward,
        robustness_system,
    )
except ImportError as e:
    import warnings

    warnings.warn(f"Could not import core_model: {e}")

try:
    from .sim_engine import SimTrace, SlotSimulator, matched_dynamics, relative_error
except ImportError as e:
    import warnings

    warnings.warn(f"Could not import sim_engine: {e}")

try:
    from .single_user import queue_ceiling_single, run_single_user
    from .multi_user import queue_ceiling_multi, run_multi_user
except ImportError as e:
    import warnings

    warnings.warn(f"Could not import schedulers: {e}")

try:
    from .simplex import DenseSimplex
    from .mdp_oracle import build_occupancy_lp, extract_policy, simulate_policy, solve_lp, solve_system
except ImportError as e:
    import warnings

    warnings.warn(f"Could not import mdp_oracle: {e}")

from .utils import BaselineConstants, ExperimentConstants


def get_version():
    """Return the current version."""
    return __version__


def get_info():
    """Return package information."""
    return {
        "name": "Power-Constrained Downloads",
        "version": __version__,
        "author": __author__,
        "license": __license__,
        "description": "Drift-plus-penalty and indexing schedulers for power-constrained file downloads",
    }
