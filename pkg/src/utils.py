"""
Utility Functions for Power-Constrained Download Scheduling

Shared constants, validation helpers, formatting and JSON I/O used
across the model, simulator, oracle and experiment driver.
"""

import json
import math
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import numpy as np

# ============================================================================
# NUMERICAL CONSTANTS
# ============================================================================


class NumericalTolerances:
    """Tolerances shared by the runtime invariant checks and the LP oracle."""

    QUEUE_CEILING_ATOL = 1e-9  # slack on deterministic queue ceilings
    PREFIX_POWER_ULPS = 10.0  # multiples of machine epsilon for prefix power checks
    LP_RESIDUAL = 1e-9  # primal feasibility after simplex
    LP_PIVOT = 1e-10  # smallest usable pivot magnitude
    KERNEL_ROW_SUM = 1e-12  # stochasticity of composite kernel rows


class BaselineConstants:
    """Three-user reference system (N=3, M=1, binary actions)."""

    IDLE_RATES = (0.8, 0.5, 0.1)
    PACKET_RATES = (0.1, 0.2, 0.4)  # mu_n, mean file size is 1/mu_n packets
    PACKET_SUCCESS = (0.9, 0.8, 0.7)  # q(1); phi_n(1) = q * mu_n
    POWERS = (2.0, 1.5, 1.0)
    WEIGHTS = (1.0, 1.5, 2.0)
    POWER_BUDGET = 1.0
    MAX_CONCURRENT = 1
    DEFAULT_TRADEOFF = 70.0

    # Matched-mean variant for non-memoryless file lengths
    ROBUST_PACKET_RATES = (1.0 / 10.0, 1.0 / 5.0, 1.0 / 3.0)
    UNIFORM_RANGES = ((5, 15), (2, 8), (1, 5))
    POISSON_MEANS = (10.0, 5.0, 3.0)


class ExperimentConstants:
    """Defaults for the experiment driver."""

    DEFAULT_HORIZON = 1_000_000
    FAST_HORIZON = 100_000
    DEFAULT_V_GRID = (5.0, 10.0, 20.0, 40.0, 70.0)
    ROBUSTNESS_V_GRID = (0.0, 10.0, 40.0, 70.0)
    MONTE_CARLO_TRADEOFF = 70.0
    MONTE_CARLO_MIN_DRAW = 1e-3
    MAX_ORACLE_USERS = 12
    FLOAT_FORMAT = "%.10g"


# ============================================================================
# VALIDATION UTILITIES
# ============================================================================


def validate_probability(value: float, name: str = "Probability", allow_zero: bool = True) -> bool:
    """
    Validate a probability lies in [0, 1] (or (0, 1] when allow_zero is False).

    Raises:
        ValueError if the value is outside the range
    """
    if not math.isfinite(value):
        raise ValueError(f"{name} {value} must be finite")
    low_ok = value >= 0.0 if allow_zero else value > 0.0
    if not low_ok or value > 1.0:
        interval = "[0, 1]" if allow_zero else "(0, 1]"
        raise ValueError(f"{name} {value} outside valid range {interval}")
    return True


def validate_positive(value: float, name: str = "Value", allow_zero: bool = False) -> bool:
    """
    Validate a scalar is positive (or non-negative).

    Raises:
        ValueError if the value is invalid
    """
    if not math.isfinite(value):
        raise ValueError(f"{name} {value} must be finite")
    if allow_zero and value < 0.0:
        raise ValueError(f"{name} {value} must be non-negative")
    if not allow_zero and value <= 0.0:
        raise ValueError(f"{name} {value} must be positive")
    return True


def validate_horizon(horizon: int) -> bool:
    """Validate a simulation horizon in slots."""
    if int(horizon) != horizon or horizon < 1:
        raise ValueError(f"Horizon {horizon} must be a positive integer number of slots")
    return True


# ============================================================================
# STATISTICS
# ============================================================================


def monte_carlo_stderr(values: Sequence[float]) -> float:
    """
    Standard error of the mean of independent replicate values.

    Returns 0.0 for fewer than two values.
    """
    data = np.asarray(values, dtype=float)
    if data.size < 2:
        return 0.0
    return float(np.std(data, ddof=1) / np.sqrt(data.size))


def batch_means_stderr(samples: np.ndarray, n_batches: int = 20) -> float:
    """
    Batch-means standard error of a time average from a correlated series.

    Args:
        samples: Per-slot values
        n_batches: Number of contiguous batches

    Returns:
        Standard error of the overall mean
    """
    samples = np.asarray(samples, dtype=float)
    batch_len = samples.size // n_batches
    if batch_len < 1:
        return 0.0
    batches = samples[: batch_len * n_batches].reshape(n_batches, batch_len).mean(axis=1)
    return monte_carlo_stderr(batches)


# ============================================================================
# DATA I/O UTILITIES
# ============================================================================


def save_json_data(data: Dict, filepath: Union[str, Path], indent: int = 2):
    """
    Save data to JSON file with sorted keys (stable across runs).

    Args:
        data: Dictionary to save
        filepath: Output file path
        indent: JSON indentation level
    """
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)

    with open(filepath, "w") as f:
        json.dump(data, f, indent=indent, sort_keys=True, default=str)
        f.write("\n")


def dataclass_to_dict(obj: Any) -> Union[Dict, List, Any]:
    """
    Convert dataclass to dictionary, handling nested structures.

    Args:
        obj: Dataclass instance

    Returns:
        Dictionary representation
    """
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    elif isinstance(obj, (list, tuple)):
        return [dataclass_to_dict(item) for item in obj]
    elif isinstance(obj, dict):
        return {key: dataclass_to_dict(value) for key, value in obj.items()}
    else:
        return obj


# ============================================================================
# FORMATTING
# ============================================================================


def format_percentage(value: float, precision: int = 3) -> str:
    """Format a fraction (0.00064) as a percentage string ("0.064%")."""
    return f"{value * 100:.{precision}f}%"


def format_float_list(values: Iterable[float], precision: int = 4) -> str:
    """Format a list of floats compactly for console output."""
    return "[" + ", ".join(f"{v:.{precision}g}" for v in values) + "]"


def print_banner(title: str, width: int = 70):
    """Print a section banner."""
    print("\n" + "=" * width)
    print(title)
    print("=" * width)
