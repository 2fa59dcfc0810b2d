"""
Test Suite for Power-Constrained Downloads
==========================================

Test Organization
-----------------
- test_core_model.py    : Parameters, file length models and the DPP ratio
- test_sim_engine.py    : Slot dynamics, random streams and metric accounting
- test_single_user.py   : Frame-based single-user policy and queue bounds
- test_multi_user.py    : Indexing policy, top-M activation and queue bounds
- test_simplex.py       : Dense two-phase simplex against scipy's linprog
- test_mdp_oracle.py    : Occupancy LP, policy extraction, closed-form oracle
- test_cli.py           : Configuration loading, experiment modes, output files
- test_utils.py         : Validation, statistics and I/O helpers
- test_integration.py   : Long-horizon checks against the LP optimum
- test_benchmarks.py    : Performance benchmarks

Running Tests
-------------
All tests:
    pytest tests/ -v

Skip slow tests:
    pytest tests/ -m "not slow" -v

With coverage:
    pytest tests/ --cov=src --cov-report=html

Benchmarks only:
    pytest tests/ -m benchmark --benchmark-only

Test Markers
------------
- @pytest.mark.unit         : Unit tests
- @pytest.mark.integration  : Integration tests
- @pytest.mark.slow         : Slow-running tests (acceptance-scale horizons)
- @pytest.mark.benchmark    : Performance benchmarks
"""

__version__ = "0.1.0"

# Test tolerances
TOLERANCES = {
    "exact": 1e-12,
    "formula": 1e-9,
    "lp_residual": 1e-9,
    "duality_gap": 1e-8,
    "grid_oracle": 1e-4,
    "relative_error": 0.01,
    "robustness": 0.03,
    "closed_loop": 0.005,
}

# Horizons
SHORT_HORIZON = 20_000
MEDIUM_HORIZON = 100_000
LONG_HORIZON = 1_000_000
