"""
Pytest Configuration and Shared Fixtures

Provides reusable fixtures, test configuration, and utilities
for all test modules.
"""

import json
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from src.core_model import SubsystemSpec, SystemSpec, baseline_system, robustness_system
from src.mdp_oracle import solve_system

# ============================================================================
# PYTEST CONFIGURATION
# ============================================================================


def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line("markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')")
    config.addinivalue_line("markers", "integration: marks tests as integration tests")
    config.addinivalue_line("markers", "unit: marks tests as unit tests")
    config.addinivalue_line("markers", "benchmark: marks tests as performance benchmarks")


# ============================================================================
# DIRECTORY AND FILE FIXTURES
# ============================================================================


@pytest.fixture
def temp_dir():
    """Provide temporary directory for test outputs."""
    temp_path = tempfile.mkdtemp()
    yield Path(temp_path)
    shutil.rmtree(temp_path)


@pytest.fixture(scope="session")
def baseline_config_path():
    """Bundled baseline configuration."""
    return PROJECT_ROOT / "configs" / "baseline.json"


@pytest.fixture
def write_config(temp_dir):
    """Factory fixture writing a configuration document (dict or raw text)."""

    def _write(content, name="config.json"):
        path = temp_dir / name
        text = content if isinstance(content, str) else json.dumps(content, indent=2)
        path.write_text(text)
        return path

    return _write


@pytest.fixture
def baseline_config_dict(baseline_config_path):
    """Baseline configuration as a mutable dict."""
    return json.loads(baseline_config_path.read_text())


# ============================================================================
# SYSTEM FIXTURES
# ============================================================================


@pytest.fixture
def baseline():
    """Three-user reference system at V = 70."""
    return baseline_system(70.0)


@pytest.fixture
def baseline_v0():
    """Reference system at V = 0."""
    return baseline_system(0.0)


@pytest.fixture
def matched_mean_system():
    """Reference system with mean file sizes 10, 5, 3."""
    return robustness_system(70.0)


@pytest.fixture
def user1(baseline):
    """lambda = 0.8, B = 10, phi(1) = 0.09, p(1) = 2, c = 1."""
    return baseline.subsystem(0)


@pytest.fixture
def user2(baseline):
    """lambda = 0.5, B = 5, phi(1) = 0.16, p(1) = 1.5, c = 1.5."""
    return baseline.subsystem(1)


@pytest.fixture
def user3(baseline):
    """lambda = 0.1, B = 2.5, phi(1) = 0.28, p(1) = 1, c = 2."""
    return baseline.subsystem(2)


@pytest.fixture
def unit_weight_user3(user3):
    """user 3 with weight 1."""
    return SubsystemSpec(user3.idle_rate, user3.mean_file_size, user3.success_prob, user3.power, 1.0, "user-3")


@pytest.fixture
def two_user_system():
    """N = 2, M = 2 binary system."""
    users = (
        SubsystemSpec(0.6, 4.0, (0.0, 0.2), (0.0, 1.2), 1.0, "a"),
        SubsystemSpec(0.3, 2.0, (0.0, 0.4), (0.0, 0.8), 1.0, "b"),
    )
    return SystemSpec(users, power_budget=1.0, max_concurrent=2, tradeoff=20.0)


@pytest.fixture
def three_action_user():
    """One user with idle, low-power and high-power actions."""
    return SubsystemSpec(0.5, 4.0, (0.0, 0.1, 0.2), (0.0, 0.5, 1.5), 1.0, "multi-rate")


@pytest.fixture(scope="session")
def baseline_oracle():
    """LP and solution of the reference system (solved once)."""
    return solve_system(baseline_system(70.0))


# ============================================================================
# RANDOM SYSTEMS
# ============================================================================


def random_system(rng: np.random.Generator, max_users: int = 5) -> SystemSpec:
    """Random system with 2..max_users users, M < N, up to three non-idle actions per user."""
    n_users = int(rng.integers(2, max_users + 1))
    users = []
    for n in range(n_users):
        n_actions = int(rng.integers(2, 5))
        phis = np.sort(rng.uniform(0.01, 1.0, n_actions - 1))
        powers = np.sort(rng.uniform(0.1, 3.0, n_actions - 1))
        users.append(
            SubsystemSpec(
                idle_rate=float(rng.uniform(0.01, 1.0)),
                mean_file_size=float(rng.uniform(1.0, 20.0)),
                success_prob=(0.0, *phis.tolist()),
                power=(0.0, *powers.tolist()),
                weight=float(rng.uniform(0.5, 2.0)),
                name=f"r{n}",
            )
        )
    return SystemSpec(
        tuple(users),
        power_budget=float(rng.uniform(0.1, 2.0)),
        max_concurrent=int(rng.integers(1, n_users)),
        tradeoff=float(rng.uniform(0.0, 200.0)),
    )


@pytest.fixture
def random_system_factory():
    """Factory for random systems."""
    return random_system

