"""
Integration Tests for Complete System

Long-horizon end-to-end checks of the schedulers against the occupancy LP
optimum on the three-user reference system:
- near-optimality and power feasibility at V = 70
- the shape of the V tradeoff
- robustness to non-memoryless file lengths
- Monte-Carlo suboptimality over random systems
- closed-loop replay of the LP policy

These run for 10^5 to 10^6 slots; deselect with -m "not slow".
"""

import numpy as np
import pytest

from download_experiments import ExperimentPlan, robustness_models, run_plan
from src.core_model import baseline_system
from src.mdp_oracle import extract_policy, simulate_policy
from src.multi_user import run_multi_user
from src.sim_engine import relative_error
from src.single_user import power_overshoot_bound
from tests import LONG_HORIZON, MEDIUM_HORIZON, TOLERANCES

pytestmark = [pytest.mark.integration, pytest.mark.slow]


@pytest.fixture(scope="module")
def opt_value(baseline_oracle):
    """LP optimum of the reference system."""
    return baseline_oracle[1].opt_value


@pytest.fixture(scope="module")
def v_sweep():
    """Indexing policy at V in {5, 10, 20, 40, 70} for 10^6 slots."""
    base = baseline_system()
    return {
        v: run_multi_user(base.with_tradeoff(v), LONG_HORIZON, seed=2024, keep_series=True)
        for v in (5.0, 10.0, 20.0, 40.0, 70.0)
    }


class TestNearOptimality:
    """The indexing policy approaches the LP optimum."""

    def test_relative_error_at_v70(self, v_sweep, opt_value):
        """V = 70, 10^6 slots: within 1% of OPT."""
        trace = v_sweep[70.0]
        assert relative_error(trace.throughput_expected, opt_value) <= TOLERANCES["relative_error"]

    def test_power_feasible(self, v_sweep):
        """Every V: average power <= beta + ceiling / horizon."""
        for trace in v_sweep.values():
            assert trace.avg_power <= 1.0 + power_overshoot_bound(trace.ceiling, LONG_HORIZON)
            assert trace.max_queue <= trace.ceiling

    def test_estimators_agree(self, v_sweep):
        """Realized and expected throughput differ by under 1% for memoryless files."""
        trace = v_sweep[70.0]
        gap = abs(trace.throughput_realized - trace.throughput_expected) / trace.throughput_expected
        assert gap < 0.01

    def test_prefix_power_checked(self, baseline):
        """10^5 slots with the per-slot prefix inequality enforced."""
        trace = run_multi_user(baseline, MEDIUM_HORIZON, seed=11, check_invariants=True)
        assert trace.max_queue <= trace.ceiling


class TestTradeoffShape:
    """Throughput and queue size grow with V."""

    def test_throughput_non_decreasing(self, v_sweep):
        """Consecutive V values: no drop beyond two standard errors."""
        grid = sorted(v_sweep)
        for low, high in zip(grid, grid[1:]):
            a, b = v_sweep[low], v_sweep[high]
            slack = 2.0 * (a.throughput_stderr() + b.throughput_stderr())
            assert b.throughput_expected >= a.throughput_expected - slack

    def test_max_queue_non_decreasing(self, v_sweep):
        """Larger V lets the queue grow further."""
        grid = sorted(v_sweep)
        maxima = [v_sweep[v].max_queue for v in grid]
        assert maxima == sorted(maxima)

    def test_power_gap_non_increasing(self, v_sweep):
        """beta - average power does not grow with V beyond two standard errors."""
        grid = sorted(v_sweep)
        for low, high in zip(grid, grid[1:]):
            a, b = v_sweep[low], v_sweep[high]
            slack = 2.0 * (a.power_stderr() + b.power_stderr())
            assert 1.0 - b.avg_power <= 1.0 - a.avg_power + slack

    def test_approaches_opt(self, v_sweep, opt_value):
        """The largest V is the closest to OPT."""
        errors = {v: relative_error(t.throughput_expected, opt_value) for v, t in v_sweep.items()}
        assert errors[70.0] <= errors[5.0]


class TestRobustness:
    """Uniform and Poisson file lengths give nearly the geometric throughput."""

    @pytest.mark.parametrize("v", [10.0, 40.0, 70.0])
    def test_within_three_percent(self, matched_mean_system, v):
        """Realized throughput within 3% of the geometric run."""
        system = matched_mean_system.with_tradeoff(v)
        models = robustness_models(system)
        realized = {
            name: run_multi_user(system, LONG_HORIZON, seed=7, file_models=models[name]).throughput_realized
            for name in ("geometric", "uniform", "poisson")
        }
        for name in ("uniform", "poisson"):
            gap = abs(realized[name] - realized["geometric"]) / realized["geometric"]
            assert gap <= TOLERANCES["robustness"], f"{name} at V={v}: {gap:.4f}"


class TestMonteCarlo:
    """Random systems at V = 70."""

    @pytest.mark.parametrize("kind", ["system", "control"])
    def test_mean_relative_error(self, baseline, kind):
        """100 replicates of 10^5 slots: mean relative error within 1%."""
        plan = ExperimentPlan(
            system=baseline,
            mode="monte-carlo",
            replicates=100,
            horizon=MEDIUM_HORIZON,
            seed=2024,
            monte_carlo_kind=kind,
            workers=4,
        )
        table = run_plan(plan)
        assert not table["lp_failed"].any()
        assert len(table) == 100
        assert np.nanmean(table["relative_error"].to_numpy(dtype=float)) <= TOLERANCES["relative_error"]


class TestOracleClosedLoop:
    """The LP policy reproduces its own value in simulation."""

    def test_replay_matches_opt(self, baseline, baseline_oracle):
        """10^6 slots of the extracted policy: within 0.5% of OPT."""
        lp, solution = baseline_oracle
        policy = extract_policy(lp, solution.occupation)
        trace = simulate_policy(baseline, policy, LONG_HORIZON, seed=99)
        assert relative_error(trace.throughput_expected, solution.opt_value) <= TOLERANCES["closed_loop"]
        assert trace.avg_power <= 1.0 + 0.01

    def test_self_consistency(self, baseline_oracle):
        """Duality gap and flow residual on the reference LP."""
        _, solution = baseline_oracle
        assert solution.duality_gap < TOLERANCES["duality_gap"]
        assert solution.flow_residual < TOLERANCES["lp_residual"]
