"""
Unit Tests for the Slotted Simulation Engine

Tests cover:
- Random substreams and reproducibility
- Per-user dynamics under memoryless and packet-level file lengths
- Poisson mean calibration
- Metric accumulation and the relative error
- The SlotSimulator driver
"""

import math
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from src.core_model import FileLengthModel, FileState, SubsystemSpec, SystemSpec
from src.multi_user import run_multi_user
from src.sim_engine import (
    DegenerateComparisonError,
    RngStream,
    SimTrace,
    SlotSimulator,
    SubsystemDynamics,
    accumulate_metrics,
    calibrate_poisson_mean,
    matched_dynamics,
    prefix_power_slack,
    relative_error,
    run_slots,
    sample_file_length,
    step_subsystem,
    system_dynamics,
)

# ============================================================================
# RANDOM STREAMS
# ============================================================================


@pytest.mark.unit
class TestRngStream:
    """Test seeded substreams."""

    def test_same_seed_same_draws(self):
        """Identical (seed, replicate) reproduce the same numbers."""
        a = RngStream(7, 3)
        b = RngStream(7, 3)
        assert [a.subsystem(2).uniform() for _ in range(10)] == [b.subsystem(2).uniform() for _ in range(10)]
        assert a.scheduler.uniform() == b.scheduler.uniform()

    def test_replicates_differ(self):
        """Replicates use different streams."""
        a = RngStream(7, 1, replicate=0)
        b = RngStream(7, 1, replicate=1)
        assert a.subsystem(0).uniform() != b.subsystem(0).uniform()

    def test_adding_user_keeps_existing_streams(self):
        """A new subsystem appends a stream without perturbing the others."""
        small = RngStream(11, 2)
        large = RngStream(11, 3)
        for n in range(2):
            assert [small.subsystem(n).uniform() for _ in range(5)] == [large.subsystem(n).uniform() for _ in range(5)]

    def test_negative_seed_rejected(self):
        """Seeds and replicates are non-negative."""
        with pytest.raises(ValueError):
            RngStream(-1, 1)

    def test_buffer_refills(self):
        """Draws continue past one buffered block."""
        stream = RngStream(0, 1).subsystem(0)
        draws = [stream.uniform() for _ in range(5000)]
        assert all(0.0 <= u < 1.0 for u in draws)
        assert len(set(draws)) == len(draws)


# ============================================================================
# TRUTH MODEL
# ============================================================================


@pytest.mark.unit
class TestDynamicsConstruction:
    """Test matched_dynamics and system_dynamics."""

    def test_geometric_matches_phi(self, user3):
        """Geometric truth: completion probability equals the policy's phi."""
        dyn = matched_dynamics(user3)
        assert dyn.model.mu == pytest.approx(0.4)
        assert dyn.completion_prob[1] == pytest.approx(0.28)
        assert dyn.packet_success[1] == pytest.approx(0.7)

    def test_packet_success_for_uniform(self, matched_mean_system):
        """Packet models keep q(a) = phi(a) * B."""
        spec = matched_mean_system.subsystem(2)
        dyn = matched_dynamics(spec, FileLengthModel.uniform(1, 5))
        assert dyn.packet_success[1] == pytest.approx(0.7)
        assert not dyn.model.is_memoryless

    def test_small_mean_defaults_to_exponential(self):
        """B < 1 cannot be a geometric packet count."""
        spec = SubsystemSpec(0.5, 0.5, (0.0, 0.3), (0.0, 1.0))
        dyn = matched_dynamics(spec)
        assert dyn.model.is_memoryless
        assert dyn.model.mean == 0.5
        assert dyn.completion_prob == spec.success_prob

    def test_system_dynamics_count(self, baseline):
        """One entry per user; wrong model counts are rejected."""
        assert len(system_dynamics(baseline)) == 3
        with pytest.raises(ValueError, match="Expected 3 file models"):
            system_dynamics(baseline, [None])


@pytest.mark.unit
class TestPoissonCalibration:
    """Test calibrate_poisson_mean."""

    @pytest.mark.parametrize("target", [10.0, 5.0, 3.0, 1.5])
    def test_clamped_mean_matches(self, target):
        """m + exp(-m) equals the target."""
        m = calibrate_poisson_mean(target)
        assert m + math.exp(-m) == pytest.approx(target, rel=1e-10)

    def test_sampled_mean(self):
        """Sampled clamped lengths have mean within 0.1% of the target at scale."""
        rng = np.random.default_rng(3)
        model = FileLengthModel.poisson(3.0)
        draws = np.array([sample_file_length(model, rng)[0] for _ in range(200_000)])
        assert draws.min() >= 1.0
        assert abs(draws.mean() - 3.0) < 4 * draws.std() / math.sqrt(draws.size)

    def test_target_must_exceed_one(self):
        """A clamped length cannot have mean <= 1."""
        with pytest.raises(ValueError):
            calibrate_poisson_mean(1.0)


# ============================================================================
# DYNAMICS
# ============================================================================


def _dynamics(idle_rate=0.5, model=None, completion=(0.0, 0.28), packet=(0.0, 0.7)):
    model = model or FileLengthModel.geometric(0.4)
    return SubsystemDynamics(idle_rate, model, tuple(completion), tuple(packet))


@pytest.mark.unit
class TestStepSubsystem:
    """Test one-slot transitions."""

    def test_active_idle_action_unchanged(self):
        """Active user with action 0 neither completes nor changes."""
        stream = RngStream(0, 1).subsystem(0)
        state = FileState(1, 0, 4.0)
        nxt, completed, delivered = step_subsystem(state, _dynamics(), 0, stream)
        assert nxt == state
        assert not completed
        assert delivered == 0.0

    def test_idle_user_cannot_be_served(self):
        """Action != 0 on an idle user is a caller bug."""
        stream = RngStream(0, 1).subsystem(0)
        with pytest.raises(ValueError, match="idle user"):
            step_subsystem(FileState(), _dynamics(), 1, stream)

    def test_completion_frequency_geometric(self):
        """mu = 0.4, q = 0.7: completion frequency 0.28 within 3 sigma."""
        stream = RngStream(1, 1).subsystem(0)
        dyn = _dynamics()
        n = 1_000_000
        hits = sum(step_subsystem(FileState(1, 0, 1.0), dyn, 1, stream)[1] for _ in range(n))
        sigma = math.sqrt(0.28 * 0.72 / n)
        assert abs(hits / n - 0.28) < 3 * sigma

    def test_completion_delivers_drawn_size(self):
        """A completed file credits the size drawn at activation."""
        stream = RngStream(0, 1).subsystem(0)
        dyn = _dynamics(completion=(0.0, 1.0))
        nxt, completed, delivered = step_subsystem(FileState(1, 0, 7.0), dyn, 1, stream)
        assert completed
        assert delivered == 7.0
        assert nxt.active == 0

    def test_packet_model_decrements_residual(self):
        """q = 1: the residual drops by one every served slot."""
        stream = RngStream(0, 1).subsystem(0)
        dyn = _dynamics(model=FileLengthModel.uniform(1, 5), packet=(0.0, 1.0))
        state = FileState(1, 3, 3.0)
        state, completed, _ = step_subsystem(state, dyn, 1, stream)
        assert (state.residual, completed) == (2, False)
        state, completed, _ = step_subsystem(state, dyn, 1, stream)
        state, completed, delivered = step_subsystem(state, dyn, 1, stream)
        assert completed
        assert delivered == 3.0

    def test_uniform_completion_times(self):
        """Uniform {1..5} lengths served every slot with q = 1 complete in uniform {1..5} slots."""
        stream = RngStream(5, 1).subsystem(0)
        dyn = _dynamics(idle_rate=1.0, model=FileLengthModel.uniform(1, 5), packet=(0.0, 1.0))
        durations = Counter()
        state = FileState()
        elapsed = 0
        while sum(durations.values()) < 50_000:
            if state.active:
                state, completed, _ = step_subsystem(state, dyn, 1, stream)
                elapsed += 1
                if completed:
                    durations[elapsed] += 1
                    elapsed = 0
            else:
                state, _, _ = step_subsystem(state, dyn, 0, stream)

        assert set(durations) == {1, 2, 3, 4, 5}
        observed = np.array([durations[k] for k in range(1, 6)])
        _, p_value = stats.chisquare(observed)
        assert p_value > 0.01
        total = observed.sum()
        mean = (observed * np.arange(1, 6)).sum() / total
        assert abs(mean - 3.0) < 3 * math.sqrt(2.0 / total)

    def test_idle_activation_frequency(self):
        """An idle user activates with probability lambda."""
        stream = RngStream(9, 1).subsystem(0)
        dyn = _dynamics(idle_rate=0.3)
        n = 200_000
        hits = sum(step_subsystem(FileState(), dyn, 0, stream)[0].active for _ in range(n))
        assert abs(hits / n - 0.3) < 3 * math.sqrt(0.3 * 0.7 / n)


@pytest.mark.unit
class TestGeometricFrames:
    """Serve-to-completion durations are geometric with mean 1/phi."""

    @pytest.mark.slow
    def test_chi_square_fit(self, user3):
        """Chi-square goodness of fit at the 1% level over 10^5 files."""
        phi = 0.28
        system = SystemSpec((user3,), power_budget=1.0, max_concurrent=1, tradeoff=0.0)
        sim = SlotSimulator(system, seed=21)
        while sum(sim.trace.file_duration_hist[0].values()) < 100_000:
            sim.advance([1 if sim.states[0].active else 0])

        hist = sim.trace.file_duration_hist[0]
        total = sum(hist.values())
        edges = list(range(1, 16))
        observed = [hist.get(k, 0) for k in edges]
        observed.append(total - sum(observed))
        expected = [total * phi * (1 - phi) ** (k - 1) for k in edges]
        expected.append(total - sum(expected))
        _, p_value = stats.chisquare(observed, expected)
        assert p_value > 0.01

    def test_idle_duration_mean(self, user1):
        """Idle durations have mean 1/lambda."""
        system = SystemSpec((user1,), power_budget=2.0, max_concurrent=1, tradeoff=0.0)
        sim = SlotSimulator(system, seed=4)
        for _ in range(200_000):
            sim.advance([1 if sim.states[0].active else 0])
        hist = sim.trace.idle_duration_hist[0]
        values = np.repeat(list(hist.keys()), list(hist.values()))
        assert abs(values.mean() - 1.0 / 0.8) < 3 * values.std() / math.sqrt(values.size)


# ============================================================================
# METRICS
# ============================================================================


@pytest.mark.unit
class TestAccumulateMetrics:
    """Test accumulate_metrics."""

    def test_all_idle_slot(self, baseline):
        """All-idle slots add nothing but the slot count."""
        trace = SimTrace(n_users=3)
        accumulate_metrics(trace, [0, 0, 0], [(False, 0.0)] * 3, baseline)
        assert trace.expected_reward == 0.0
        assert trace.realized_reward == 0.0
        assert trace.total_power == 0.0
        assert trace.slots == 1

    def test_serve_user1(self, baseline):
        """Serving user 1 adds c B phi = 0.9 and p = 2."""
        trace = SimTrace(n_users=3)
        expected, realized, power = accumulate_metrics(trace, [1, 0, 0], [(False, 0.0)] * 3, baseline)
        assert expected == pytest.approx(0.9)
        assert power == 2.0
        assert realized == 0.0
        assert trace.served_slots.tolist() == [1, 0, 0]

    def test_realized_completion(self, baseline):
        """A 10-packet completion for user 1 adds 1 * 10."""
        trace = SimTrace(n_users=3)
        accumulate_metrics(trace, [1, 0, 0], [(True, 10.0), (False, 0.0), (False, 0.0)], baseline)
        assert trace.realized_reward == 10.0
        assert trace.completions.tolist() == [1, 0, 0]

    def test_realized_is_weighted(self, baseline):
        """Realized reward is multiplied by the weight c."""
        trace = SimTrace(n_users=3)
        accumulate_metrics(trace, [0, 0, 1], [(False, 0.0), (False, 0.0), (True, 3.0)], baseline)
        assert trace.realized_reward == 6.0

    def test_series_kept(self, baseline):
        """keep_series stores the per-slot expected reward and power."""
        trace = SimTrace(n_users=3, reward_series=[], power_series=[])
        accumulate_metrics(trace, [1, 0, 0], [(False, 0.0)] * 3, baseline)
        accumulate_metrics(trace, [0, 0, 0], [(False, 0.0)] * 3, baseline)
        assert trace.reward_series == pytest.approx([0.9, 0.0])
        assert trace.power_series == [2.0, 0.0]


@pytest.mark.unit
class TestSimTrace:
    """Test the trace aggregates."""

    def test_empty_trace(self):
        """Averages of an empty trace are 0."""
        trace = SimTrace(n_users=1)
        assert trace.throughput_expected == 0.0
        assert trace.avg_power == 0.0
        assert trace.avg_queue == 0.0
        assert trace.throughput_stderr() == 0.0
        assert trace.power_stderr() == 0.0

    def test_power_stderr(self):
        """Batch means 0 and 2 give a standard error of 1."""
        trace = SimTrace(n_users=1, power_series=[0.0] * 20 + [2.0] * 20)
        assert trace.power_stderr(n_batches=2) == pytest.approx(1.0)
        # Equal batch means
        trace = SimTrace(n_users=1, power_series=[0.0, 2.0] * 20)
        assert trace.power_stderr() == 0.0

    def test_series_from_simulation(self, baseline):
        """A kept power series averages to avg_power."""
        trace = run_multi_user(baseline, 2000, seed=4, keep_series=True)
        assert len(trace.power_series) == 2000
        assert np.mean(trace.power_series) == pytest.approx(trace.avg_power)
        assert trace.power_stderr() > 0.0

    def test_observe_queue(self):
        """Queue sum and maximum."""
        trace = SimTrace(n_users=1)
        for q in (1.0, 4.0, 2.0):
            trace.observe_queue(q)
        assert trace.queue_sum == 7.0
        assert trace.max_queue == 4.0


@pytest.mark.unit
class TestRelativeError:
    """Test relative_error."""

    def test_equal(self):
        """obj = opt gives 0."""
        assert relative_error(2.5, 2.5) == 0.0

    def test_one_percent(self):
        """0.99 vs 1.0 gives 0.01."""
        assert relative_error(0.99, 1.0) == pytest.approx(0.01)

    def test_zero_optimum(self):
        """Relative error against 0 is degenerate."""
        with pytest.raises(DegenerateComparisonError):
            relative_error(0.1, 0.0)


@pytest.mark.unit
class TestPrefixPowerSlack:
    """Test the tolerance-adjusted prefix check."""

    def test_exact_equality_passes(self):
        """sum p = beta t + Q is allowed."""
        assert prefix_power_slack(12.0, 10, 1.0, 2.0) >= 0.0

    def test_violation_detected(self):
        """sum p above the bound is negative slack."""
        assert prefix_power_slack(12.5, 10, 1.0, 2.0) < 0.0

    def test_rounding_tolerated(self):
        """A few ulps above the bound are accepted."""
        bound = 0.1 * 3 + 0.0
        assert prefix_power_slack(bound * (1 + 2e-16), 3, 0.1, 0.0) >= 0.0


# ============================================================================
# DRIVER
# ============================================================================


@pytest.mark.unit
class TestSlotSimulator:
    """Test the SlotSimulator driver."""

    def test_all_users_start_active(self, baseline):
        """Every user holds a file at slot 0."""
        sim = SlotSimulator(baseline, seed=0)
        assert sim.active_users() == [0, 1, 2]
        assert sim.composite_state() == 0b111

    def test_composite_state_bits(self, baseline):
        """Bit n is user n."""
        sim = SlotSimulator(baseline, seed=0)
        sim.states[1] = FileState()
        assert sim.composite_state() == 0b101

    def test_dynamics_length_checked(self, baseline, user1):
        """One dynamics entry per user."""
        with pytest.raises(ValueError):
            SlotSimulator(baseline, [matched_dynamics(user1)])

    def test_records_bounded(self, baseline):
        """record_slots keeps only the last k slots."""
        sim = SlotSimulator(baseline, seed=0, record_slots=5)
        run_slots(sim, 20, lambda s: [0, 0, 0])
        assert len(sim.trace.records) == 5
        assert sim.trace.records[-1].slot == 19

    def test_run_slots_idle_policy(self, baseline):
        """An always-idle rule spends nothing and earns nothing."""
        sim = SlotSimulator(baseline, seed=0)
        trace = run_slots(sim, 100, lambda s: [0, 0, 0])
        assert trace.slots == 100
        assert trace.total_power == 0.0
        assert trace.expected_reward == 0.0

    def test_run_slots_rejects_bad_horizon(self, baseline):
        """Horizon must be a positive integer."""
        with pytest.raises(ValueError):
            run_slots(SlotSimulator(baseline), 0, lambda s: [0, 0, 0])

    def test_power_per_slot_bounded(self, baseline):
        """Per-slot power never exceeds the sum of per-user maxima."""
        sim = SlotSimulator(baseline, seed=2, record_slots=500)

        def serve_all(s):
            return [1 if st.active else 0 for st in s.states]

        run_slots(sim, 500, serve_all)
        assert max(r.power for r in sim.trace.records) <= baseline.p_max_total

    def test_reproducible(self, baseline):
        """Same seed, same trace."""

        def serve_first(s):
            active = s.active_users()
            actions = [0, 0, 0]
            if active:
                actions[active[0]] = 1
            return actions

        a = run_slots(SlotSimulator(baseline, seed=3), 2000, serve_first)
        b = run_slots(SlotSimulator(baseline, seed=3), 2000, serve_first)
        assert a.realized_reward == b.realized_reward
        assert a.completions.tolist() == b.completions.tolist()
