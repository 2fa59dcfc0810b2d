"""
Slotted Simulation Engine

Stochastic dynamics shared by every scheduling policy: file arrivals
after geometric idle periods, completions under memoryless and
packet-level file length models, seeded random substreams and metric
accumulation.

Timing convention (shared with the MDP oracle): a file that completes
in slot t earns its reward in slot t and the user is idle from slot t+1.
"""

import math
from collections import Counter, deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Deque, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .core_model import (
    FileLengthKind,
    FileLengthModel,
    FileState,
    SubsystemSpec,
    SystemSpec,
)
from .utils import NumericalTolerances, batch_means_stderr, validate_horizon


class DegenerateComparisonError(ValueError):
    """Relative error requested against a zero optimum."""


# ============================================================================
# RANDOM STREAMS
# ============================================================================


class UniformStream:
    """A numpy Generator with a buffered scalar uniform draw for hot loops."""

    def __init__(self, generator: np.random.Generator, block: int = 4096):
        self.generator = generator
        self._block = block
        self._buffer = generator.random(block)
        self._pos = 0

    def uniform(self) -> float:
        if self._pos == self._block:
            self._buffer = self.generator.random(self._block)
            self._pos = 0
        u = self._buffer[self._pos]
        self._pos += 1
        return float(u)


class RngStream:
    """
    Independent random substreams for one simulation run.

    One substream per subsystem plus one for the scheduler, all spawned
    from SeedSequence([seed, replicate]). Adding a subsystem appends a
    stream without perturbing the existing ones.
    """

    def __init__(self, seed: int, n_subsystems: int, replicate: int = 0):
        if seed < 0 or replicate < 0:
            raise ValueError(f"Seed {seed} and replicate {replicate} must be non-negative")
        self.seed = int(seed)
        self.replicate = int(replicate)
        root = np.random.SeedSequence([self.seed, self.replicate])
        children = root.spawn(n_subsystems + 1)
        self.scheduler = UniformStream(np.random.default_rng(children[0]))
        self.subsystems = [UniformStream(np.random.default_rng(child)) for child in children[1:]]

    def subsystem(self, n: int) -> UniformStream:
        return self.subsystems[n]


# ============================================================================
# TRUTH MODEL
# ============================================================================


@lru_cache(maxsize=None)
def calibrate_poisson_mean(target: float) -> float:
    """
    Poisson rate m such that max(Poisson(m), 1) has mean `target`.

    E[max(X, 1)] = m + Pr[X = 0] = m + exp(-m), solved with brentq.
    """
    if target <= 1.0:
        raise ValueError(f"Target mean {target} must exceed 1 packet")
    return float(brentq(lambda m: m + math.exp(-m) - target, 1e-12, target, xtol=1e-14))


@dataclass(frozen=True)
class SubsystemDynamics:
    """
    Simulator truth for one user, kept apart from the policy's SubsystemSpec.

    Attributes:
        idle_rate: True arrival probability per idle slot
        model: True file length distribution
        completion_prob: Per-action completion probability for memoryless models
        packet_success: Per-action packet success probability q(a) for packet models
    """

    idle_rate: float
    model: FileLengthModel
    completion_prob: Tuple[float, ...]
    packet_success: Tuple[float, ...]


def matched_dynamics(spec: SubsystemSpec, model: Optional[FileLengthModel] = None) -> SubsystemDynamics:
    """
    Truth model whose packet success matches the policy's phi with the same mean.

    q(a) = phi(a) * B inverts phi = mu * q with mu = 1/B. For a geometric
    truth model the completion probability is model.mu * q(a); for the
    exponential model it is spec.success_prob itself.

    Args:
        spec: Policy-side parameters
        model: True file length model; defaults to geometric(1/B) when B >= 1,
            exponential(B) otherwise
    """
    if model is None:
        if spec.mean_file_size >= 1.0:
            model = FileLengthModel.geometric(1.0 / spec.mean_file_size)
        else:
            model = FileLengthModel.exponential(spec.mean_file_size)

    packet_success = tuple(min(1.0, phi * spec.mean_file_size) for phi in spec.success_prob)
    if model.kind is FileLengthKind.GEOMETRIC:
        completion = tuple(model.mu * q for q in packet_success)
    else:
        completion = spec.success_prob

    return SubsystemDynamics(
        idle_rate=spec.idle_rate,
        model=model,
        completion_prob=completion,
        packet_success=packet_success,
    )


def system_dynamics(
    system: SystemSpec, models: Optional[Sequence[Optional[FileLengthModel]]] = None
) -> List[SubsystemDynamics]:
    """Matched truth models for every user of a system."""
    if models is None:
        models = [None] * system.n_users
    if len(models) != system.n_users:
        raise ValueError(f"Expected {system.n_users} file models, got {len(models)}")
    return [matched_dynamics(spec, model) for spec, model in zip(system.subsystems, models)]


def sample_file_length(model: FileLengthModel, generator: np.random.Generator) -> Tuple[float, int]:
    """
    Draw a fresh file.

    Returns:
        (size credited on completion, residual packets tracked by the simulator)
    """
    kind = model.kind
    if kind is FileLengthKind.GEOMETRIC:
        return float(generator.geometric(model.mu)), 0
    if kind is FileLengthKind.EXPONENTIAL:
        return float(generator.exponential(model.mean)), 0
    if kind is FileLengthKind.UNIFORM:
        packets = int(generator.integers(model.lo, model.hi + 1))
    else:
        packets = max(int(generator.poisson(calibrate_poisson_mean(model.mean))), 1)
    return float(packets), packets


# ============================================================================
# DYNAMICS
# ============================================================================


def step_subsystem(
    state: FileState, dynamics: SubsystemDynamics, a: int, rng: UniformStream
) -> Tuple[FileState, bool, float]:
    """
    Advance one user by one slot.

    Active users complete with probability completion_prob[a] (memoryless
    models) or, for packet models, send one packet with probability
    packet_success[a] and complete when the residual reaches zero. Idle
    users request a new file for the next slot with probability idle_rate.

    Returns:
        (next state, completed this slot, file size delivered)
    """
    if state.active:
        if a == 0:
            return state, False, 0.0
        if dynamics.model.is_memoryless:
            if rng.uniform() < dynamics.completion_prob[a]:
                return FileState(), True, state.size
            return state, False, 0.0
        if rng.uniform() < dynamics.packet_success[a]:
            residual = state.residual - 1
            if residual == 0:
                return FileState(), True, state.size
            return FileState(1, residual, state.size), False, 0.0
        return state, False, 0.0

    if a != 0:
        raise ValueError(f"Action {a} chosen for an idle user")
    if rng.uniform() < dynamics.idle_rate:
        size, residual = sample_file_length(dynamics.model, rng.generator)
        return FileState(1, residual, size), False, 0.0
    return state, False, 0.0


def fresh_file(dynamics: SubsystemDynamics, rng: UniformStream) -> FileState:
    """Active state with a newly drawn file."""
    size, residual = sample_file_length(dynamics.model, rng.generator)
    return FileState(1, residual, size)


# ============================================================================
# TRACE AND METRICS
# ============================================================================


@dataclass
class SlotRecord:
    """One slot of a recorded trace."""

    slot: int
    backlog: float
    active: Tuple[int, ...]
    actions: Tuple[int, ...]
    power: float
    expected_reward: float
    realized_reward: float


@dataclass
class SimTrace:
    """
    Running aggregates of a simulation.

    Rewards are weighted: expected_reward accumulates sum_n c_n B_n phi_n(a_n)
    per slot, realized_reward accumulates c_n times the size of each
    completed file.
    """

    n_users: int
    ceiling: float = math.inf
    slots: int = 0
    expected_reward: float = 0.0
    realized_reward: float = 0.0
    total_power: float = 0.0
    queue_sum: float = 0.0
    max_queue: float = 0.0
    completions: np.ndarray = None
    served_slots: np.ndarray = None
    file_duration_hist: List[Counter] = None
    idle_duration_hist: List[Counter] = None
    frame_length_hist: Counter = field(default_factory=Counter)
    records: Optional[Deque[SlotRecord]] = None
    reward_series: Optional[List[float]] = None
    power_series: Optional[List[float]] = None

    def __post_init__(self):
        if self.completions is None:
            self.completions = np.zeros(self.n_users, dtype=np.int64)
        if self.served_slots is None:
            self.served_slots = np.zeros(self.n_users, dtype=np.int64)
        if self.file_duration_hist is None:
            self.file_duration_hist = [Counter() for _ in range(self.n_users)]
        if self.idle_duration_hist is None:
            self.idle_duration_hist = [Counter() for _ in range(self.n_users)]

    @property
    def throughput_expected(self) -> float:
        return self.expected_reward / self.slots if self.slots else 0.0

    @property
    def throughput_realized(self) -> float:
        return self.realized_reward / self.slots if self.slots else 0.0

    @property
    def avg_power(self) -> float:
        return self.total_power / self.slots if self.slots else 0.0

    @property
    def avg_queue(self) -> float:
        return self.queue_sum / self.slots if self.slots else 0.0

    def observe_queue(self, backlog: float):
        """Fold the backlog at the start of a slot into the queue statistics."""
        self.queue_sum += backlog
        if backlog > self.max_queue:
            self.max_queue = backlog

    def throughput_stderr(self, n_batches: int = 20) -> float:
        """Batch-means standard error of the expected throughput (needs keep_series)."""
        if not self.reward_series:
            return 0.0
        return batch_means_stderr(np.asarray(self.reward_series), n_batches)

    def power_stderr(self, n_batches: int = 20) -> float:
        """Batch-means standard error of the average power (needs keep_series)."""
        if not self.power_series:
            return 0.0
        return batch_means_stderr(np.asarray(self.power_series), n_batches)


def accumulate_metrics(
    trace: SimTrace,
    actions: Sequence[int],
    outcomes: Sequence[Tuple[bool, float]],
    system: SystemSpec,
) -> Tuple[float, float, float]:
    """
    Add one slot's contribution to the trace aggregates.

    Args:
        actions: Action of every user this slot
        outcomes: (completed, delivered size) of every user this slot

    Returns:
        (expected reward, realized reward, power) of the slot
    """
    expected = 0.0
    realized = 0.0
    power = 0.0
    for n, a in enumerate(actions):
        spec = system.subsystems[n]
        if a:
            expected += spec.weight * spec.mean_file_size * spec.success_prob[a]
            power += spec.power[a]
            trace.served_slots[n] += 1
        completed, delivered = outcomes[n]
        if completed:
            realized += spec.weight * delivered
            trace.completions[n] += 1

    trace.expected_reward += expected
    trace.realized_reward += realized
    trace.total_power += power
    trace.slots += 1
    if trace.reward_series is not None:
        trace.reward_series.append(expected)
    if trace.power_series is not None:
        trace.power_series.append(power)
    return expected, realized, power


def relative_error(obj: float, opt: float) -> float:
    """|obj - opt| / opt."""
    if opt == 0:
        raise DegenerateComparisonError("Relative error is undefined for a zero optimum")
    return abs(obj - opt) / opt


def prefix_power_slack(total_power: float, slots: int, beta: float, backlog: float) -> float:
    """
    Tolerance-adjusted slack of sum p <= beta * t + Q(t); negative means violated.
    """
    bound = beta * slots + backlog
    tolerance = NumericalTolerances.PREFIX_POWER_ULPS * np.finfo(float).eps * max(1.0, bound, total_power)
    return bound + tolerance - total_power


# ============================================================================
# SLOT SIMULATOR
# ============================================================================


class SlotSimulator:
    """
    Slot-by-slot driver shared by all policies.

    The caller decides actions from `states` and then calls `advance`.
    All users start active with a fresh file at slot 0.
    """

    def __init__(
        self,
        system: SystemSpec,
        dynamics: Optional[Sequence[SubsystemDynamics]] = None,
        seed: int = 0,
        replicate: int = 0,
        record_slots: int = 0,
        keep_series: bool = False,
        ceiling: float = math.inf,
    ):
        self.system = system
        self.dynamics = list(dynamics) if dynamics is not None else system_dynamics(system)
        if len(self.dynamics) != system.n_users:
            raise ValueError(f"Expected {system.n_users} dynamics entries, got {len(self.dynamics)}")
        self.rng = RngStream(seed, system.n_users, replicate)
        self.states: List[FileState] = [fresh_file(d, self.rng.subsystem(n)) for n, d in enumerate(self.dynamics)]
        self.trace = SimTrace(
            n_users=system.n_users,
            ceiling=ceiling,
            records=deque(maxlen=record_slots) if record_slots > 0 else None,
            reward_series=[] if keep_series else None,
            power_series=[] if keep_series else None,
        )
        self.slot = 0
        self._phase_start = [0] * system.n_users

    def active_users(self) -> List[int]:
        return [n for n, s in enumerate(self.states) if s.active]

    def composite_state(self) -> int:
        """Bit n of the result is the file state of user n."""
        index = 0
        for n, s in enumerate(self.states):
            index |= s.active << n
        return index

    def advance(self, actions: Sequence[int], backlog: float = 0.0) -> List[Tuple[bool, float]]:
        """
        Apply one slot of actions to every user and accumulate metrics.

        Returns:
            Per-user (completed, delivered size)
        """
        t = self.slot
        outcomes = []
        activations = []
        active_before = tuple(s.active for s in self.states)
        for n, a in enumerate(actions):
            prev = self.states[n]
            nxt, completed, delivered = step_subsystem(prev, self.dynamics[n], a, self.rng.subsystem(n))
            self.states[n] = nxt
            outcomes.append((completed, delivered))
            if completed:
                self.trace.file_duration_hist[n][t + 1 - self._phase_start[n]] += 1
                self._phase_start[n] = t + 1
            elif not prev.active and nxt.active:
                self.trace.idle_duration_hist[n][t + 1 - self._phase_start[n]] += 1
                self._phase_start[n] = t + 1
                activations.append(n)

        expected, realized, power = accumulate_metrics(self.trace, actions, outcomes, self.system)
        if self.trace.records is not None:
            self.trace.records.append(
                SlotRecord(t, backlog, active_before, tuple(int(a) for a in actions), power, expected, realized)
            )
        self.slot += 1
        return outcomes


def run_slots(
    simulator: SlotSimulator,
    horizon: int,
    decide: Callable[[SlotSimulator], Sequence[int]],
) -> SimTrace:
    """Run a stateless decision rule for `horizon` slots (no virtual queue)."""
    validate_horizon(horizon)
    for _ in range(horizon):
        simulator.trace.observe_queue(0.0)
        simulator.advance(decide(simulator))
    return simulator.trace
