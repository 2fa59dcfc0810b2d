"""
Multi-User Lyapunov Indexing Scheduler

N users share a server that can serve at most M of them per slot, under a
total average power budget beta. Every slot the scheduler

1. computes for each user holding a file the index
   gamma_n = max_a (V c_n B_n phi_n(a) - Q p_n(a)) / (1 + phi_n(a) / lambda_n),
2. activates the min(M, |N(t)|) users with the largest indices, each with
   its arg-max action (ties go to the lowest user id),
3. updates one global virtual queue Q <- max(Q + sum_n p_n(a_n) - beta, 0).

Q(t) stays below V c_max B_max / p_min + sum_n p_n,max - beta on every
sample path.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .core_model import (
    IDLE,
    ActionId,
    FileLengthModel,
    FileState,
    QueueCeilingViolation,
    SubsystemSpec,
    SystemSpec,
    VirtualQueueState,
    best_action,
)
from .sim_engine import SimTrace, SlotSimulator, SubsystemDynamics, prefix_power_slack, system_dynamics
from .single_user import FrameClock
from .utils import NumericalTolerances, validate_horizon


@dataclass
class SchedulerState:
    """
    Everything the scheduler observes at the start of a slot.

    Attributes:
        queue: The global virtual queue Q(t)
        file_states: Per-user file state
        frame_clocks: Per-user renewal frame bookkeeping
    """

    queue: VirtualQueueState
    file_states: List[FileState]
    frame_clocks: List[FrameClock] = field(default_factory=list)

    def __post_init__(self):
        if not self.frame_clocks:
            self.frame_clocks = [FrameClock() for _ in self.file_states]

    def renewal_set(self) -> List[int]:
        """Users beginning a renewal frame this slot: every user holding a file."""
        return [n for n, f in enumerate(self.file_states) if f.active]

    def mark_slot(self, t: int, completed: Sequence[bool]):
        """Advance the frame clocks after slot t."""
        for n, clock in enumerate(self.frame_clocks):
            if self.file_states[n].active:
                clock.close(t + 1)
            elif completed[n]:
                clock.in_idle = True


@dataclass(frozen=True)
class SlotDecision:
    """Actions for one slot and the users activated."""

    actions: Tuple[int, ...]
    active_set: Tuple[int, ...]

    @property
    def n_served(self) -> int:
        return sum(1 for a in self.actions if a != IDLE)

    def power(self, system: SystemSpec) -> float:
        return sum(system.subsystems[n].power[a] for n, a in enumerate(self.actions))


# ============================================================================
# SCHEDULING
# ============================================================================


def subsystem_index(spec: SubsystemSpec, q: float, v: float) -> Tuple[float, ActionId]:
    """
    Index gamma_n of a user holding a file, with its arg-max action.

    gamma_n >= 0 always; it is 0 with action 0 once q >= V c B / p_min.
    """
    return best_action(spec, q, v)


def schedule_slot(state: SchedulerState, system: SystemSpec) -> SlotDecision:
    """
    Serve the min(M, |N(t)|) users with the largest indices.

    A selected user whose index is 0 gets action 0 and spends nothing.
    """
    renewal = state.renewal_set()
    actions = [0] * system.n_users
    if not renewal:
        return SlotDecision(tuple(actions), ())

    q = state.queue.backlog
    v = system.tradeoff
    indexed = [(subsystem_index(system.subsystems[n], q, v), n) for n in renewal]
    # Larger index first, lower user id on ties
    indexed.sort(key=lambda item: (-item[0][0], item[1]))

    chosen = indexed[: min(system.max_concurrent, len(indexed))]
    for (_, a), n in chosen:
        actions[n] = int(a)
    return SlotDecision(tuple(actions), tuple(sorted(n for _, n in chosen)))


def queue_ceiling_multi(system: SystemSpec) -> float:
    """
    Deterministic bound on Q(t) started at 0.

    Returns:
        max(V c_max B_max / p_min + sum_n p_n,max - beta, 0)
    """
    for spec in system.subsystems:
        if spec.n_actions < 2:
            raise ValueError(f"Subsystem {spec.label} has no non-idle action")
    c_max = max(s.weight for s in system.subsystems)
    b_max = max(s.mean_file_size for s in system.subsystems)
    bound = system.tradeoff * c_max * b_max / system.p_min + system.p_max_total - system.power_budget
    return max(bound, 0.0)


def queue_update_slot(
    q: VirtualQueueState,
    decision: SlotDecision,
    system: SystemSpec,
    slot: int = 0,
) -> VirtualQueueState:
    """
    Q(t+1) = max(Q(t) + sum_n p_n(a_n) - beta, 0).

    Raises:
        QueueCeilingViolation: the new backlog exceeds q.ceiling
    """
    backlog = max(q.backlog + decision.power(system) - system.power_budget, 0.0)
    if backlog > q.ceiling + NumericalTolerances.QUEUE_CEILING_ATOL:
        raise QueueCeilingViolation(backlog, q.ceiling, slot)
    return VirtualQueueState(backlog=backlog, ceiling=q.ceiling)


# ============================================================================
# SIMULATION
# ============================================================================


def run_multi_user(
    system: SystemSpec,
    horizon_slots: int,
    seed: int = 0,
    file_models: Optional[Sequence[FileLengthModel]] = None,
    dynamics: Optional[Sequence[SubsystemDynamics]] = None,
    check_invariants: bool = False,
    record_slots: int = 0,
    keep_series: bool = False,
    replicate: int = 0,
) -> SimTrace:
    """
    Simulate the indexing policy for `horizon_slots` slots.

    Args:
        system: Policy-side system (V is system.tradeoff)
        horizon_slots: Number of slots
        seed: Master seed
        file_models: True file-length model of each user; defaults to the
            geometric model matching each user's mean file size
        dynamics: Fully specified truth model; overrides file_models
        check_invariants: Verify sum of power <= beta t + Q(t) after every slot
        record_slots: Keep the last k per-slot records
        keep_series: Keep the per-slot expected reward and power
        replicate: Replicate id mixed into the seed

    Returns:
        Trace with both throughput estimators, power and queue statistics

    Raises:
        QueueCeilingViolation: if the queue or the prefix power bound is broken
    """
    validate_horizon(horizon_slots)
    if dynamics is None:
        dynamics = system_dynamics(system, file_models)

    ceiling = queue_ceiling_multi(system)
    sim = SlotSimulator(
        system,
        dynamics,
        seed=seed,
        replicate=replicate,
        record_slots=record_slots,
        keep_series=keep_series,
        ceiling=ceiling,
    )
    trace = sim.trace
    state = SchedulerState(queue=VirtualQueueState(0.0, ceiling), file_states=sim.states)
    beta = system.power_budget

    for t in range(horizon_slots):
        decision = schedule_slot(state, system)
        trace.observe_queue(state.queue.backlog)
        outcomes = sim.advance(decision.actions, state.queue.backlog)
        state.queue = queue_update_slot(state.queue, decision, system, slot=t)
        state.mark_slot(t, [completed for completed, _ in outcomes])

        if check_invariants:
            if prefix_power_slack(trace.total_power, t + 1, beta, state.queue.backlog) < 0:
                raise QueueCeilingViolation(
                    trace.total_power, beta * (t + 1) + state.queue.backlog, t, "prefix power check, slot"
                )

    return trace


def multi_user_summary(trace: SimTrace, v: float, seed: int) -> Dict[str, float]:
    """Summary row of a multi-user run."""
    return {
        "V": float(v),
        "seed": int(seed),
        "slots": int(trace.slots),
        "weighted_throughput_expected": trace.throughput_expected,
        "weighted_throughput_realized": trace.throughput_realized,
        "avg_power": trace.avg_power,
        "avg_Q": trace.avg_queue,
        "max_Q": trace.max_queue,
        "ceiling": trace.ceiling,
    }
