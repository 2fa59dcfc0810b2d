"""
Single-User Frame-Based Scheduler

One downloading user under an average power budget beta. At the start of
every renewal frame the scheduler picks the action maximizing the
drift-plus-penalty ratio

    (V c B phi(a) - Q p(a)) / (1 + phi(a) / lambda)

and keeps it for the whole frame. The virtual queue Q is updated once per
frame, Q <- max(Q + p(a) - beta T, 0), and never exceeds

    V c B / p_min + p_max - beta

whatever lambda, B and phi the policy believes in, as long as the powers
are those actually spent.

Frames: a frame begins at every slot in which the user holds a file. If
the file completes, the frame also covers the following idle period and
ends at the slot where the next file arrives.
"""

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

from .core_model import (
    ActionId,
    QueueCeilingViolation,
    SubsystemSpec,
    VirtualQueueState,
    best_action,
    single_user_system,
)
from .sim_engine import SimTrace, SlotSimulator, SubsystemDynamics, matched_dynamics, prefix_power_slack
from .utils import NumericalTolerances, validate_horizon, validate_positive


@dataclass
class FrameClock:
    """
    Renewal-frame bookkeeping of one user.

    Attributes:
        frame_index: Number of completed frames k
        frame_start_slot: First slot t_k of the current frame
        in_idle: True once the frame's file has completed and the user waits for a new request
    """

    frame_index: int = 0
    frame_start_slot: int = 0
    in_idle: bool = False

    def close(self, next_start: int) -> int:
        """End the current frame at `next_start`; returns its length T[k] >= 1."""
        length = next_start - self.frame_start_slot
        if length < 1:
            raise ValueError(f"Frame {self.frame_index} would have non-positive length {length}")
        self.frame_index += 1
        self.frame_start_slot = next_start
        self.in_idle = False
        return length


# ============================================================================
# POLICY
# ============================================================================


def choose_action_single(spec: SubsystemSpec, q: float, v: float) -> ActionId:
    """
    Frame-start decision: arg-max of the drift-plus-penalty ratio.

    Args:
        spec: Policy-side parameters of the user
        q: Virtual queue backlog Q[k]
        v: Tradeoff parameter V

    Returns:
        Action for the frame; the lowest id wins ties so a zero reward idles
    """
    return best_action(spec, q, v)[1]


def queue_ceiling_single(spec: SubsystemSpec, v: float, beta: float) -> float:
    """
    Deterministic bound on the frame-based virtual queue started at 0.

    Returns:
        max(V c B / p_min + p_max - beta, 0) over the non-idle actions
    """
    if spec.n_actions < 2:
        raise ValueError(f"Subsystem {spec.label} has no non-idle action")
    return max(v * spec.weight * spec.mean_file_size / spec.p_min + spec.p_max - beta, 0.0)


def queue_update_frame(
    q: VirtualQueueState,
    spec: SubsystemSpec,
    a: int,
    frame_len: int,
    beta: float,
    frame_index: int = 0,
) -> VirtualQueueState:
    """
    Close frame k: Q[k+1] = max(Q[k] + p(a) - beta T[k], 0).

    Raises:
        ValueError: frame_len is not a positive integer
        QueueCeilingViolation: the new backlog exceeds q.ceiling
    """
    if frame_len < 1 or int(frame_len) != frame_len:
        raise ValueError(f"Frame length {frame_len} must be a positive integer")
    backlog = max(q.backlog + spec.power[a] - beta * frame_len, 0.0)
    if backlog > q.ceiling + NumericalTolerances.QUEUE_CEILING_ATOL:
        raise QueueCeilingViolation(backlog, q.ceiling, frame_index, what="frame")
    return VirtualQueueState(backlog=backlog, ceiling=q.ceiling)


# ============================================================================
# SIMULATION
# ============================================================================


def run_single_user(
    spec: SubsystemSpec,
    v: float,
    beta: float,
    horizon_slots: int,
    seed: int = 0,
    dynamics: Optional[SubsystemDynamics] = None,
    check_invariants: bool = False,
    record_slots: int = 0,
    keep_series: bool = False,
    replicate: int = 0,
) -> SimTrace:
    """
    Simulate the frame-based policy for `horizon_slots` slots.

    Args:
        spec: Parameters the policy uses (lambda, B, phi may be misestimated)
        v: Tradeoff parameter V >= 0
        beta: Average power budget
        horizon_slots: Number of slots
        seed: Master seed
        dynamics: True file dynamics; defaults to the ones `spec` describes
        check_invariants: Verify sum of power <= beta t_K + Q[K] at every frame boundary
        record_slots: Keep the last k per-slot records
        keep_series: Keep the per-slot expected reward and power (for batch-means errors)
        replicate: Replicate id mixed into the seed

    Returns:
        Trace with weighted throughput, power, queue statistics and the
        frame-length histogram

    Raises:
        QueueCeilingViolation: if the queue or the prefix power bound is broken
    """
    validate_horizon(horizon_slots)
    validate_positive(v, "Tradeoff V", allow_zero=True)
    validate_positive(beta, "Power budget", allow_zero=True)

    system = single_user_system(spec, beta, v)
    ceiling = queue_ceiling_single(spec, v, beta)
    truth = [dynamics] if dynamics is not None else [matched_dynamics(spec)]
    sim = SlotSimulator(
        system,
        truth,
        seed=seed,
        replicate=replicate,
        record_slots=record_slots,
        keep_series=keep_series,
        ceiling=ceiling,
    )
    trace = sim.trace
    queue = VirtualQueueState(backlog=0.0, ceiling=ceiling)
    clock = FrameClock()
    frame_action = 0

    for t in range(horizon_slots):
        holding = sim.states[0].active
        if holding:
            frame_action = choose_action_single(spec, queue.backlog, v)
        action = frame_action if holding else 0

        trace.observe_queue(queue.backlog)
        (completed, _), = sim.advance([action], queue.backlog)
        if completed:
            clock.in_idle = True

        # The next slot starts a new frame whenever the user holds a file again
        if sim.states[0].active:
            index = clock.frame_index
            frame_len = clock.close(t + 1)
            queue = queue_update_frame(queue, spec, frame_action, frame_len, beta, frame_index=index)
            trace.frame_length_hist[frame_len] += 1
            if check_invariants:
                slack = prefix_power_slack(trace.total_power, t + 1, beta, queue.backlog)
                if slack < 0:
                    raise QueueCeilingViolation(
                        trace.total_power, beta * (t + 1) + queue.backlog, index, "prefix power check, frame"
                    )

    return trace


def single_user_summary(trace: SimTrace, v: float, seed: int) -> Dict[str, float]:
    """Summary row (V, seed, slots, throughput, avg_power, max_Q, ceiling)."""
    return {
        "V": float(v),
        "seed": int(seed),
        "slots": int(trace.slots),
        "throughput": trace.throughput_expected,
        "avg_power": trace.avg_power,
        "max_Q": trace.max_queue,
        "ceiling": trace.ceiling,
    }


def sweep_single_user(
    spec: SubsystemSpec,
    v_grid: Sequence[float],
    beta: float,
    horizon_slots: int,
    seed: int = 0,
) -> Dict[float, SimTrace]:
    """Run the single-user policy once per V (same seed for every V)."""
    if not v_grid:
        raise ValueError("v_grid must contain at least one value")
    return {float(v): run_single_user(spec, v, beta, horizon_slots, seed) for v in v_grid}


def power_overshoot_bound(ceiling: float, horizon_slots: int) -> float:
    """Largest average-power excess over beta allowed after `horizon_slots` slots."""
    if math.isinf(ceiling):
        return math.inf
    return ceiling / horizon_slots
