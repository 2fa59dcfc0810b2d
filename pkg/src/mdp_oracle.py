"""
Constrained MDP Oracle

Exact optimum for small systems. The joint file state of all users is a
composite state s in {0, ..., 2^N - 1} (bit n is user n). For every
feasible (state, composite action) pair the occupation measure x(s, a)
is a variable of the linear program

    maximize    sum x(s,a) sum_n c_n B_n phi_n(a_n)
    subject to  sum x(s,a) = 1
                sum_a x(s',a) = sum_{s,a} x(s,a) P(s' | s, a)   for every s'
                sum x(s,a) sum_n p_n(a_n) <= beta
                x >= 0

solved with the built-in dense simplex. Normalizing x per state gives an
optimal stationary randomized policy.

For a single user the optimum is also available in closed form over the
class of i.i.d. randomized policies, which serves as an independent check.
"""

import math
from dataclasses import dataclass, field
from itertools import combinations, product
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core_model import SubsystemSpec, SystemSpec
from .sim_engine import SimTrace, SlotSimulator, SubsystemDynamics, run_slots
from .simplex import DenseSimplex, InfeasibleError, UnboundedError
from .utils import ExperimentConstants, NumericalTolerances, validate_probability

CompositeAction = Tuple[int, ...]


class OracleSizeError(ValueError):
    """The composite-state LP would be too large to build."""


class LPNumericalError(RuntimeError):
    """The simplex result fails the primal or dual residual checks."""


# ============================================================================
# COMPOSITE STATES AND ACTIONS
# ============================================================================


def state_bits(s: int, n_users: int) -> Tuple[int, ...]:
    """File state of every user in composite state s (bit n is user n)."""
    return tuple((s >> n) & 1 for n in range(n_users))


def state_index(bits: Sequence[int]) -> int:
    return sum(int(b) << n for n, b in enumerate(bits))


def feasible_actions(system: SystemSpec, s: int) -> List[CompositeAction]:
    """
    Composite actions allowed in state s.

    At most M users are served and only users holding a file may be
    served. The all-idle action comes first, then by number of served users.
    """
    n_users = system.n_users
    active = [n for n in range(n_users) if (s >> n) & 1]
    actions: List[CompositeAction] = []
    for k in range(min(system.max_concurrent, len(active)) + 1):
        for users in combinations(active, k):
            choices = [system.subsystems[n].non_idle_actions for n in users]
            for picked in product(*choices):
                a = [0] * n_users
                for n, choice in zip(users, picked):
                    a[n] = choice
                actions.append(tuple(a))
    return actions


# ============================================================================
# TRANSITION KERNEL
# ============================================================================


@dataclass
class TransitionKernel:
    """
    Row-stochastic kernel over composite states.

    Attributes:
        n_states: 2^N
        pairs: Feasible (state, action) pairs, one per kernel row
        matrix: matrix[i, s'] = P(s' | pairs[i])
    """

    n_states: int
    pairs: List[Tuple[int, CompositeAction]]
    matrix: np.ndarray

    def row(self, s: int, action: CompositeAction) -> np.ndarray:
        return self.matrix[self.pairs.index((s, tuple(action)))]

    def max_row_error(self) -> float:
        return float(np.abs(self.matrix.sum(axis=1) - 1.0).max(initial=0.0))


def user_transition(spec: SubsystemSpec, bit: int, a: int) -> np.ndarray:
    """[P(next bit = 0), P(next bit = 1)] for one user."""
    if bit:
        phi = spec.success_prob[a]
        return np.array([phi, 1.0 - phi])
    lam = spec.idle_rate
    return np.array([1.0 - lam, lam])


def joint_transition(system: SystemSpec, s: int, action: CompositeAction) -> np.ndarray:
    """Product of the per-user transitions; user 0 is the least significant bit."""
    joint = user_transition(system.subsystems[0], s & 1, action[0])
    for n in range(1, system.n_users):
        joint = np.kron(user_transition(system.subsystems[n], (s >> n) & 1, action[n]), joint)
    return joint


def _check_size(system: SystemSpec):
    if system.n_users > ExperimentConstants.MAX_ORACLE_USERS:
        raise OracleSizeError(
            f"Composite LP for {system.n_users} users exceeds the limit of "
            f"{ExperimentConstants.MAX_ORACLE_USERS} users"
        )


def build_transition_kernel(system: SystemSpec) -> TransitionKernel:
    """Kernel rows for every feasible (state, action) pair, in LP variable order."""
    _check_size(system)
    n_states = 1 << system.n_users
    pairs = [(s, a) for s in range(n_states) for a in feasible_actions(system, s)]
    matrix = np.empty((len(pairs), n_states))
    for i, (s, a) in enumerate(pairs):
        matrix[i] = joint_transition(system, s, a)
    kernel = TransitionKernel(n_states=n_states, pairs=pairs, matrix=matrix)
    if kernel.max_row_error() > NumericalTolerances.KERNEL_ROW_SUM:
        raise LPNumericalError(f"Transition kernel rows deviate from 1 by {kernel.max_row_error():.3e}")
    return kernel


# ============================================================================
# OCCUPANCY LP
# ============================================================================


@dataclass
class OccupancyLP:
    """
    Occupation-measure LP of a system.

    Equality rows: normalization first, then one flow-balance row per state.
    The single inequality row is the power budget.
    """

    system: SystemSpec
    kernel: TransitionKernel
    objective: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray

    @property
    def variables(self) -> List[Tuple[int, CompositeAction]]:
        return self.kernel.pairs

    @property
    def n_variables(self) -> int:
        return len(self.kernel.pairs)

    @property
    def n_constraints(self) -> int:
        return self.b_eq.size + self.b_ub.size

    @property
    def power(self) -> np.ndarray:
        return self.A_ub[0]


def build_occupancy_lp(system: SystemSpec) -> OccupancyLP:
    """
    Assemble the occupation-measure LP.

    Raises:
        OracleSizeError: more than 12 users
    """
    kernel = build_transition_kernel(system)
    n_states = kernel.n_states
    n_vars = len(kernel.pairs)

    objective = np.empty(n_vars)
    power = np.empty(n_vars)
    owner = np.zeros((n_states, n_vars))
    for i, (s, a) in enumerate(kernel.pairs):
        objective[i] = sum(
            spec.weight * spec.mean_file_size * spec.success_prob[an] for spec, an in zip(system.subsystems, a)
        )
        power[i] = sum(spec.power[an] for spec, an in zip(system.subsystems, a))
        owner[s, i] = 1.0

    A_eq = np.vstack([np.ones((1, n_vars)), owner - kernel.matrix.T])
    b_eq = np.zeros(n_states + 1)
    b_eq[0] = 1.0

    return OccupancyLP(
        system=system,
        kernel=kernel,
        objective=objective,
        A_eq=A_eq,
        b_eq=b_eq,
        A_ub=power[None, :],
        b_ub=np.array([system.power_budget]),
    )


@dataclass
class OracleSolution:
    """
    Optimal occupation measure with its verification figures.

    Attributes:
        opt_value: Optimal long-run weighted throughput
        occupation: x(s, a) in LP variable order
        duality_gap: |primal - dual| objective
        flow_residual: Max violation of the flow-balance rows
        normalization_residual: |sum x - 1|
        power_slack: beta - sum x p (>= -tol)
        dual_power: Price of the power constraint
        iterations: Simplex pivots
    """

    opt_value: float
    occupation: np.ndarray
    duality_gap: float
    flow_residual: float
    normalization_residual: float
    power_slack: float
    dual_power: float
    iterations: int
    duals_eq: np.ndarray = field(repr=False, default=None)


def solve_lp(
    lp: OccupancyLP,
    tol: float = NumericalTolerances.LP_RESIDUAL,
    solver: Optional[DenseSimplex] = None,
) -> OracleSolution:
    """
    Solve the occupancy LP and verify the result.

    Args:
        lp: Problem from build_occupancy_lp
        tol: Allowed primal residual and dual infeasibility
        solver: Simplex instance to use (default settings otherwise)

    Returns:
        Optimal value and occupation measure with residuals

    Raises:
        LPNumericalError: the solver fails or a residual exceeds tol
    """
    solver = solver or DenseSimplex()
    try:
        result = solver.solve(lp.objective, lp.A_eq, lp.b_eq, lp.A_ub, lp.b_ub)
    except (InfeasibleError, UnboundedError, RuntimeError) as exc:
        raise LPNumericalError(f"Occupancy LP solve failed: {exc}") from exc

    x = result.x
    eq_residual = lp.A_eq @ x - lp.b_eq
    flow_residual = float(np.abs(eq_residual[1:]).max(initial=0.0))
    normalization_residual = float(abs(eq_residual[0]))
    power_slack = float(lp.b_ub[0] - lp.A_ub[0] @ x)

    primal_worst = max(flow_residual, normalization_residual, -power_slack)
    if primal_worst > tol:
        raise LPNumericalError(f"Primal residual {primal_worst:.3e} exceeds tolerance {tol:.1e}")

    reduced = lp.objective - lp.A_eq.T @ result.duals_eq - lp.A_ub.T @ result.duals_ub
    scale = max(1.0, float(np.abs(lp.objective).max(initial=0.0)))
    dual_worst = max(float(reduced.max(initial=0.0)), float(-result.duals_ub.min(initial=0.0)))
    if dual_worst > math.sqrt(tol) * scale:
        raise LPNumericalError(f"Dual infeasibility {dual_worst:.3e} after simplex termination")

    dual_value = result.dual_objective(lp.b_eq, lp.b_ub)
    return OracleSolution(
        opt_value=result.objective,
        occupation=x,
        duality_gap=abs(result.objective - dual_value),
        flow_residual=flow_residual,
        normalization_residual=normalization_residual,
        power_slack=power_slack,
        dual_power=float(result.duals_ub[0]),
        iterations=result.iterations,
        duals_eq=result.duals_eq,
    )


def solve_system(
    system: SystemSpec, tol: float = NumericalTolerances.LP_RESIDUAL
) -> Tuple[OccupancyLP, OracleSolution]:
    """Build and solve the occupancy LP of a system."""
    lp = build_occupancy_lp(system)
    return lp, solve_lp(lp, tol)


# ============================================================================
# POLICY EXTRACTION AND SIMULATION
# ============================================================================


@dataclass
class StationaryRandomizedPolicy:
    """
    theta(a | s) for every composite state.

    Attributes:
        n_users: Number of users
        actions: Feasible actions with positive probability, per state
        probabilities: Matching probabilities, per state
    """

    n_users: int
    actions: Dict[int, List[CompositeAction]]
    probabilities: Dict[int, np.ndarray]

    def __post_init__(self):
        self._cumulative = {s: np.cumsum(p) for s, p in self.probabilities.items()}

    def distribution(self, s: int) -> List[Tuple[CompositeAction, float]]:
        return list(zip(self.actions[s], (float(p) for p in self.probabilities[s])))

    def is_deterministic(self) -> bool:
        return all(len(a) == 1 for a in self.actions.values())

    def sample(self, s: int, u: float) -> CompositeAction:
        """Action for state s given a uniform draw u in [0, 1)."""
        cumulative = self._cumulative[s]
        i = int(np.searchsorted(cumulative, u * cumulative[-1], side="right"))
        return self.actions[s][min(i, len(cumulative) - 1)]


def extract_policy(lp: OccupancyLP, occupation: np.ndarray, tol: float = 1e-12) -> StationaryRandomizedPolicy:
    """
    Normalize the occupation measure per state.

    States whose total occupancy is at most tol get the all-idle action.
    """
    n_users = lp.system.n_users
    grouped: Dict[int, List[Tuple[CompositeAction, float]]] = {s: [] for s in range(lp.kernel.n_states)}
    for (s, a), value in zip(lp.variables, occupation):
        grouped[s].append((a, max(float(value), 0.0)))

    actions: Dict[int, List[CompositeAction]] = {}
    probabilities: Dict[int, np.ndarray] = {}
    idle = tuple([0] * n_users)
    for s, entries in grouped.items():
        total = sum(value for _, value in entries)
        if total <= tol:
            actions[s] = [idle]
            probabilities[s] = np.array([1.0])
            continue
        kept = [(a, value / total) for a, value in entries if value / total > tol]
        actions[s] = [a for a, _ in kept]
        weights = np.array([p for _, p in kept])
        probabilities[s] = weights / weights.sum()

    return StationaryRandomizedPolicy(n_users=n_users, actions=actions, probabilities=probabilities)


def simulate_policy(
    system: SystemSpec,
    policy: StationaryRandomizedPolicy,
    horizon: int,
    seed: int = 0,
    replicate: int = 0,
    dynamics: Optional[Sequence[SubsystemDynamics]] = None,
    keep_series: bool = False,
) -> SimTrace:
    """Run a stationary randomized policy closed-loop on the slot simulator."""
    if policy.n_users != system.n_users:
        raise ValueError(f"Policy covers {policy.n_users} users, system has {system.n_users}")
    sim = SlotSimulator(system, dynamics, seed=seed, replicate=replicate, keep_series=keep_series)
    scheduler = sim.rng.scheduler

    def decide(simulator: SlotSimulator) -> CompositeAction:
        return policy.sample(simulator.composite_state(), scheduler.uniform())

    return run_slots(sim, horizon, decide)


# ============================================================================
# SINGLE-USER CLOSED FORM
# ============================================================================


def iid_policy_value(spec: SubsystemSpec, theta: Sequence[float]) -> Tuple[float, float]:
    """
    Long-run value of choosing action a with probability theta[a] every frame.

    Args:
        spec: User parameters
        theta: Probability of each action (sums to 1)

    Returns:
        (weighted throughput, average power) by renewal-reward
    """
    theta = np.asarray(theta, dtype=float)
    if theta.size != spec.n_actions:
        raise ValueError(f"theta has {theta.size} entries for {spec.n_actions} actions")
    for a, value in enumerate(theta):
        validate_probability(float(value), f"theta[{a}]")
    if not math.isclose(float(theta.sum()), 1.0, abs_tol=1e-12):
        raise ValueError(f"theta sums to {theta.sum()}, expected 1")

    phi = float(theta @ np.asarray(spec.success_prob))
    power = float(theta @ np.asarray(spec.power))
    frame = 1.0 + phi / spec.idle_rate
    return spec.weight * spec.mean_file_size * phi / frame, power / frame


def grid_search_single_user(
    spec: SubsystemSpec,
    beta: float,
    resolution: float = 1e-5,
    action: int = 1,
) -> Tuple[float, float]:
    """
    Best power-feasible policy that serves with `action` w.p. theta, else idles.

    Returns:
        (theta, weighted throughput) of the best grid point
    """
    if not spec.is_valid_action(action) or action == 0:
        raise ValueError(f"Action {action} is not a non-idle action of {spec.label}")
    points = int(round(1.0 / resolution)) + 1
    theta = np.linspace(0.0, 1.0, points)
    phi = theta * spec.success_prob[action]
    frame = 1.0 + phi / spec.idle_rate
    throughput = spec.weight * spec.mean_file_size * phi / frame
    power = theta * spec.power[action] / frame

    feasible = power <= beta
    best = int(np.argmax(np.where(feasible, throughput, -np.inf)))
    return float(theta[best]), float(throughput[best])


# ============================================================================
# REPORTING
# ============================================================================


def lp_summary(lp: OccupancyLP, solution: OracleSolution) -> Dict[str, float]:
    """Summary row of an oracle solve."""
    return {
        "opt_value": solution.opt_value,
        "variable_count": lp.n_variables,
        "constraint_count": lp.n_constraints,
        "duality_gap": solution.duality_gap,
        "flow_residual": solution.flow_residual,
        "normalization_residual": solution.normalization_residual,
        "power_slack": solution.power_slack,
        "dual_power": solution.dual_power,
        "iterations": solution.iterations,
    }


def _variable_name(s: int, action: CompositeAction) -> str:
    return f"x_s{s}_a{''.join(str(a) for a in action)}"


def _linear_expression(coefficients: np.ndarray, names: Sequence[str], per_line: int = 6) -> str:
    terms = []
    for coef, name in zip(coefficients, names):
        if coef == 0.0:
            continue
        sign = "-" if coef < 0 else "+"
        terms.append(f"{sign} {abs(coef):.17g} {name}")
    if not terms:
        return f"0 {names[0]}"
    lines = [" ".join(terms[i : i + per_line]) for i in range(0, len(terms), per_line)]
    return "\n   ".join(lines)


def write_lp_file(lp: OccupancyLP, path: Union[str, Path]) -> Path:
    """
    Write the LP in CPLEX LP text format.

    Variables are named x_s<state>_a<actions>; non-negativity is the
    format's default bound.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [_variable_name(s, a) for s, a in lp.variables]

    out = [
        f"\\ Occupancy LP: {lp.system.n_users} users, M = {lp.system.max_concurrent}, "
        f"beta = {lp.system.power_budget:g}",
        "Maximize",
        f" throughput: {_linear_expression(lp.objective, names)}",
        "Subject To",
        f" normalization: {_linear_expression(lp.A_eq[0], names)} = 1",
    ]
    for s in range(lp.kernel.n_states):
        out.append(f" flow_s{s}: {_linear_expression(lp.A_eq[s + 1], names)} = 0")
    out.append(f" power: {_linear_expression(lp.A_ub[0], names)} <= {lp.b_ub[0]:.17g}")
    out.append("End")

    path.write_text("\n".join(out) + "\n")
    return path
