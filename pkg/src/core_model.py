"""
Core Model for Power-Constrained File Downloading

Domain types shared by the schedulers, the simulator and the MDP oracle:
per-user subsystem parameters, the multi-user system, the virtual power
queue, file states and file-length models, together with the pure
formulas (frame length, memoryless success probabilities, DPP reward).

Action sets are dense integer-indexed tuples. Index 0 is the idle action
by construction: success_prob[0] == power[0] == 0.
"""

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import NewType, Optional, Sequence, Tuple

from .utils import BaselineConstants, validate_positive, validate_probability

ActionId = NewType("ActionId", int)

IDLE: ActionId = ActionId(0)


class QueueCeilingViolation(RuntimeError):
    """A virtual queue left its deterministic bound, which indicates a scheduler bug."""

    def __init__(self, backlog: float, ceiling: float, index: int, what: str = "slot"):
        self.backlog = backlog
        self.ceiling = ceiling
        self.index = index
        self.what = what
        super().__init__(f"Virtual queue {backlog:.12g} exceeds ceiling {ceiling:.12g} at {what} {index}")

    def __reduce__(self):
        # Worker processes send exceptions back pickled
        return (type(self), (self.backlog, self.ceiling, self.index, self.what))


# ============================================================================
# SUBSYSTEM AND SYSTEM
# ============================================================================


@dataclass(frozen=True)
class SubsystemSpec:
    """
    Parameters of one downloading user.

    Attributes:
        idle_rate: Probability lambda in (0, 1] that an idle user requests a new file
        mean_file_size: Expected file size B (bits or packets)
        success_prob: phi(a) per action, phi(0) = 0
        power: p(a) per action, p(0) = 0 and p(a) > 0 for a != 0
        weight: Throughput weight c > 0
        name: Label used in tables
    """

    idle_rate: float
    mean_file_size: float
    success_prob: Tuple[float, ...]
    power: Tuple[float, ...]
    weight: float = 1.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "success_prob", tuple(float(x) for x in self.success_prob))
        object.__setattr__(self, "power", tuple(float(x) for x in self.power))

        validate_probability(self.idle_rate, f"Idle rate of {self.label}", allow_zero=False)
        validate_positive(self.mean_file_size, f"Mean file size of {self.label}")
        validate_positive(self.weight, f"Weight of {self.label}")

        if len(self.success_prob) != len(self.power):
            raise ValueError(
                f"{self.label}: success_prob has {len(self.success_prob)} actions "
                f"but power has {len(self.power)}"
            )
        if len(self.success_prob) < 1:
            raise ValueError(f"{self.label}: action set must contain the idle action 0")
        if self.success_prob[0] != 0.0 or self.power[0] != 0.0:
            raise ValueError(f"{self.label}: idle action 0 must have zero success probability and zero power")

        for a, (phi, p) in enumerate(zip(self.success_prob, self.power)):
            validate_probability(phi, f"{self.label} success_prob[{a}]")
            if a > 0:
                validate_positive(p, f"{self.label} power[{a}]")

    @property
    def label(self) -> str:
        return self.name or "subsystem"

    @property
    def n_actions(self) -> int:
        return len(self.success_prob)

    @property
    def non_idle_actions(self) -> range:
        return range(1, self.n_actions)

    @property
    def p_min(self) -> float:
        """Smallest power over non-idle actions (inf if none)."""
        return min(self.power[1:], default=math.inf)

    @property
    def p_max(self) -> float:
        """Largest power over all actions."""
        return max(self.power)

    def is_valid_action(self, a: int) -> bool:
        return 0 <= a < self.n_actions


@dataclass(frozen=True)
class SystemSpec:
    """
    N subsystems sharing a server with M threads and a power budget.

    Attributes:
        subsystems: Ordered user parameters
        power_budget: Time-average power budget beta
        max_concurrent: Server limit M (1 <= M <= N)
        tradeoff: Lyapunov tradeoff parameter V >= 0
    """

    subsystems: Tuple[SubsystemSpec, ...]
    power_budget: float = BaselineConstants.POWER_BUDGET
    max_concurrent: int = 1
    tradeoff: float = BaselineConstants.DEFAULT_TRADEOFF

    def __post_init__(self):
        object.__setattr__(self, "subsystems", tuple(self.subsystems))

        if len(self.subsystems) < 1:
            raise ValueError("System must contain at least one subsystem")
        if int(self.max_concurrent) != self.max_concurrent or self.max_concurrent < 1:
            raise ValueError(f"Server limit M={self.max_concurrent} must be a positive integer")
        if self.max_concurrent > len(self.subsystems):
            raise ValueError(f"Server limit M={self.max_concurrent} exceeds number of users N={len(self.subsystems)}")
        validate_positive(self.power_budget, "Power budget", allow_zero=True)
        validate_positive(self.tradeoff, "Tradeoff V", allow_zero=True)

    @property
    def n_users(self) -> int:
        return len(self.subsystems)

    def subsystem(self, n: int) -> SubsystemSpec:
        return self.subsystems[n]

    @property
    def p_min(self) -> float:
        """Smallest non-idle power over all users."""
        return min(s.p_min for s in self.subsystems)

    @property
    def p_max_total(self) -> float:
        """Sum over users of the largest per-user power."""
        return sum(s.p_max for s in self.subsystems)

    def with_tradeoff(self, v: float) -> "SystemSpec":
        """Copy of this system with a different V."""
        return replace(self, tradeoff=float(v))

    def with_budget(self, beta: float) -> "SystemSpec":
        """Copy of this system with a different power budget."""
        return replace(self, power_budget=float(beta))


# ============================================================================
# RUNTIME STATE
# ============================================================================


@dataclass
class VirtualQueueState:
    """Virtual power queue: backlog Q and its deterministic ceiling."""

    backlog: float = 0.0
    ceiling: float = math.inf

    def __post_init__(self):
        if self.backlog < 0.0:
            raise ValueError(f"Queue backlog {self.backlog} must be non-negative")


@dataclass
class FileState:
    """
    File state of one user.

    Attributes:
        active: 1 while a file is downloading, 0 while idle
        residual: Remaining packets (packet-level models only, else 0)
        size: Length of the current file, credited on completion
    """

    active: int = 0
    residual: int = 0
    size: float = 0.0

    def __post_init__(self):
        if self.active not in (0, 1):
            raise ValueError(f"File state {self.active} must be 0 or 1")
        if self.active == 0 and self.residual != 0:
            raise ValueError("Inactive file state must have zero residual")


class FileLengthKind(Enum):
    """Supported file length distributions."""

    GEOMETRIC = "geometric"
    EXPONENTIAL = "exponential"
    UNIFORM = "uniform"
    POISSON = "poisson"


@dataclass(frozen=True)
class FileLengthModel:
    """
    File length distribution used by the simulator.

    geometric(mu): packets ~ Geometric(mu) on {1, 2, ...}, memoryless
    exponential(mean): bits ~ Exponential(mean), memoryless
    uniform(lo, hi): packets uniform on the integers lo..hi inclusive
    poisson(mean): packets max(Poisson(m), 1) with m calibrated so the mean is `mean`
    """

    kind: FileLengthKind
    mu: Optional[float] = None
    mean: Optional[float] = None
    lo: Optional[int] = None
    hi: Optional[int] = None

    def __post_init__(self):
        if self.kind is FileLengthKind.GEOMETRIC:
            if self.mu is None:
                raise ValueError("Geometric file model requires mu")
            validate_probability(self.mu, "Geometric packet rate mu", allow_zero=False)
        elif self.kind in (FileLengthKind.EXPONENTIAL, FileLengthKind.POISSON):
            if self.mean is None:
                raise ValueError(f"{self.kind.value} file model requires mean")
            validate_positive(self.mean, f"{self.kind.value} mean")
            if self.kind is FileLengthKind.POISSON and self.mean <= 1.0:
                raise ValueError(f"Poisson mean {self.mean} must exceed 1 packet (lengths are clamped to >= 1)")
        elif self.kind is FileLengthKind.UNIFORM:
            if self.lo is None or self.hi is None:
                raise ValueError("Uniform file model requires lo and hi")
            if int(self.lo) != self.lo or int(self.hi) != self.hi or not 1 <= self.lo <= self.hi:
                raise ValueError(f"Uniform range [{self.lo}, {self.hi}] must satisfy 1 <= lo <= hi integers")

    @classmethod
    def geometric(cls, mu: float) -> "FileLengthModel":
        return cls(FileLengthKind.GEOMETRIC, mu=float(mu))

    @classmethod
    def exponential(cls, mean: float) -> "FileLengthModel":
        return cls(FileLengthKind.EXPONENTIAL, mean=float(mean))

    @classmethod
    def uniform(cls, lo: int, hi: int) -> "FileLengthModel":
        return cls(FileLengthKind.UNIFORM, lo=int(lo), hi=int(hi))

    @classmethod
    def poisson(cls, mean: float) -> "FileLengthModel":
        return cls(FileLengthKind.POISSON, mean=float(mean))

    @property
    def is_memoryless(self) -> bool:
        return self.kind in (FileLengthKind.GEOMETRIC, FileLengthKind.EXPONENTIAL)

    @property
    def expected_length(self) -> float:
        if self.kind is FileLengthKind.GEOMETRIC:
            return 1.0 / self.mu
        if self.kind is FileLengthKind.UNIFORM:
            return 0.5 * (self.lo + self.hi)
        return float(self.mean)

    def describe(self) -> str:
        if self.kind is FileLengthKind.GEOMETRIC:
            return f"geometric(mu={self.mu:g})"
        if self.kind is FileLengthKind.UNIFORM:
            return f"uniform[{self.lo},{self.hi}]"
        return f"{self.kind.value}(mean={self.mean:g})"


# ============================================================================
# FORMULAS
# ============================================================================


def expected_frame_length(spec: SubsystemSpec, a: int) -> float:
    """
    Expected renewal frame length given the frame's action.

    E[T | a] = 1 + phi(a) / lambda: one slot of service, plus a geometric
    idle period of mean 1/lambda when the file completes.
    """
    return 1.0 + spec.success_prob[a] / spec.idle_rate


def phi_from_exponential(mean_size: float, rate: float, succ: float) -> float:
    """
    Completion probability for exponentially distributed file sizes.

    Args:
        mean_size: Mean file size B in bits
        rate: Bits sent in the slot, r(a)
        succ: Transmission success probability q(a)

    Returns:
        q * Pr[B <= r] = q * (1 - exp(-r / B))
    """
    return succ * -math.expm1(-rate / mean_size)


def phi_from_geometric(packet_rate: float, succ: float) -> float:
    """Completion probability mu * q for geometric packet counts (one packet per slot)."""
    return packet_rate * succ


def dpp_reward(spec: SubsystemSpec, a: int, q: float, v: float) -> float:
    """
    Drift-plus-penalty ratio of taking action a with backlog q.

    g(a) = (V c B phi(a) - Q p(a)) / (1 + phi(a) / lambda)
    """
    phi = spec.success_prob[a]
    numerator = v * spec.weight * spec.mean_file_size * phi - q * spec.power[a]
    return numerator / (1.0 + phi / spec.idle_rate)


def best_action(spec: SubsystemSpec, q: float, v: float) -> Tuple[float, ActionId]:
    """
    Maximize dpp_reward over the action set.

    Ties go to the lowest action id, so a zero-reward tie idles.

    Returns:
        (best reward, arg-max action); the reward is >= 0 since idle gives 0
    """
    best_value = 0.0
    best = IDLE
    for a in spec.non_idle_actions:
        value = dpp_reward(spec, a, q, v)
        if value > best_value:
            best_value = value
            best = ActionId(a)
    return best_value, best


# ============================================================================
# CONSTRUCTORS
# ============================================================================


def subsystem_from_geometric(
    idle_rate: float,
    packet_rate: float,
    packet_success: Sequence[float],
    power: Sequence[float],
    weight: float = 1.0,
    name: str = "",
) -> SubsystemSpec:
    """
    Build a subsystem whose file sizes are geometric packet counts.

    Args:
        packet_success: q(a) for each action, q(0) must be 0
    """
    phis = tuple(phi_from_geometric(packet_rate, q) for q in packet_success)
    return SubsystemSpec(
        idle_rate=idle_rate,
        mean_file_size=1.0 / packet_rate,
        success_prob=phis,
        power=tuple(power),
        weight=weight,
        name=name,
    )


def subsystem_from_exponential(
    idle_rate: float,
    mean_size: float,
    rates: Sequence[float],
    transmission_success: Sequence[float],
    power: Sequence[float],
    weight: float = 1.0,
    name: str = "",
) -> SubsystemSpec:
    """Build a subsystem whose file sizes are exponential bits, from per-action (rate, success)."""
    if len(rates) != len(transmission_success):
        raise ValueError("rates and transmission_success must have one entry per action")
    phis = tuple(phi_from_exponential(mean_size, r, q) for r, q in zip(rates, transmission_success))
    return SubsystemSpec(
        idle_rate=idle_rate,
        mean_file_size=mean_size,
        success_prob=phis,
        power=tuple(power),
        weight=weight,
        name=name,
    )


def baseline_system(
    v: float = BaselineConstants.DEFAULT_TRADEOFF,
    packet_rates: Sequence[float] = BaselineConstants.PACKET_RATES,
    idle_rates: Sequence[float] = BaselineConstants.IDLE_RATES,
    packet_success: Sequence[float] = BaselineConstants.PACKET_SUCCESS,
    powers: Sequence[float] = BaselineConstants.POWERS,
) -> SystemSpec:
    """
    Three-user reference system with binary action sets.

    Defaults give lambda = (0.8, 0.5, 0.1), mu = (0.1, 0.2, 0.4),
    phi(1) = (0.9, 0.8, 0.7) * mu, p(1) = (2, 1.5, 1), c = (1, 1.5, 2),
    beta = 1 and M = 1. Any parameter group may be overridden.
    """
    subsystems = tuple(
        subsystem_from_geometric(
            idle_rate=lam,
            packet_rate=mu,
            packet_success=(0.0, q),
            power=(0.0, p),
            weight=c,
            name=f"user-{n + 1}",
        )
        for n, (lam, mu, q, p, c) in enumerate(
            zip(idle_rates, packet_rates, packet_success, powers, BaselineConstants.WEIGHTS)
        )
    )
    return SystemSpec(
        subsystems=subsystems,
        power_budget=BaselineConstants.POWER_BUDGET,
        max_concurrent=BaselineConstants.MAX_CONCURRENT,
        tradeoff=v,
    )


def robustness_system(v: float = BaselineConstants.DEFAULT_TRADEOFF) -> SystemSpec:
    """Reference system with matched-mean packet rates mu = (1/10, 1/5, 1/3)."""
    return baseline_system(v, packet_rates=BaselineConstants.ROBUST_PACKET_RATES)


def single_user_system(spec: SubsystemSpec, power_budget: float, v: float = 0.0) -> SystemSpec:
    """Embed one subsystem as an N = M = 1 system."""
    return SystemSpec(subsystems=(spec,), power_budget=power_budget, max_concurrent=1, tradeoff=v)
