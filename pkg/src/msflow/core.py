"""Domain types shared by the simulator: flows, requests, batches and priority keys."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Sequence

INF = float("inf")


class Stage(IntEnum):
    REUSE = 1
    COLLECTIVE = 2
    P2D = 3


class Band(IntEnum):
    """Priority bands, most urgent first."""

    URGENT_P2D = 0
    EARLY = 1
    DEFERRED_P2D = 2
    SCAVENGER = 3


class FlowState(IntEnum):
    PENDING = 0
    ACTIVE = 1
    DONE = 2


# plain-int aliases for hot loops (enum attribute access is slow)
REUSE, COLLECTIVE, P2D = 1, 2, 3
URGENT, EARLY, DEFERRED, SCAVENGER = 0, 1, 2, 3
PENDING, ACTIVE, DONE = 0, 1, 2


@dataclass(frozen=True, order=True)
class PriorityKey:
    """Total order over flows. Smaller keys are served first.

    ``tiebreak`` is ``(inter-request rank, release_time, flow id)``.
    """

    band: Band
    level: int = 1
    tiebreak: tuple = (0, 0.0, 0)

    @property
    def urgency(self) -> tuple:
        # rank/release are tiebreaks, not urgency; promotion is judged on this pair
        return (int(self.band), self.level)

    def at_least_as_urgent(self, other: "PriorityKey") -> bool:
        return self.urgency <= other.urgency


def priority_compare(a: PriorityKey, b: PriorityKey) -> int:
    """Return -1 if ``a`` is served before ``b``, 1 if after, 0 if equal."""
    if a < b:
        return -1
    if b < a:
        return 1
    return 0


@dataclass
class Flow:
    id: int
    request_id: int
    stage: Stage
    src: int
    dst: int
    size: float
    release_time: float = 0.0
    explicit_deadline: Optional[float] = None
    target_layer: int = 1
    coflow_id: Optional[int] = None
    batch_id: Optional[int] = None
    remaining: Optional[float] = None
    priority: Optional[PriorityKey] = None
    state: FlowState = FlowState.PENDING

    def __post_init__(self):
        self.stage = Stage(self.stage)
        if self.remaining is None:
            self.remaining = self.size
        if self.size < 0 or not (0 <= self.remaining <= self.size):
            raise ValueError(f"flow {self.id}: need 0 <= remaining <= size")
        if (self.explicit_deadline is not None) != (self.stage == Stage.P2D):
            raise ValueError(f"flow {self.id}: explicit deadline must be set iff stage is P2D")
        if self.target_layer < 1:
            raise ValueError(f"flow {self.id}: target_layer must be >= 1")

    def promote_to(self, key: PriorityKey) -> None:
        """Install a new priority key; demotion is rejected except into the scavenger band."""
        if self.priority is not None and key.band != Band.SCAVENGER:
            if not key.at_least_as_urgent(self.priority):
                raise ValueError(f"flow {self.id}: {key} would demote {self.priority}")
        if key.band == Band.URGENT_P2D and self.stage != Stage.P2D:
            raise ValueError(f"flow {self.id}: only P2D flows may enter the urgent band")
        self.priority = key


def flow_laxity(f: Flow, now: float, reference_rate: float = 1.0) -> Optional[float]:
    """Slack before ``f`` misses its explicit deadline when served at ``reference_rate``.

    Returns None for flows whose deadline is implicit (reuse, collective).
    """
    if f.explicit_deadline is None:
        return None
    return f.explicit_deadline - now - f.remaining / reference_rate


@dataclass
class Request:
    id: int
    arrival: float
    prompt_tokens: int
    layer_count: int
    compute_costs: Sequence[float] = ()
    reuse_fraction: float = 0.0
    deadline: float = INF
    prefill_unit: int = 0
    reuse_source: Optional[int] = None
    ttft: Optional[float] = None

    def __post_init__(self):
        if self.layer_count < 1:
            raise ValueError(f"request {self.id}: layer_count must be >= 1")
        if not 0.0 <= self.reuse_fraction <= 1.0:
            raise ValueError(f"request {self.id}: reuse_fraction outside [0, 1]")
        if self.compute_costs and (
            len(self.compute_costs) != self.layer_count or min(self.compute_costs) <= 0
        ):
            raise ValueError(f"request {self.id}: need {self.layer_count} positive compute costs")
        if self.deadline <= self.arrival:
            raise ValueError(f"request {self.id}: deadline must be after arrival")


@dataclass
class Batch:
    id: int
    request_ids: list
    admit_time: float = 0.0
    prefill_unit: int = 0
    red: Optional[float] = None
    rank: Optional[int] = None

    def __post_init__(self):
        if not self.request_ids:
            raise ValueError(f"batch {self.id} is empty")


@dataclass
class MsFlowLayer:
    layer_index: int
    reuse_flows: list = field(default_factory=list)
    collective: Optional[int] = None
    p2d_flows: list = field(default_factory=list)
