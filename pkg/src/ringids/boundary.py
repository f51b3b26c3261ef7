"""Trusted/untrusted boundary: lifecycle calls and the paging cost model.

The engine's setup and teardown go through five ordered control calls
(initialize, start_device, acquire, stop, shutdown); anything out of order is
an OrderError. The cost model is explicitly a model, not a hardware claim:
it prices the trusted-side working set against a protected-memory budget and
yields a slowdown multiplier once the budget is exceeded, plus a startup
warmup window during which consumption is throttled. Disabled, it costs
nothing everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

EPC_BYTES_DEFAULT = 96 * 1024 * 1024  # protected memory available for user data
ENGINE_BASE_BYTES = 16 * 1024 * 1024  # resident engine code + fixed state
RULESET_BYTES_PER_RULE = 28 * 1024 * 1024 / 3462  # full community-scale set ~= 28MB


class LifecycleState(Enum):
    UNINITIALIZED = "uninitialized"
    INITIALIZED = "initialized"
    DEVICE_STARTED = "device_started"
    RUNNING = "running"
    STOPPED = "stopped"
    SHUTDOWN = "shutdown"


class LifecycleEvent(Enum):
    INITIALIZE = "initialize"
    START_DEVICE = "start_device"
    ACQUIRE = "acquire"
    STOP = "stop"
    SHUTDOWN = "shutdown"


class OrderError(Exception):
    """Lifecycle event arrived out of order."""


_TRANSITIONS = {
    (LifecycleState.UNINITIALIZED, LifecycleEvent.INITIALIZE): LifecycleState.INITIALIZED,
    (LifecycleState.INITIALIZED, LifecycleEvent.START_DEVICE): LifecycleState.DEVICE_STARTED,
    (LifecycleState.DEVICE_STARTED, LifecycleEvent.ACQUIRE): LifecycleState.RUNNING,
    (LifecycleState.RUNNING, LifecycleEvent.STOP): LifecycleState.STOPPED,
    (LifecycleState.STOPPED, LifecycleEvent.SHUTDOWN): LifecycleState.SHUTDOWN,
}


class Lifecycle:
    def __init__(self):
        self.state = LifecycleState.UNINITIALIZED
        self.history: list[LifecycleEvent] = []

    def transition(self, event: LifecycleEvent) -> LifecycleState:
        nxt = _TRANSITIONS.get((self.state, event))
        if nxt is None:
            raise OrderError(f"event {event.value} not allowed in state {self.state.value}")
        self.state = nxt
        self.history.append(event)
        return nxt

    def require(self, state: LifecycleState) -> None:
        if self.state is not state:
            raise OrderError(f"operation requires state {state.value}, currently {self.state.value}")


def lifecycle_transition(lc: Lifecycle, event: LifecycleEvent) -> LifecycleState:
    return lc.transition(event)


@dataclass(frozen=True)
class CostModel:
    """Boundary-and-paging overhead parameters.

    crossing_cost_us applies only to the five lifecycle calls (the runtime
    path is exitless). warmup_bytes at warmup_rate give the startup window in
    which the engine is busy paging its own code and data in.
    """

    enabled: bool = False
    epc_bytes: int = EPC_BYTES_DEFAULT
    crossing_cost_us: float = 0.0
    paging_penalty: float = 2.0
    warmup_bytes: int = 210 * 1024 * 1024
    warmup_rate: float = 30 * 1024 * 1024  # bytes per second

    def __post_init__(self):
        if min(self.epc_bytes, self.crossing_cost_us, self.paging_penalty, self.warmup_bytes, self.warmup_rate) < 0:
            raise ValueError("cost model coefficients must be >= 0")

    @classmethod
    def from_config(
        cls,
        enabled: bool = False,
        epc_mib: float = 96.0,
        paging_penalty: float = 2.0,
        warmup_seconds: float | None = None,
        crossing_cost_us: float = 0.0,
    ) -> "CostModel":
        """Build from the harness config keys."""
        kwargs = dict(
            enabled=enabled,
            epc_bytes=int(epc_mib * 1024 * 1024),
            paging_penalty=paging_penalty,
            crossing_cost_us=crossing_cost_us,
        )
        if warmup_seconds is not None:
            kwargs["warmup_bytes"] = int(warmup_seconds * cls.warmup_rate)
        return cls(**kwargs)

    @property
    def warmup_seconds(self) -> float:
        if not self.enabled or self.warmup_rate <= 0:
            return 0.0
        return self.warmup_bytes / self.warmup_rate

    @property
    def warmup_us(self) -> int:
        return int(self.warmup_seconds * 1_000_000)


def paging_factor(model: CostModel | None, trusted_footprint_bytes: int) -> float:
    """Slowdown multiplier >= 1.0 once the working set exceeds the budget."""
    if model is None or not model.enabled or trusted_footprint_bytes <= model.epc_bytes:
        return 1.0
    excess = trusted_footprint_bytes - model.epc_bytes
    return 1.0 + model.paging_penalty * (excess / model.epc_bytes)


def ruleset_bytes(rule_count: int) -> int:
    return int(rule_count * RULESET_BYTES_PER_RULE)


def trusted_footprint(flow_table_bytes: int, rule_count: int, base_bytes: int = ENGINE_BASE_BYTES) -> int:
    """Total protected working set: flow tables + ruleset + fixed base."""
    return flow_table_bytes + ruleset_bytes(rule_count) + base_bytes
