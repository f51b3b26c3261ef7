"""Per-worker connection tracking and TCP stream reassembly.

Each analysis worker owns a private FlowTable; nothing here is shared or
locked. Flow state follows New -> SynSeen -> Established -> Closing ->
Closed, with a New -> Established fallback when data is seen in both
directions without an observed handshake (replayed captures often start
mid-connection). Reassembly resolves overlaps first-arrival-wins and is
capped per direction; the per-flow memory footprint is tracked so the
boundary cost model can price the table against the protected-memory budget.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum

from .packet import (
    TCP_ACK,
    TCP_FIN,
    TCP_RST,
    TCP_SYN,
    Direction,
    FlowKey,
    PacketDescriptor,
    Proto,
)

FLOW_BASE_BYTES = 4096  # fixed per-flow cost, upper end of the 2-4KB range
REASSEMBLY_CAP_BYTES = 64 * 1024  # pending bytes per direction
TCP_TIMEOUT_US = 30_000_000
UDP_TIMEOUT_US = 10_000_000


class FlowState(Enum):
    NEW = "new"
    SYN_SEEN = "syn_seen"
    ESTABLISHED = "established"
    CLOSING = "closing"
    CLOSED = "closed"


class TableFull(Exception):
    """Flow table at max_flows; the packet is analyzed without flow context."""


class SegmentBuffer:
    """Out-of-order segment store for one direction of a TCP stream.

    Segments are trimmed against existing data on insert (first arrival wins)
    and delivered as the maximal contiguous run starting at delivered_upto.
    Sequence-number wraparound is not handled.
    """

    def __init__(self, base_seq: int | None = None):
        self.base_seq = base_seq
        self.delivered_upto = base_seq if base_seq is not None else 0
        self._starts: list[int] = []  # sorted segment start seqs
        self._data: dict[int, bytes] = {}
        self.pending_bytes = 0
        self.gap_flushes = 0

    def _covered_end(self, idx: int) -> int:
        start = self._starts[idx]
        return start + len(self._data[start])

    def insert(self, seq: int, payload) -> bytes:
        """Add one segment; returns newly contiguous stream bytes (may be empty)."""
        if self.base_seq is None:
            self.base_seq = seq
            self.delivered_upto = seq
        payload = bytes(payload)
        end = seq + len(payload)
        if end <= self.delivered_upto:
            return b""
        if seq < self.delivered_upto:
            payload = payload[self.delivered_upto - seq :]
            seq = self.delivered_upto

        # trim the new segment against already-buffered spans (first wins)
        pieces: list[tuple[int, bytes]] = []
        cur_seq, cur_pay = seq, payload
        scan = max(bisect_right(self._starts, seq) - 1, 0)
        while cur_pay and scan < len(self._starts):
            s0 = self._starts[scan]
            e0 = self._covered_end(scan)
            cur_end = cur_seq + len(cur_pay)
            if e0 <= cur_seq:
                scan += 1
                continue
            if s0 >= cur_end:
                break
            if cur_seq < s0:
                pieces.append((cur_seq, cur_pay[: s0 - cur_seq]))
            if cur_end > e0:
                cur_pay = cur_pay[e0 - cur_seq :]
                cur_seq = e0
                scan += 1
            else:
                cur_pay = b""
        if cur_pay:
            pieces.append((cur_seq, cur_pay))
        for pseq, ppay in pieces:
            if not ppay:
                continue
            pos = bisect_right(self._starts, pseq)
            self._starts.insert(pos, pseq)
            self._data[pseq] = ppay
            self.pending_bytes += len(ppay)

        return self._deliver()

    def _deliver(self) -> bytes:
        out = bytearray()
        while self._starts and self._starts[0] == self.delivered_upto:
            start = self._starts.pop(0)
            chunk = self._data.pop(start)
            out += chunk
            self.delivered_upto += len(chunk)
            self.pending_bytes -= len(chunk)
        return bytes(out)

    def flush_oldest_gap(self) -> bytes:
        """Give up on the oldest missing span and deliver what follows."""
        if not self._starts:
            return b""
        self.gap_flushes += 1
        self.delivered_upto = self._starts[0]
        return self._deliver()


@dataclass
class Flow:
    key: FlowKey
    created_us: int
    last_seen_us: int
    state: FlowState = FlowState.NEW
    initiator_direction: Direction = Direction.FORWARD  # side that sent the first packet
    pkts_fwd: int = 0
    pkts_rev: int = 0
    saw_established: bool = False
    fin_fwd: bool = False
    fin_rev: bool = False
    bad_flag_events: int = 0
    fwd_buf: SegmentBuffer = field(default_factory=SegmentBuffer)
    rev_buf: SegmentBuffer = field(default_factory=SegmentBuffer)

    @property
    def footprint_bytes(self) -> int:
        return FLOW_BASE_BYTES + self.fwd_buf.pending_bytes + self.rev_buf.pending_bytes

    def buffer(self, direction: Direction) -> SegmentBuffer:
        return self.fwd_buf if direction is Direction.FORWARD else self.rev_buf

    def is_to_server(self, direction: Direction) -> bool:
        """True when a packet in ``direction`` travels initiator -> responder."""
        return direction is self.initiator_direction


def update_flow(flow: Flow, desc: PacketDescriptor, direction: Direction, now_us: int) -> tuple[FlowState, FlowState]:
    """Advance counters and the state machine; returns (old, new) state."""
    old = flow.state
    flow.last_seen_us = max(flow.last_seen_us, now_us)
    if direction is Direction.FORWARD:
        flow.pkts_fwd += 1
    else:
        flow.pkts_rev += 1

    if flow.key.proto is Proto.TCP:
        flags = desc.tcp_flags
        if flags & TCP_SYN and flags & TCP_FIN:
            flow.bad_flag_events += 1  # nonsensical combination; state unchanged
            return old, flow.state
        if flags & TCP_SYN:
            # the SYN consumes one sequence number; stream data starts past it
            buf = flow.buffer(direction)
            if buf.base_seq is None:
                buf.base_seq = desc.tcp_seq + 1
                buf.delivered_upto = buf.base_seq
        _advance_tcp(flow, flags, direction)
    else:
        # connectionless: bidirectional traffic means established
        if flow.state is FlowState.NEW and flow.pkts_fwd > 0 and flow.pkts_rev > 0:
            flow.state = FlowState.ESTABLISHED
            flow.saw_established = True
    return old, flow.state


def _advance_tcp(flow: Flow, flags: int, direction: Direction) -> None:
    state = flow.state
    if flags & TCP_SYN and not flags & TCP_ACK:
        if state is FlowState.NEW:
            flow.state = FlowState.SYN_SEEN
            flow.initiator_direction = direction
        return
    if flags & TCP_SYN and flags & TCP_ACK:
        return  # handshake reply; established on the final ACK
    if flags & (TCP_FIN | TCP_RST):
        if direction is Direction.FORWARD:
            flow.fin_fwd = True
        else:
            flow.fin_rev = True
        if state in (FlowState.ESTABLISHED, FlowState.SYN_SEEN, FlowState.NEW):
            flow.state = FlowState.CLOSING
        if flow.fin_fwd and flow.fin_rev and flow.state is FlowState.CLOSING:
            flow.state = FlowState.CLOSED
        return
    if state is FlowState.SYN_SEEN and flags & TCP_ACK:
        flow.state = FlowState.ESTABLISHED
        flow.saw_established = True
        return
    if state is FlowState.NEW and flow.pkts_fwd > 0 and flow.pkts_rev > 0:
        # no handshake observed but traffic in both directions
        flow.state = FlowState.ESTABLISHED
        flow.saw_established = True


class FlowTable:
    """Private per-worker flow store with footprint accounting."""

    def __init__(self, max_flows: int = 262_144, reassembly_cap: int = REASSEMBLY_CAP_BYTES):
        self.max_flows = max_flows
        self.reassembly_cap = reassembly_cap
        self._flows: dict[FlowKey, Flow] = {}
        self.footprint_bytes = 0
        self.created_total = 0
        self.evicted_total = 0
        self.buffer_limit_events = 0

    def __len__(self) -> int:
        return len(self._flows)

    def __iter__(self):
        return iter(self._flows.values())

    def get(self, key: FlowKey) -> Flow | None:
        return self._flows.get(key)

    def lookup_or_create(self, key: FlowKey, now_us: int) -> tuple[Flow, bool]:
        flow = self._flows.get(key)
        if flow is not None:
            return flow, False
        if len(self._flows) >= self.max_flows:
            raise TableFull(f"flow table at {self.max_flows} entries")
        flow = Flow(key=key, created_us=now_us, last_seen_us=now_us)
        self._flows[key] = flow
        self.footprint_bytes += flow.footprint_bytes
        self.created_total += 1
        return flow, True

    def reassemble(self, flow: Flow, direction: Direction, seq: int, payload) -> bytes:
        """Insert a TCP segment, keeping the footprint counter in step."""
        buf = flow.buffer(direction)
        before = buf.pending_bytes
        delivered = buf.insert(seq, payload)
        if buf.pending_bytes > self.reassembly_cap:
            self.buffer_limit_events += 1
            delivered += buf.flush_oldest_gap()
        self.footprint_bytes += buf.pending_bytes - before
        return delivered

    def expire_flows(self, now_us: int, timeout_us: int | None = None) -> list[Flow]:
        """Evict flows idle longer than the timeout (per-protocol defaults)."""
        evicted = []
        for key, flow in list(self._flows.items()):
            limit = timeout_us
            if limit is None:
                limit = TCP_TIMEOUT_US if flow.key.proto is Proto.TCP else UDP_TIMEOUT_US
            if now_us - flow.last_seen_us > limit:
                del self._flows[key]
                self.footprint_bytes -= flow.footprint_bytes
                self.evicted_total += 1
                evicted.append(flow)
        return evicted
