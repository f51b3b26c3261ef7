"""Per-packet analysis: prefilter, full rule evaluation, verdict, alerts.

Each analysis worker is single-threaded over its own receive ring, flow
table, and counters; the compiled ruleset is shared read-only and the
transmit ring is the only shared mutable structure it touches. Matching is
two-phase: the fast-pattern scan shortlists candidate rules, then every
option of each candidate is checked in rule order with relative anchoring.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .flow import Flow, FlowState, FlowTable, TableFull, update_flow
from .packet import Direction, FiveTuple, PacketDescriptor, PacketPool, Proto, canonical_key, format_ip
from .ring import Ring
from .rules import ByteTest, CompiledRuleSet, Content, Rule

_DAYS_PER_MONTH = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)


@dataclass
class PacketContext:
    """Everything phase-2 evaluation sees for one packet."""

    descriptor: PacketDescriptor
    tuple: FiveTuple
    now_us: int
    flow: Flow | None = None
    direction: Direction = Direction.FORWARD
    # raw payload lives in the pool buffer at [payload_base, payload_base+payload_len)
    buf: bytes | bytearray = b""
    payload_base: int = 0
    payload_len: int = 0
    stream_bytes: bytes | None = None  # newly reassembled, this packet only


@dataclass(frozen=True)
class Alert:
    sid: int
    rev: int
    msg: str
    classtype: str
    now_us: int
    tuple: FiveTuple
    slot: int
    action_taken: str  # alerted | blocked


@dataclass
class WorkerStats:
    analyzed: int = 0
    alerts: int = 0
    blocked: int = 0
    flowless: int = 0  # packets analyzed without flow context (table full)
    candidates_evaluated: int = 0
    analyzed_bytes: int = 0
    by_interval: dict = field(default_factory=dict)  # idx -> [analyzed, alerts]

    def note_interval(self, idx: int, analyzed: int = 0, alerts: int = 0) -> None:
        rec = self.by_interval.setdefault(idx, [0, 0])
        rec[0] += analyzed
        rec[1] += alerts


def _timestamp(now_us: int) -> str:
    """MM/DD-HH:MM:SS.UUUUUU relative to engine start (non-leap calendar)."""
    us = now_us % 1_000_000
    total_s = now_us // 1_000_000
    days = total_s // 86_400
    rem = total_s % 86_400
    month = 0
    while days >= _DAYS_PER_MONTH[month]:
        days -= _DAYS_PER_MONTH[month]
        month = (month + 1) % 12
    return (
        f"{month + 1:02d}/{days + 1:02d}-"
        f"{rem // 3600:02d}:{rem % 3600 // 60:02d}:{rem % 60:02d}.{us:06d}"
    )


def format_alert_fast(alert: Alert) -> str:
    """One `fast` output line, bit-exact field layout."""
    cls = f" [Classification: {alert.classtype}]" if alert.classtype else ""
    t = alert.tuple
    return (
        f"{_timestamp(alert.now_us)} [**] [1:{alert.sid}:{alert.rev}] {alert.msg} [**]{cls}"
        f" {{{t.proto.label}}} {format_ip(t.src_ip)}:{t.src_port}"
        f" -> {format_ip(t.dst_ip)}:{t.dst_port}"
    )


def _proto_matches(rule_proto: str, proto: Proto) -> bool:
    if rule_proto == "ip":
        return True
    return (
        (rule_proto == "tcp" and proto is Proto.TCP)
        or (rule_proto == "udp" and proto is Proto.UDP)
        or (rule_proto == "icmp" and proto is Proto.ICMP)
    )


def _ports_match(rule: Rule, tuple_: FiveTuple) -> bool:
    fwd = rule.src_ports.matches(tuple_.src_port) and rule.dst_ports.matches(tuple_.dst_port)
    if rule.direction == "->":
        return fwd
    return fwd or (rule.src_ports.matches(tuple_.dst_port) and rule.dst_ports.matches(tuple_.src_port))


def _header_matches(rule: Rule, compiled: CompiledRuleSet, ctx: PacketContext) -> bool:
    if not _proto_matches(rule.proto, ctx.tuple.proto):
        return False
    src, dst = compiled.resolved_addrs(rule.sid)
    t = ctx.tuple
    fwd = (
        src.matches(t.src_ip)
        and dst.matches(t.dst_ip)
        and rule.src_ports.matches(t.src_port)
        and rule.dst_ports.matches(t.dst_port)
    )
    if fwd:
        return True
    if rule.direction == "<>":
        return (
            src.matches(t.dst_ip)
            and dst.matches(t.src_ip)
            and rule.src_ports.matches(t.dst_port)
            and rule.dst_ports.matches(t.src_port)
        )
    return False


def _flow_matches(rule: Rule, ctx: PacketContext) -> bool:
    fo = rule.flow
    if fo is None:
        return True
    if fo.established or fo.to_client or fo.to_server:
        flow = ctx.flow
        if flow is None:
            return False
        if fo.established and not flow.saw_established:
            return False
        to_server = flow.is_to_server(ctx.direction)
        if fo.to_server and not to_server:
            return False
        if fo.to_client and to_server:
            return False
    if fo.only_stream and ctx.stream_bytes is None:
        return False
    return True


def evaluate_rule(rule: Rule, compiled: CompiledRuleSet, ctx: PacketContext) -> bool:
    """Full phase-2 check: header, flow constraints, then payload options.

    Stream-only rules evaluate against the newly reassembled bytes; everything
    else evaluates against the raw packet payload. Content offsets/depths are
    measured from the anchor (buffer start, or end of the previous match for
    relative options); a match must fit entirely within the depth window.
    """
    if not _header_matches(rule, compiled, ctx):
        return False
    if not _flow_matches(rule, ctx):
        return False

    if rule.only_stream:
        buf: bytes | bytearray = ctx.stream_bytes if ctx.stream_bytes is not None else b""
        base = 0
        length = len(buf)
    else:
        buf = ctx.buf
        base = ctx.payload_base
        length = ctx.payload_len
    end = base + length

    anchor = None  # absolute position just past the previous content match
    for opt in rule.options:
        if isinstance(opt, Content):
            origin = anchor if (opt.relative and anchor is not None) else base
            start = origin + opt.offset
            window_end = end if opt.depth is None else min(end, origin + opt.offset + opt.depth)
            if start < base or window_end > end:
                return False
            pos = buf.find(opt.pattern, start, window_end)
            if pos < 0:
                return False
            anchor = pos + len(opt.pattern)
        elif isinstance(opt, ByteTest):
            origin = anchor if (opt.relative and anchor is not None) else base
            pos = origin + opt.offset
            if pos < base or pos + opt.nbytes > end:
                return False
            value = int.from_bytes(buf[pos : pos + opt.nbytes], "big")
            if opt.op == ">" and not value > opt.value:
                return False
            if opt.op == "<" and not value < opt.value:
                return False
            if opt.op == "=" and value != opt.value:
                return False
    return True


def _quick_port_filter(rule: Rule, ctx: PacketContext) -> bool:
    return _proto_matches(rule.proto, ctx.tuple.proto) and _ports_match(rule, ctx.tuple)


def prefilter(compiled: CompiledRuleSet, ctx: PacketContext) -> set[int]:
    """Phase 1: sids whose fast pattern occurs in the packet (or stream for
    stream-only rules), plus the contentless bucket, filtered by proto/port."""
    candidates: set[int] = set()
    if ctx.payload_len:
        payload = memoryview(ctx.buf)[ctx.payload_base : ctx.payload_base + ctx.payload_len]
        payload_hits, _ = compiled.scan_payload(ctx.tuple.proto, payload)
        candidates |= payload_hits
    if ctx.stream_bytes:
        _, stream_hits = compiled.scan_payload(ctx.tuple.proto, ctx.stream_bytes)
        candidates |= stream_hits
    for sid in compiled.contentless:
        candidates.add(sid)
    return {sid for sid in candidates if _quick_port_filter(compiled.rules[sid], ctx)}


class AnalysisWorker:
    """One detection thread: drains its RX ring, analyzes, allows or blocks."""

    def __init__(
        self,
        worker_id: int,
        rx_ring: Ring,
        pool: PacketPool,
        compiled: CompiledRuleSet,
        clock,
        flow_table: FlowTable | None = None,
        tx_ring: Ring | None = None,
        inline_mode: bool = False,
        alert_sink=None,
        useless_mode: bool = False,
        stats: WorkerStats | None = None,
    ):
        self.worker_id = worker_id
        self.rx_ring = rx_ring
        self.pool = pool
        self.compiled = compiled
        self.clock = clock
        self.flow_table = flow_table if flow_table is not None else FlowTable()
        self.tx_ring = tx_ring
        self.inline_mode = inline_mode
        self.alert_sink = alert_sink
        self.useless_mode = useless_mode
        self.stats = stats if stats is not None else WorkerStats()
        self.tx_stall_hook = None  # sim runner installs a drain; real mode yields

    def _emit(self, alert: Alert) -> None:
        self.stats.alerts += 1
        if self.alert_sink is not None:
            self.alert_sink.emit(alert, format_alert_fast(alert))

    def _finish(self, desc: PacketDescriptor, verdict: str) -> None:
        if verdict == "allow" and self.inline_mode and self.tx_ring is not None:
            while not self.tx_ring.enqueue(desc):
                # transmit side retries until the drain frees space
                if self.tx_stall_hook is not None:
                    self.tx_stall_hook()
                else:
                    time.sleep(0)
        else:
            self.pool.release(desc.slot)

    def process_packet(self, desc: PacketDescriptor) -> tuple[str, list[Alert]]:
        """Analyze one dequeued descriptor; returns (verdict, alerts)."""
        stats = self.stats
        stats.analyzed += 1
        stats.analyzed_bytes += desc.frame_len
        if self.useless_mode:
            self._finish(desc, "allow")
            return "allow", []

        now = self.clock.now_us()  # first of the two per-packet clock reads
        key, direction = canonical_key(desc.tuple)
        flow = None
        try:
            flow, created = self.flow_table.lookup_or_create(key, now)
            if created:
                flow.initiator_direction = direction
        except TableFull:
            stats.flowless += 1
        ctx = PacketContext(
            descriptor=desc,
            tuple=desc.tuple,
            now_us=now,
            flow=flow,
            direction=direction,
            buf=self.pool.raw(),
            payload_base=self.pool.slot_base(desc.slot) + desc.payload_offset,
            payload_len=desc.payload_len,
        )
        if flow is not None:
            update_flow(flow, desc, direction, now)
            if desc.tuple.proto is Proto.TCP and desc.payload_len > 0:
                payload = self.pool.view(desc.slot)[desc.payload_offset : desc.payload_offset + desc.payload_len]
                delivered = self.flow_table.reassemble(flow, direction, desc.tcp_seq, payload)
                if delivered:
                    ctx.stream_bytes = delivered

        matched: list[Rule] = []
        candidates = prefilter(self.compiled, ctx)
        stats.candidates_evaluated += len(candidates)
        for sid in sorted(candidates):
            rule = self.compiled.rules[sid]
            if evaluate_rule(rule, self.compiled, ctx):
                matched.append(rule)

        blocked = self.inline_mode and any(r.blocks_in_inline for r in matched)
        verdict = "block" if blocked else "allow"
        stamp = self.clock.now_us()  # second clock read: alert/stat timestamps
        alerts = []
        for rule in matched:
            alert = Alert(
                sid=rule.sid,
                rev=rule.rev,
                msg=rule.msg,
                classtype=rule.classtype,
                now_us=stamp,
                tuple=desc.tuple,
                slot=desc.slot,
                action_taken="blocked" if blocked else "alerted",
            )
            self._emit(alert)
            alerts.append(alert)
        if blocked:
            stats.blocked += 1
        self._finish(desc, verdict)
        return verdict, alerts

    def poll_once(self, max_burst: int = 32) -> int:
        """Real-thread loop body: drain up to one burst from the RX ring."""
        processed = 0
        for desc in self.rx_ring.dequeue_burst(max_burst):
            self.process_packet(desc)
            processed += 1
        return processed
