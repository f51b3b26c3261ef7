"""Flow table, TCP state machine, and reassembly against a byte-map oracle."""

import random

import pytest

from ringids.flow import (
    FLOW_BASE_BYTES,
    Flow,
    FlowState,
    FlowTable,
    SegmentBuffer,
    TableFull,
    update_flow,
)
from ringids.packet import (
    TCP_ACK,
    TCP_FIN,
    TCP_SYN,
    Direction,
    FiveTuple,
    PacketDescriptor,
    Proto,
    canonical_key,
)


def make_desc(proto=Proto.TCP, flags=0, seq=0, src_port=1000, dst_port=80):
    t = FiveTuple(proto, "10.0.0.1", src_port if proto is Proto.TCP or proto is Proto.UDP else 0,
                  "10.0.0.2", dst_port if proto is Proto.TCP or proto is Proto.UDP else 0)
    return PacketDescriptor(slot=0, frame_len=60, arrival_us=0, decode_ok=True, tuple=t,
                            tcp_flags=flags, tcp_seq=seq)


def key_of(desc):
    return canonical_key(desc.tuple)


def test_lookup_or_create_and_reverse_hits_same_flow():
    table = FlowTable()
    desc = make_desc()
    key, direction = key_of(desc)
    flow, created = table.lookup_or_create(key, 100)
    assert created and flow.created_us == 100
    assert flow.state is FlowState.NEW
    assert (flow.pkts_fwd, flow.pkts_rev) == (0, 0)
    rev_key, rev_dir = canonical_key(desc.tuple.reversed())
    flow2, created2 = table.lookup_or_create(rev_key, 200)
    assert flow2 is flow and not created2
    assert rev_dir != direction


def test_table_full():
    table = FlowTable(max_flows=1)
    table.lookup_or_create(key_of(make_desc())[0], 0)
    other = FiveTuple(Proto.TCP, "10.9.9.9", 1, "10.8.8.8", 2)
    with pytest.raises(TableFull):
        table.lookup_or_create(canonical_key(other)[0], 0)


def test_handshake_reaches_established():
    table = FlowTable()
    syn = make_desc(flags=TCP_SYN)
    key, d_fwd = key_of(syn)
    flow, _ = table.lookup_or_create(key, 0)
    flow.initiator_direction = d_fwd
    update_flow(flow, syn, d_fwd, 1)
    assert flow.state is FlowState.SYN_SEEN
    synack = make_desc(flags=TCP_SYN | TCP_ACK)
    update_flow(flow, synack, d_fwd.flipped(), 2)
    assert flow.state is FlowState.SYN_SEEN
    ack = make_desc(flags=TCP_ACK)
    update_flow(flow, ack, d_fwd, 3)
    assert flow.state is FlowState.ESTABLISHED
    assert flow.saw_established
    assert flow.last_seen_us == 3
    assert flow.pkts_fwd == 2 and flow.pkts_rev == 1


def test_bidirectional_fallback_established():
    table = FlowTable()
    data = make_desc(flags=TCP_ACK)
    key, d = key_of(data)
    flow, _ = table.lookup_or_create(key, 0)
    update_flow(flow, data, d, 1)
    assert flow.state is FlowState.NEW
    update_flow(flow, data, d.flipped(), 2)
    assert flow.state is FlowState.ESTABLISHED


def test_fin_both_directions_closes():
    table = FlowTable()
    desc = make_desc(flags=TCP_ACK)
    key, d = key_of(desc)
    flow, _ = table.lookup_or_create(key, 0)
    update_flow(flow, desc, d, 1)
    update_flow(flow, desc, d.flipped(), 2)
    assert flow.state is FlowState.ESTABLISHED
    update_flow(flow, make_desc(flags=TCP_FIN | TCP_ACK), d, 3)
    assert flow.state is FlowState.CLOSING
    update_flow(flow, make_desc(flags=TCP_FIN | TCP_ACK), d.flipped(), 4)
    assert flow.state is FlowState.CLOSED


def test_nonsense_flags_recorded_not_transitioned():
    table = FlowTable()
    desc = make_desc(flags=TCP_SYN | TCP_FIN)
    key, d = key_of(desc)
    flow, _ = table.lookup_or_create(key, 0)
    old, new = update_flow(flow, desc, d, 1)
    assert old == new == FlowState.NEW
    assert flow.bad_flag_events == 1


def test_udp_established_on_reverse():
    table = FlowTable()
    desc = make_desc(proto=Proto.UDP)
    key, d = key_of(desc)
    flow, _ = table.lookup_or_create(key, 0)
    update_flow(flow, desc, d, 1)
    assert flow.state is FlowState.NEW
    update_flow(flow, desc, d.flipped(), 2)
    assert flow.state is FlowState.ESTABLISHED


def test_expire_flows_and_footprint_conservation():
    table = FlowTable()
    keys = [canonical_key(FiveTuple(Proto.TCP, 0x0A000001 + i, 5, 0x0A00FF01, 80))[0] for i in range(10)]
    for i, key in enumerate(keys):
        flow, _ = table.lookup_or_create(key, i * 1_000_000)
        flow.last_seen_us = i * 1_000_000
    assert table.footprint_bytes == 10 * FLOW_BASE_BYTES
    # timeout 4.5s at t=10s evicts flows last seen before 5.5s
    evicted = table.expire_flows(10_000_000, timeout_us=4_500_000)
    assert len(evicted) == 6
    assert len(table) == 4
    assert table.footprint_bytes == sum(f.footprint_bytes for f in table)


def test_expire_uses_per_proto_defaults():
    table = FlowTable()
    tcp_key = canonical_key(FiveTuple(Proto.TCP, "10.0.0.1", 1, "10.0.0.2", 2))[0]
    udp_key = canonical_key(FiveTuple(Proto.UDP, "10.0.0.1", 1, "10.0.0.2", 2))[0]
    table.lookup_or_create(tcp_key, 0)
    table.lookup_or_create(udp_key, 0)
    # 11s idle: beyond the UDP timeout, within the TCP one
    evicted = table.expire_flows(11_000_000)
    assert [f.key.proto for f in evicted] == [Proto.UDP]


def test_footprint_in_documented_band_at_32k_flows():
    # 32,000 flows must land inside [62.5 MiB, 125 MiB]
    total = 32_000 * FLOW_BASE_BYTES
    assert 62.5 * 2**20 <= total <= 125 * 2**20


# --- reassembly ---------------------------------------------------------


def test_in_order_delivery():
    buf = SegmentBuffer(base_seq=0)
    assert buf.insert(0, b"0123456789") == b"0123456789"
    assert buf.insert(10, b"abcde") == b"abcde"
    assert buf.delivered_upto == 15


def test_gap_fill():
    buf = SegmentBuffer(base_seq=0)
    assert buf.insert(10, b"ABCDEFGHIJ") == b""
    assert buf.insert(0, b"0123456789") == b"0123456789ABCDEFGHIJ"


def test_first_arrival_wins_on_overlap():
    buf = SegmentBuffer(base_seq=0)
    assert buf.insert(0, b"A" * 10) == b"A" * 10
    assert buf.insert(5, b"B" * 10) == b"B" * 5
    # stream is bytes 0-9 'A' then 10-14 'B'


def test_overlap_pending_first_wins():
    buf = SegmentBuffer(base_seq=0)
    assert buf.insert(5, b"X" * 10) == b""  # pending [5,15)
    assert buf.insert(3, b"y" * 10) == b""  # only [3,5) survives
    assert buf.insert(0, b"z" * 3) == b"zzzyyXXXXXXXXXX"


def test_duplicate_segment_ignored():
    buf = SegmentBuffer(base_seq=0)
    buf.insert(0, b"hello")
    assert buf.insert(0, b"hello") == b""
    assert buf.pending_bytes == 0


def test_syn_seeds_reassembly_base():
    table = FlowTable()
    syn = make_desc(flags=TCP_SYN, seq=99)
    key, d = key_of(syn)
    flow, _ = table.lookup_or_create(key, 0)
    update_flow(flow, syn, d, 0)
    assert flow.buffer(d).base_seq == 100
    # data before the gap is filled stays pending
    assert table.reassemble(flow, d, 110, b"late") == b""
    assert table.reassemble(flow, d, 100, b"0123456789") == b"0123456789late"


def test_cap_triggers_gap_flush():
    table = FlowTable(reassembly_cap=64)
    syn = make_desc(flags=TCP_SYN, seq=99)
    key, d = key_of(syn)
    flow, _ = table.lookup_or_create(key, 0)
    update_flow(flow, syn, d, 0)
    # hold a gap at 100 and exceed the pending cap
    assert table.reassemble(flow, d, 110, b"x" * 60) == b""
    delivered = table.reassemble(flow, d, 170, b"y" * 40)
    assert delivered == b"x" * 60 + b"y" * 40  # oldest gap abandoned
    assert table.buffer_limit_events == 1
    assert flow.buffer(d).gap_flushes == 1


def oracle_first_wins(base: int, arrivals):
    """Byte map in arrival order; first writer to a position wins."""
    mem = {}
    for seq, payload in arrivals:
        for i, b in enumerate(payload):
            mem.setdefault(seq + i, b)
    out = bytearray()
    pos = base
    while pos in mem:
        out.append(mem[pos])
        pos += 1
    return bytes(out)


def test_reassembly_random_permutations_match_oracle():
    rng = random.Random(31337)
    for stream_no in range(60):
        # build a stream of contiguous chunks, then shuffle arrival order
        base = rng.randrange(0, 1 << 20)
        chunks = []
        pos = base
        for _ in range(rng.randrange(2, 12)):
            size = rng.randrange(1, 120)
            chunks.append((pos, rng.randbytes(size)))
            pos += size
        # sprinkle overlapping duplicates
        for _ in range(rng.randrange(0, 4)):
            seq, payload = chunks[rng.randrange(len(chunks))]
            cut = rng.randrange(0, len(payload))
            chunks.append((seq + cut, rng.randbytes(len(payload) - cut)))
        for _ in range(10):
            arrivals = chunks[:]
            rng.shuffle(arrivals)
            buf = SegmentBuffer(base_seq=base)
            delivered = b"".join(buf.insert(s, p) for s, p in arrivals)
            assert delivered == oracle_first_wins(base, arrivals), f"stream {stream_no}"
            assert buf.delivered_upto == base + len(delivered)
