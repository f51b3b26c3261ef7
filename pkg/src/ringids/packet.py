"""Frame decoding into pool-backed packet descriptors.

Raw Ethernet frames are copied once into a shared byte pool; everything
downstream (rings, flow tracking, rule matching) works on descriptors that
reference the pool slot plus decoded header offsets. Payload bytes are never
copied again except into reassembly buffers.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass
from enum import Enum, IntEnum

ETHER_HDR_LEN = 14
ETHERTYPE_IPV4 = 0x0800
SLOT_SIZE = 2048  # covers a 1518B frame with headroom, mbuf-style

TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_PSH = 0x08
TCP_ACK = 0x10


class Proto(IntEnum):
    """Transport protocol carried in the 5-tuple (IANA numbers)."""

    OTHER = 0
    ICMP = 1
    TCP = 6
    UDP = 17

    @property
    def label(self) -> str:
        return self.name


class Direction(Enum):
    """Orientation of a packet relative to its flow's canonical key."""

    FORWARD = 0
    REVERSE = 1

    def flipped(self) -> "Direction":
        return Direction.REVERSE if self is Direction.FORWARD else Direction.FORWARD


class DecodeError(Exception):
    """Base class for frame ingestion failures."""


class TruncatedFrame(DecodeError):
    """Frame is shorter than its own headers claim."""


class FrameTooLarge(DecodeError):
    """Frame exceeds the pool slot size."""


class PoolExhausted(DecodeError):
    """No free pool slot; the caller counts a drop."""


class PoolError(Exception):
    """Slot bookkeeping violation (double release, bad index)."""


def parse_ip(dotted: str) -> int:
    parts = dotted.split(".")
    if len(parts) != 4:
        raise ValueError(f"bad IPv4 address: {dotted!r}")
    value = 0
    for p in parts:
        b = int(p)
        if not 0 <= b <= 255:
            raise ValueError(f"bad IPv4 address: {dotted!r}")
        value = (value << 8) | b
    return value


def format_ip(value: int) -> str:
    return f"{(value >> 24) & 0xFF}.{(value >> 16) & 0xFF}.{(value >> 8) & 0xFF}.{value & 0xFF}"


def _coerce_ip(value) -> int:
    return parse_ip(value) if isinstance(value, str) else int(value)


@dataclass(frozen=True)
class FiveTuple:
    """Protocol plus endpoints; ports are 0 for portless protocols."""

    proto: Proto
    src_ip: int
    src_port: int
    dst_ip: int
    dst_port: int

    def __post_init__(self):
        object.__setattr__(self, "src_ip", _coerce_ip(self.src_ip))
        object.__setattr__(self, "dst_ip", _coerce_ip(self.dst_ip))
        if self.proto in (Proto.ICMP, Proto.OTHER) and (self.src_port or self.dst_port):
            raise ValueError("portless protocol with nonzero port")

    def reversed(self) -> "FiveTuple":
        return FiveTuple(self.proto, self.dst_ip, self.dst_port, self.src_ip, self.src_port)

    def __str__(self) -> str:
        return (
            f"{self.proto.label} {format_ip(self.src_ip)}:{self.src_port}"
            f" -> {format_ip(self.dst_ip)}:{self.dst_port}"
        )


@dataclass(frozen=True)
class FlowKey:
    """Direction-normalized connection identity.

    Endpoint A is the (ip, port) pair that compares lower, so both directions
    of a connection canonicalize to the same key.
    """

    proto: Proto
    ip_a: int
    port_a: int
    ip_b: int
    port_b: int

    def encode(self) -> bytes:
        """Fixed 13-byte encoding used by the flow-affinity hash."""
        return struct.pack(">BIHIH", int(self.proto), self.ip_a, self.port_a, self.ip_b, self.port_b)

    def __str__(self) -> str:
        return (
            f"{self.proto.label} {format_ip(self.ip_a)}:{self.port_a}"
            f" <-> {format_ip(self.ip_b)}:{self.port_b}"
        )


def canonical_key(tuple_: FiveTuple) -> tuple[FlowKey, Direction]:
    """Normalize a 5-tuple to its flow key and report the packet's direction.

    canonical_key(t) == canonical_key(reverse(t)); a tuple whose endpoints are
    equal is defined as FORWARD.
    """
    src = (tuple_.src_ip, tuple_.src_port)
    dst = (tuple_.dst_ip, tuple_.dst_port)
    if src <= dst:
        return FlowKey(tuple_.proto, src[0], src[1], dst[0], dst[1]), Direction.FORWARD
    return FlowKey(tuple_.proto, dst[0], dst[1], src[0], src[1]), Direction.REVERSE


@dataclass(frozen=True)
class PacketDescriptor:
    """Reference into the packet pool plus decoded header metadata.

    Immutable once built; safe to hand between threads. ``decode_ok`` is False
    for frames whose L3 protocol is unsupported -- such packets are counted but
    never analyzed.
    """

    slot: int
    frame_len: int
    arrival_us: int
    decode_ok: bool
    tuple: FiveTuple | None = None
    l3_offset: int = 0
    l4_offset: int = 0
    payload_offset: int = 0
    payload_len: int = 0
    tcp_flags: int = 0
    tcp_seq: int = 0


class PacketPool:
    """Fixed pool of frame slots backing zero-copy descriptors.

    A slot handed out with a descriptor is not reused until released. Alloc
    and release are safe under concurrent acquisition threads; slot contents
    are read-only between store and release.
    """

    def __init__(self, capacity: int, slot_size: int = SLOT_SIZE):
        if capacity <= 0:
            raise ValueError("pool capacity must be positive")
        if slot_size < 1518:
            raise ValueError("slot size must cover a full Ethernet frame")
        self.capacity = capacity
        self.slot_size = slot_size
        self._buf = bytearray(capacity * slot_size)
        self._lengths = [0] * capacity
        self._in_use = [False] * capacity
        self._free = list(range(capacity - 1, -1, -1))
        self._lock = threading.Lock()
        self.write_count = 0  # pool writes; the zero-copy budget is 1 per packet

    def store(self, frame) -> int:
        n = len(frame)
        if n > self.slot_size:
            raise FrameTooLarge(f"frame of {n}B exceeds {self.slot_size}B slot")
        with self._lock:
            if not self._free:
                raise PoolExhausted("packet pool has no free slot")
            slot = self._free.pop()
            self._in_use[slot] = True
        base = slot * self.slot_size
        self._buf[base : base + n] = frame
        self._lengths[slot] = n
        self.write_count += 1
        return slot

    def release(self, slot: int) -> None:
        with self._lock:
            if not 0 <= slot < self.capacity or not self._in_use[slot]:
                raise PoolError(f"release of slot {slot} not in use")
            self._in_use[slot] = False
            self._free.append(slot)

    def view(self, slot: int) -> memoryview:
        """Zero-copy view of the stored frame bytes."""
        if not self._in_use[slot]:
            raise PoolError(f"view of slot {slot} not in use")
        base = slot * self.slot_size
        return memoryview(self._buf)[base : base + self._lengths[slot]]

    def raw(self) -> bytearray:
        return self._buf

    def slot_base(self, slot: int) -> int:
        return slot * self.slot_size

    def in_use_count(self) -> int:
        with self._lock:
            return self.capacity - len(self._free)


def decode(frame, arrival_us: int, pool: PacketPool) -> PacketDescriptor:
    """Ingest one raw Ethernet frame: store it in the pool and decode headers.

    Sanity checks: IPv4 version, header lengths consistent with the frame,
    transport header fits. Non-IPv4 frames yield a descriptor with
    decode_ok=False (received but not analyzable). Raises TruncatedFrame for
    length inconsistencies, PoolExhausted / FrameTooLarge for pool failures.
    """
    flen = len(frame)
    if flen < ETHER_HDR_LEN:
        raise TruncatedFrame(f"{flen}B frame shorter than Ethernet header")
    ethertype = (frame[12] << 8) | frame[13]
    if ethertype != ETHERTYPE_IPV4:
        slot = pool.store(frame)
        return PacketDescriptor(slot=slot, frame_len=flen, arrival_us=arrival_us, decode_ok=False)

    l3 = ETHER_HDR_LEN
    if flen < l3 + 20:
        raise TruncatedFrame("frame too short for IPv4 header")
    ver_ihl = frame[l3]
    if ver_ihl >> 4 != 4:
        # claims IPv4 at L2 but is not; treat like an unsupported L3
        slot = pool.store(frame)
        return PacketDescriptor(slot=slot, frame_len=flen, arrival_us=arrival_us, decode_ok=False)
    ihl = (ver_ihl & 0x0F) * 4
    if ihl < 20 or flen < l3 + ihl:
        raise TruncatedFrame("IPv4 header length inconsistent with frame")
    tot_len = (frame[l3 + 2] << 8) | frame[l3 + 3]
    if tot_len < ihl or tot_len > flen - l3:
        raise TruncatedFrame("IPv4 total length inconsistent with frame")
    proto_num = frame[l3 + 9]
    src_ip = int.from_bytes(frame[l3 + 12 : l3 + 16], "big")
    dst_ip = int.from_bytes(frame[l3 + 16 : l3 + 20], "big")

    l4 = l3 + ihl
    ip_end = l3 + tot_len
    src_port = dst_port = 0
    tcp_flags = 0
    tcp_seq = 0
    if proto_num == Proto.TCP:
        if ip_end < l4 + 20:
            raise TruncatedFrame("TCP header does not fit")
        doff = (frame[l4 + 12] >> 4) * 4
        if doff < 20 or ip_end < l4 + doff:
            raise TruncatedFrame("TCP data offset inconsistent")
        src_port = (frame[l4] << 8) | frame[l4 + 1]
        dst_port = (frame[l4 + 2] << 8) | frame[l4 + 3]
        tcp_seq = int.from_bytes(frame[l4 + 4 : l4 + 8], "big")
        tcp_flags = frame[l4 + 13]
        payload_off = l4 + doff
        proto = Proto.TCP
    elif proto_num == Proto.UDP:
        if ip_end < l4 + 8:
            raise TruncatedFrame("UDP header does not fit")
        src_port = (frame[l4] << 8) | frame[l4 + 1]
        dst_port = (frame[l4 + 2] << 8) | frame[l4 + 3]
        payload_off = l4 + 8
        proto = Proto.UDP
    elif proto_num == Proto.ICMP:
        if ip_end < l4 + 8:
            raise TruncatedFrame("ICMP header does not fit")
        payload_off = l4 + 8
        proto = Proto.ICMP
    else:
        payload_off = l4
        proto = Proto.OTHER

    slot = pool.store(frame)
    return PacketDescriptor(
        slot=slot,
        frame_len=flen,
        arrival_us=arrival_us,
        decode_ok=True,
        tuple=FiveTuple(proto, src_ip, src_port, dst_ip, dst_port),
        l3_offset=l3,
        l4_offset=l4,
        payload_offset=payload_off,
        payload_len=ip_end - payload_off,
        tcp_flags=tcp_flags,
        tcp_seq=tcp_seq,
    )
