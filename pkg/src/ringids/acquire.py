"""Untrusted-side packet acquisition and hash dispatch.

Acquisition workers pull frame bursts from a source, decode them into the
pool, and place descriptors on the per-analysis-worker receive ring chosen
from the flow hash; in inline mode they also drain the shared transmit ring
back to the sink. The hash is MurmurHash3 (x86 32-bit) over the canonical
flow-key bytes, so both directions of a connection map to the same ring, and
the ring index comes from the hash's low six bits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .packet import (
    DecodeError,
    FiveTuple,
    PacketPool,
    PoolExhausted,
    canonical_key,
    decode,
)
from .ring import Ring

RING_SELECT_BITS = 0x3F  # low six bits of the flow hash pick the ring


class SourceExhausted(Exception):
    """The frame source has no more packets (finite capture fully consumed)."""


def _rotl32(x: int, r: int) -> int:
    return ((x << r) | (x >> (32 - r))) & 0xFFFFFFFF


def murmur3_32(data: bytes, seed: int = 0) -> int:
    """MurmurHash3 x86 32-bit; the avalanche mix behind flow dispatch."""
    c1 = 0xCC9E2D51
    c2 = 0x1B873593
    h = seed & 0xFFFFFFFF
    n = len(data)
    rounded = n - (n & 3)
    for i in range(0, rounded, 4):
        k = int.from_bytes(data[i : i + 4], "little")
        k = (k * c1) & 0xFFFFFFFF
        k = _rotl32(k, 15)
        k = (k * c2) & 0xFFFFFFFF
        h ^= k
        h = _rotl32(h, 13)
        h = (h * 5 + 0xE6546B64) & 0xFFFFFFFF
    k = 0
    tail = n & 3
    if tail >= 3:
        k ^= data[rounded + 2] << 16
    if tail >= 2:
        k ^= data[rounded + 1] << 8
    if tail >= 1:
        k ^= data[rounded]
        k = (k * c1) & 0xFFFFFFFF
        k = _rotl32(k, 15)
        k = (k * c2) & 0xFFFFFFFF
        h ^= k
    h ^= n
    h ^= h >> 16
    h = (h * 0x85EBCA6B) & 0xFFFFFFFF
    h ^= h >> 13
    h = (h * 0xC2B2AE35) & 0xFFFFFFFF
    h ^= h >> 16
    return h


def rss_hash(tuple_: FiveTuple) -> int:
    """Symmetric 32-bit flow hash: both directions of a flow hash identically."""
    key, _ = canonical_key(tuple_)
    return murmur3_32(key.encode())


def select_ring(hash_value: int, n_rings: int) -> int:
    if n_rings < 1:
        raise ValueError("need at least one ring")
    return (hash_value & RING_SELECT_BITS) % n_rings


@dataclass
class DispatchConfig:
    n_rx_rings: int = 1  # == number of analysis workers
    n_acquire_threads: int = 1
    burst_size: int = 32
    inline_mode: bool = False

    def __post_init__(self):
        if self.n_rx_rings < 1 or self.burst_size < 1 or self.n_acquire_threads < 1:
            raise ValueError("dispatch config counts must be >= 1")


@dataclass
class AcquireStats:
    """Counters owned by one acquisition worker."""

    received: int = 0
    dropped: int = 0  # RX ring full
    decode_failed: int = 0  # truncated / unsupported frames
    tx_sent: int = 0
    by_interval: dict = field(default_factory=dict)  # interval idx -> [received, dropped]

    def note_interval(self, idx: int, received: int = 0, dropped: int = 0) -> None:
        rec = self.by_interval.setdefault(idx, [0, 0])
        rec[0] += received
        rec[1] += dropped


class AcquisitionWorker:
    """Moves frames source -> rings and (inline) tx ring -> sink.

    Each worker may produce onto any RX ring; several workers may share the
    source as long as each frame is pulled by exactly one of them.
    """

    def __init__(
        self,
        source,
        pool: PacketPool,
        rx_rings: list[Ring],
        config: DispatchConfig,
        tx_ring: Ring | None = None,
        sink=None,
        stats: AcquireStats | None = None,
    ):
        self.source = source
        self.pool = pool
        self.rx_rings = rx_rings
        self.tx_ring = tx_ring
        self.sink = sink
        self.config = config
        self.stats = stats if stats is not None else AcquireStats()
        if len(rx_rings) != config.n_rx_rings:
            raise ValueError("rx ring count does not match dispatch config")

    def ingest_frame(self, frame, arrival_us: int) -> int:
        """Decode and dispatch one frame; returns the ring index or -1.

        -1 means the frame was counted but not enqueued (decode failure or a
        full ring); its pool slot, if any, has been released.
        """
        self.stats.received += 1
        try:
            desc = decode(frame, arrival_us, self.pool)
        except PoolExhausted:
            self.stats.dropped += 1
            return -1
        except DecodeError:
            self.stats.decode_failed += 1
            return -1
        if not desc.decode_ok:
            self.stats.decode_failed += 1
            self.pool.release(desc.slot)
            return -1
        idx = select_ring(rss_hash(desc.tuple), self.config.n_rx_rings)
        if not self.rx_rings[idx].enqueue(desc):
            self.pool.release(desc.slot)
            self.stats.dropped += 1
            return -1
        return idx

    def drain_tx(self, max_n: int | None = None) -> int:
        """Write allowed packets back to the sink; no-op in passive mode."""
        if not self.config.inline_mode or self.tx_ring is None:
            return 0
        moved = 0
        budget = max_n if max_n is not None else self.config.burst_size
        for desc in self.tx_ring.dequeue_burst(budget):
            if self.sink is not None:
                self.sink.write(bytes(self.pool.view(desc.slot)))
            self.pool.release(desc.slot)
            moved += 1
        self.stats.tx_sent += moved
        return moved

    def acquisition_step(self, now_us: int) -> int:
        """One poll-loop iteration: ingest a burst, then drain the TX ring.

        Raises SourceExhausted when the source is finished (the run loop
        terminates or restarts it depending on workload config).
        """
        frames = self.source.next_burst(self.config.burst_size)
        for frame in frames:
            self.ingest_frame(frame, now_us)
        moved = len(frames) + self.drain_tx()
        if not frames:
            if self.source.exhausted():
                raise SourceExhausted
        return moved
