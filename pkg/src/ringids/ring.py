"""Bounded FIFO rings of descriptor references.

The only runtime channel between acquisition and analysis. Operations never
block: a full ring rejects the element (producer counts a drop or retries) and
an empty ring returns nothing (consumers poll). Capacity is a power of two and
cursors are masked, the standard ring construction.

CPython has no CAS primitive, so the cursor update is guarded by a lock held
for a constant-size critical section; the observable contract (nonblocking,
per-producer FIFO, no loss or duplication under any interleaving) is the same
as a compare-and-swap ring.
"""

from __future__ import annotations

import threading
from enum import Enum


class Discipline(Enum):
    MPSC = "mpsc"  # many producers, exactly one consumer
    MPMC = "mpmc"  # many producers, many consumers


class ConfigError(ValueError):
    """Invalid ring configuration."""


class Ring:
    def __init__(self, capacity: int, discipline: Discipline = Discipline.MPSC):
        if capacity <= 0 or capacity & (capacity - 1):
            raise ConfigError(f"ring capacity must be a power of two, got {capacity}")
        self.capacity = capacity
        self.discipline = discipline
        self._mask = capacity - 1
        self._slots: list = [None] * capacity
        self._head = 0  # next slot to dequeue
        self._tail = 0  # next slot to enqueue
        self._lock = threading.Lock()

    def enqueue(self, item) -> bool:
        """Insert one element; False means the ring is full (backpressure)."""
        if item is None:
            raise ValueError("ring elements must not be None")
        with self._lock:
            if self._tail - self._head == self.capacity:
                return False
            self._slots[self._tail & self._mask] = item
            self._tail += 1
            return True

    def dequeue(self):
        """Remove and return the oldest element, or None if empty."""
        with self._lock:
            if self._head == self._tail:
                return None
            item = self._slots[self._head & self._mask]
            self._slots[self._head & self._mask] = None
            self._head += 1
            return item

    def enqueue_burst(self, items) -> int:
        """Insert as many of ``items`` as fit; returns the accepted count."""
        accepted = 0
        with self._lock:
            for item in items:
                if item is None:
                    raise ValueError("ring elements must not be None")
                if self._tail - self._head == self.capacity:
                    break
                self._slots[self._tail & self._mask] = item
                self._tail += 1
                accepted += 1
        return accepted

    def dequeue_burst(self, max_n: int) -> list:
        """Remove up to ``max_n`` elements in FIFO order."""
        out = []
        with self._lock:
            while self._head != self._tail and len(out) < max_n:
                idx = self._head & self._mask
                out.append(self._slots[idx])
                self._slots[idx] = None
                self._head += 1
        return out

    def peek(self):
        with self._lock:
            if self._head == self._tail:
                return None
            return self._slots[self._head & self._mask]

    def __len__(self) -> int:
        with self._lock:
            return self._tail - self._head


def ring_new(capacity: int, discipline: Discipline) -> Ring:
    return Ring(capacity, discipline)
