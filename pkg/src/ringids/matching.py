"""Multi-pattern byte search for the phase-1 prefilter.

An Aho-Corasick automaton over the rules' fast patterns, built in three
passes: goto trie, failure links by BFS, and output sets merged along the
failure chain. The automaton is frozen into flat arrays (CSR children sorted
by byte, failure and output tables) so one scan routine can be shared by the
pure-Python kernel and the compiled one.

The scan is the hottest loop in the pipeline; a Cython kernel is used when
the built extension is importable, unless RINGIDS_PURE is set. Both kernels
return the identical result for the same automaton and input.
"""

from __future__ import annotations

import os
from array import array
from collections import deque

from ._scan_py import scan_flat as _scan_py

_acscan = None
if not os.environ.get("RINGIDS_PURE"):
    try:
        from . import _acscan  # type: ignore[no-redef]
    except ImportError:
        _acscan = None

NATIVE_AVAILABLE = _acscan is not None


def kernel_name() -> str:
    return "native" if NATIVE_AVAILABLE else "pure-python"


class MultiPatternMatcher:
    """Set-of-patterns matcher; ``scan`` reports which pattern ids occur.

    Patterns are non-empty byte strings registered with integer ids before
    ``build()``. Scanning an input of length n touches each byte once plus
    failure-link hops (amortized linear).
    """

    def __init__(self):
        self._patterns: list[tuple[bytes, int]] = []
        self._built = False
        # flat automaton, filled by build()
        self._child_start = array("l", [0, 0])
        self._child_byte = b""
        self._child_state = array("l")
        self._fail = array("l", [0])
        self._out_start = array("l", [0, 0])
        self._out_ids = array("l")

    def add(self, pattern: bytes, pattern_id: int) -> None:
        if self._built:
            raise RuntimeError("matcher already built")
        if not pattern:
            raise ValueError("empty pattern")
        self._patterns.append((bytes(pattern), int(pattern_id)))

    def __len__(self) -> int:
        return len(self._patterns)

    def build(self) -> "MultiPatternMatcher":
        """Freeze the trie, compute failure links, flatten to arrays."""
        children: list[dict[int, int]] = [{}]
        outputs: list[list[int]] = [[]]
        for pattern, pid in self._patterns:
            state = 0
            for byte in pattern:
                nxt = children[state].get(byte)
                if nxt is None:
                    nxt = len(children)
                    children[state][byte] = nxt
                    children.append({})
                    outputs.append([])
                state = nxt
            outputs[state].append(pid)

        n = len(children)
        fail = [0] * n
        queue = deque(children[0].values())
        while queue:
            state = queue.popleft()
            for byte, child in children[state].items():
                queue.append(child)
                f = fail[state]
                while f and byte not in children[f]:
                    f = fail[f]
                target = children[f].get(byte, 0)
                fail[child] = target if target != child else 0
                # outputs of the failure target are suffix matches here too
                outputs[child] = outputs[child] + outputs[fail[child]]

        child_start = array("l", [0] * (n + 1))
        child_byte = bytearray()
        child_state = array("l")
        out_start = array("l", [0] * (n + 1))
        out_ids = array("l")
        for state in range(n):
            child_start[state] = len(child_byte)
            for byte in sorted(children[state]):
                child_byte.append(byte)
                child_state.append(children[state][byte])
            out_start[state] = len(out_ids)
            out_ids.extend(outputs[state])
        child_start[n] = len(child_byte)
        out_start[n] = len(out_ids)

        self._child_start = child_start
        self._child_byte = bytes(child_byte)
        self._child_state = child_state
        self._fail = array("l", fail)
        self._out_start = out_start
        self._out_ids = out_ids
        self._built = True
        return self

    @property
    def state_count(self) -> int:
        return len(self._fail)

    def scan(self, data) -> set[int]:
        """Return the ids of every pattern occurring anywhere in ``data``."""
        if not self._built:
            raise RuntimeError("build() must be called before scan()")
        if not self._patterns or not len(data):
            return set()
        if _acscan is not None:
            return _acscan.scan_flat(
                self._child_start,
                self._child_byte,
                self._child_state,
                self._fail,
                self._out_start,
                self._out_ids,
                data,
            )
        return _scan_py(
            self._child_start,
            self._child_byte,
            self._child_state,
            self._fail,
            self._out_start,
            self._out_ids,
            data,
        )

    def scan_pure(self, data) -> set[int]:
        """Force the pure-Python kernel (parity tests and benchmarks)."""
        if not self._built:
            raise RuntimeError("build() must be called before scan()")
        if not self._patterns or not len(data):
            return set()
        return _scan_py(
            self._child_start,
            self._child_byte,
            self._child_state,
            self._fail,
            self._out_start,
            self._out_ids,
            data,
        )

    def scan_native(self, data) -> set[int]:
        """Force the compiled kernel; raises if the extension is unavailable."""
        if _acscan is None:
            raise RuntimeError("native scan kernel not built")
        if not self._built:
            raise RuntimeError("build() must be called before scan()")
        if not self._patterns or not len(data):
            return set()
        return _acscan.scan_flat(
            self._child_start,
            self._child_byte,
            self._child_state,
            self._fail,
            self._out_start,
            self._out_ids,
            data,
        )
