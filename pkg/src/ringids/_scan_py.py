"""Pure-Python scan kernel over the flattened pattern automaton.

Same array layout and result as the compiled kernel in _acscan.pyx; used when
the extension is not built (or RINGIDS_PURE is set).
"""

from __future__ import annotations


def scan_flat(child_start, child_byte, child_state, fail, out_start, out_ids, data) -> set:
    """Walk ``data`` through the automaton, collecting matched pattern ids.

    Children of a state are stored contiguously in child_byte/child_state,
    sorted by byte; lookup is a binary search within the state's span.
    """
    found = set()
    state = 0
    for byte in data:
        while True:
            lo = child_start[state]
            hi = child_start[state + 1]
            # binary search for byte among this state's children
            nxt = -1
            while lo < hi:
                mid = (lo + hi) >> 1
                b = child_byte[mid]
                if b == byte:
                    nxt = child_state[mid]
                    break
                if b < byte:
                    lo = mid + 1
                else:
                    hi = mid
            if nxt >= 0:
                state = nxt
                break
            if state == 0:
                break
            state = fail[state]
        o = out_start[state]
        end = out_start[state + 1]
        while o < end:
            found.add(out_ids[o])
            o += 1
    return found
