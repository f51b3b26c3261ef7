# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled scan kernel over the flattened pattern automaton.

Mirrors _scan_py.scan_flat exactly: same arrays in, same id set out.
"""


def scan_flat(child_start, child_byte, child_state, fail, out_start, out_ids, data):
    cdef const long[:] cstart = child_start
    cdef const unsigned char[:] cbyte = child_byte
    cdef const long[:] cstate = child_state
    cdef const long[:] cfail = fail
    cdef const long[:] ostart = out_start
    cdef const long[:] oids = out_ids
    cdef const unsigned char[:] buf = data

    cdef Py_ssize_t i, n = buf.shape[0]
    cdef long state = 0, nxt, lo, hi, mid, o, oend
    cdef unsigned char byte, b
    found = set()

    for i in range(n):
        byte = buf[i]
        while True:
            lo = cstart[state]
            hi = cstart[state + 1]
            nxt = -1
            while lo < hi:
                mid = (lo + hi) >> 1
                b = cbyte[mid]
                if b == byte:
                    nxt = cstate[mid]
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
            state = cfail[state]
        o = ostart[state]
        oend = ostart[state + 1]
        while o < oend:
            found.add(oids[o])
            o += 1
    return found
