"""Pattern automaton correctness against a naive substring oracle."""

import random

import pytest

from ringids.matching import NATIVE_AVAILABLE, MultiPatternMatcher, kernel_name


def naive_scan(patterns, data: bytes) -> set[int]:
    data = bytes(data)
    return {pid for pat, pid in patterns if data.find(pat) >= 0}


def build(patterns):
    m = MultiPatternMatcher()
    for pat, pid in patterns:
        m.add(pat, pid)
    return m.build()


def test_basic_overlapping_patterns():
    patterns = [(b"he", 0), (b"she", 1), (b"his", 2), (b"hers", 3)]
    m = build(patterns)
    assert m.scan(b"ushers") == {0, 1, 3}
    assert m.scan(b"nothing") == set()
    assert m.scan(b"his hers") == {0, 2, 3}


def test_pattern_inside_pattern():
    m = build([(b"a", 0), (b"aa", 1), (b"aaa", 2)])
    assert m.scan(b"aaa") == {0, 1, 2}
    assert m.scan(b"ba") == {0}


def test_shared_pattern_ids_and_binary_bytes():
    m = build([(bytes([0x18, 0x03, 0x00]), 7), (b"\x00\x00", 8)])
    assert m.scan(bytes([0x17, 0x18, 0x03, 0x00, 0x90])) == {7}
    assert m.scan(bytes([0, 0])) == {8}


def test_empty_input_and_empty_matcher():
    m = build([(b"x", 1)])
    assert m.scan(b"") == set()
    empty = MultiPatternMatcher().build()
    assert empty.scan(b"anything") == set()


def test_empty_pattern_rejected():
    m = MultiPatternMatcher()
    with pytest.raises(ValueError):
        m.add(b"", 1)


def test_memoryview_input():
    m = build([(b"abc", 1)])
    buf = bytearray(b"zzabczz")
    assert m.scan(memoryview(buf)[1:6]) == {1}


def test_randomized_against_naive_oracle():
    rng = random.Random(1234)
    alphabet = bytes(range(0, 8))  # tiny alphabet forces heavy overlap
    for trial in range(40):
        patterns = []
        for pid in range(rng.randrange(1, 25)):
            length = rng.randrange(1, 6)
            patterns.append((bytes(rng.choice(alphabet) for _ in range(length)), pid))
        # drop duplicate byte strings (ids map 1:1 onto distinct patterns here)
        seen = {}
        for pat, pid in patterns:
            seen.setdefault(pat, pid)
        patterns = [(p, i) for p, i in seen.items()]
        m = build(patterns)
        for _ in range(30):
            data = bytes(rng.choice(alphabet) for _ in range(rng.randrange(0, 120)))
            expected = naive_scan(patterns, data)
            assert m.scan_pure(data) == expected
            if NATIVE_AVAILABLE:
                assert m.scan_native(data) == expected


@pytest.mark.skipif(not NATIVE_AVAILABLE, reason="native kernel not built")
def test_kernel_parity_on_realistic_payloads():
    rng = random.Random(77)
    patterns = [(bytes(rng.randrange(256) for _ in range(rng.randrange(3, 12))), pid) for pid in range(200)]
    m = build(patterns)
    for _ in range(200):
        data = bytearray(rng.randbytes(rng.randrange(0, 1400)))
        if rng.random() < 0.5 and patterns:
            pat = patterns[rng.randrange(len(patterns))][0]
            pos = rng.randrange(0, max(len(data) - len(pat), 1))
            data[pos : pos + len(pat)] = pat
        assert m.scan_native(bytes(data)) == m.scan_pure(bytes(data))


def test_kernel_name_reports():
    assert kernel_name() in ("native", "pure-python")
