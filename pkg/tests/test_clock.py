"""Counter clock monotonicity and conversion."""

import threading
import time

import pytest

from ringids.clock import AlreadyRunning, CounterClock, NotStarted, SimClock, counter_to_us, start_clock


def test_counter_conversion_exact():
    assert counter_to_us(3785, 3785.0) == 1
    assert counter_to_us(0, 3785.0) == 0
    assert counter_to_us(3784, 3785.0) == 0
    assert counter_to_us(37850, 3785.0) == 10


def test_clock_advances_while_running():
    clk = start_clock()
    a = clk.ticks
    time.sleep(0.01)
    b = clk.ticks
    clk.stop()
    assert b > a


def test_double_start_rejected():
    clk = start_clock()
    try:
        with pytest.raises(AlreadyRunning):
            clk.start()
    finally:
        clk.stop()


def test_not_started_read():
    clk = CounterClock()
    with pytest.raises(NotStarted):
        clk.now_us()


def test_stopped_clock_value_retained():
    clk = start_clock()
    time.sleep(0.005)
    clk.stop()
    v1 = clk.now_us()
    time.sleep(0.005)
    assert clk.now_us() == v1


def test_multi_reader_monotonicity():
    clk = start_clock()
    failures = []

    def reader():
        prev = -1
        for _ in range(50_000):
            now = clk.now_us()
            if now < prev:
                failures.append((prev, now))
                return
            prev = now

    threads = [threading.Thread(target=reader) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    clk.stop()
    assert not failures


def test_sim_clock_monotone_enforced():
    clk = SimClock()
    clk.advance_us(10)
    clk.set_us(10)
    assert clk.now_us() == 10
    with pytest.raises(ValueError):
        clk.set_us(5)
    with pytest.raises(ValueError):
        clk.advance_us(-1)
