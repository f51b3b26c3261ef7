"""Shared fixtures: rules corpus, random packet contexts, brute-force oracle."""

import random
from pathlib import Path

import pytest

from ringids.detect import PacketContext, evaluate_rule, prefilter
from ringids.flow import Flow, FlowState
from ringids.packet import Direction, FiveTuple, Proto, canonical_key
from ringids.rules import load_ruleset

DATA_DIR = Path(__file__).parent / "data"
CORPUS_PATH = DATA_DIR / "corpus.rules"

HEARTBLEED_RULE = (
    'alert tcp $HOME_NET [21, 25, 443, 465, 636, 992, 993, 995, 2484] -> $EXTERNAL_NET any '
    '(msg: "OpenSSL SSLv3 large heartbeat response - possible ssl heartbleed attempt"; '
    'flow: to_client, established, only_stream; content: "|18 03 00|", depth 3; '
    'byte_test: 2,>,128,0,relative; metadata: policy balanced-ips drop, policy security-ips drop, '
    'ruleset community; service: ssl; reference: cve,2014-0160; classtype: attempted-recon; '
    'sid: 30514; rev: 9; )'
)


@pytest.fixture(scope="session")
def corpus_text():
    return CORPUS_PATH.read_text()


@pytest.fixture(scope="session")
def corpus_ruleset(corpus_text):
    return load_ruleset(corpus_text)


def make_context(tuple_, payload: bytes, flow: Flow | None = None, direction=Direction.FORWARD,
                 stream: bytes | None = None, now_us: int = 0) -> PacketContext:
    """Standalone context over a plain payload buffer (no pool)."""
    from ringids.packet import PacketDescriptor

    desc = PacketDescriptor(slot=0, frame_len=54 + len(payload), arrival_us=now_us,
                            decode_ok=True, tuple=tuple_, payload_offset=54, payload_len=len(payload))
    return PacketContext(descriptor=desc, tuple=tuple_, now_us=now_us, flow=flow,
                         direction=direction, buf=payload, payload_base=0,
                         payload_len=len(payload), stream_bytes=stream)


def make_flow(tuple_, state=FlowState.ESTABLISHED, initiator=None):
    key, direction = canonical_key(tuple_)
    flow = Flow(key=key, created_us=0, last_seen_us=0, state=state)
    flow.initiator_direction = initiator if initiator is not None else direction
    flow.saw_established = state in (FlowState.ESTABLISHED, FlowState.CLOSING, FlowState.CLOSED)
    return flow


def brute_force_matches(compiled, ctx) -> set[int]:
    """Evaluate every rule directly, no prefilter."""
    return {sid for sid, rule in compiled.rules.items() if evaluate_rule(rule, compiled, ctx)}


def pipeline_matches(compiled, ctx) -> set[int]:
    return {sid for sid in prefilter(compiled, ctx) if evaluate_rule(compiled.rules[sid], compiled, ctx)}


def random_context(rng: random.Random, compiled) -> PacketContext:
    """A randomized packet context; payloads sometimes carry rule patterns
    (possibly truncated into near-misses) so both phases get exercised."""
    proto = rng.choice([Proto.TCP, Proto.TCP, Proto.TCP, Proto.UDP, Proto.ICMP])
    ports = (0, 0)
    if proto in (Proto.TCP, Proto.UDP):
        pool = [80, 443, 25, 53, 8080, 1337, 6667, rng.randrange(1, 65536)]
        ports = (rng.choice(pool), rng.choice(pool))
    t = FiveTuple(proto, rng.getrandbits(32), ports[0], rng.getrandbits(32), ports[1])

    payload = bytearray(rng.randbytes(rng.randrange(0, 160)))
    all_rules = list(compiled.rules.values())
    for _ in range(rng.randrange(0, 4)):
        rule = all_rules[rng.randrange(len(all_rules))]
        fast = rule.fast_pattern
        if fast is None:
            continue
        piece = fast if rng.random() < 0.7 else fast[: max(len(fast) - 1, 1)]
        pos = rng.randrange(0, len(payload) + 1)
        payload[pos : pos + len(piece)] = piece

    flow = None
    direction = Direction.FORWARD
    if rng.random() < 0.8:
        state = rng.choice(
            [FlowState.NEW, FlowState.ESTABLISHED, FlowState.ESTABLISHED, FlowState.CLOSING]
        )
        key, key_dir = canonical_key(t)
        flow = make_flow(t, state=state, initiator=rng.choice([key_dir, key_dir.flipped()]))
        direction = key_dir

    stream = None
    if proto is Proto.TCP and flow is not None and rng.random() < 0.5:
        stream = bytes(payload) if rng.random() < 0.5 else rng.randbytes(rng.randrange(1, 200))

    return make_context(t, bytes(payload), flow=flow, direction=direction, stream=stream)
