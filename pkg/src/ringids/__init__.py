"""ringids: a partitioned intrusion-detection pipeline.

Packet acquisition and analysis communicate only through bounded rings of
pool-backed packet descriptors; analysis workers run a two-phase matcher over
a Snort-subset rule language, track flows privately, and read time from a
monotone counter clock. An optional cost model emulates protected-memory
paging and boundary-crossing overheads.
"""

from .acquire import AcquisitionWorker, DispatchConfig, SourceExhausted, murmur3_32, rss_hash, select_ring
from .boundary import CostModel, Lifecycle, LifecycleEvent, LifecycleState, OrderError, paging_factor
from .clock import CounterClock, SimClock, counter_to_us, start_clock
from .detect import Alert, AnalysisWorker, PacketContext, evaluate_rule, format_alert_fast, prefilter
from .flow import Flow, FlowState, FlowTable, SegmentBuffer, TableFull, update_flow
from .matching import NATIVE_AVAILABLE, MultiPatternMatcher
from .packet import (
    Direction,
    FiveTuple,
    FlowKey,
    PacketDescriptor,
    PacketPool,
    PoolExhausted,
    Proto,
    TruncatedFrame,
    canonical_key,
    decode,
)
from .ring import ConfigError as RingConfigError
from .ring import Discipline, Ring, ring_new
from .rules import CompiledRuleSet, ParseError, Rule, RuleSet, compile_ruleset, load_ruleset, parse_rule

__version__ = "0.1.0"
