"""Workload generation, pcap I/O, experiment runner, and CLI."""

from .pcapio import BadMagic, TruncatedRecord, pcap_read, pcap_source, pcap_write
from .runner import (
    ConservationError,
    Engine,
    EngineConfig,
    ListAlertSink,
    NullSink,
    Report,
    TimingModel,
    run_experiment,
)
from .synth import ConfigError, WorkloadSpec, craft_payload, gen_synth, synth_source

__all__ = [
    "BadMagic",
    "TruncatedRecord",
    "pcap_read",
    "pcap_source",
    "pcap_write",
    "ConservationError",
    "Engine",
    "EngineConfig",
    "ListAlertSink",
    "NullSink",
    "Report",
    "TimingModel",
    "run_experiment",
    "ConfigError",
    "WorkloadSpec",
    "craft_payload",
    "gen_synth",
    "synth_source",
]
