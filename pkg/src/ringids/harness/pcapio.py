"""Classic pcap container read/write.

Microsecond-timestamp captures only (magic 0xa1b2c3d4), either byte order on
read; writes are little-endian, linktype Ethernet.
"""

from __future__ import annotations

import struct

from .synth import GeneratorSource

MAGIC_US = 0xA1B2C3D4
MAGIC_US_SWAPPED = 0xD4C3B2A1
GLOBAL_HEADER = struct.Struct("<IHHiIII")
RECORD_HEADER_LEN = 16
LINKTYPE_ETHERNET = 1
SNAPLEN = 65535


class BadMagic(Exception):
    pass


class TruncatedRecord(Exception):
    pass


def pcap_read(path):
    """Yield (frame_bytes, timestamp_us) records in file order."""
    with open(path, "rb") as fh:
        header = fh.read(GLOBAL_HEADER.size)
        if len(header) < GLOBAL_HEADER.size:
            raise BadMagic("file shorter than a pcap global header")
        magic = struct.unpack("<I", header[:4])[0]
        if magic == MAGIC_US:
            endian = "<"
        elif magic == MAGIC_US_SWAPPED:
            endian = ">"
        else:
            raise BadMagic(f"unknown pcap magic 0x{magic:08x}")
        rec = struct.Struct(endian + "IIII")
        while True:
            head = fh.read(RECORD_HEADER_LEN)
            if not head:
                return
            if len(head) < RECORD_HEADER_LEN:
                raise TruncatedRecord("record header cut short")
            ts_sec, ts_usec, incl_len, _orig = rec.unpack(head)
            data = fh.read(incl_len)
            if len(data) < incl_len:
                raise TruncatedRecord("record body cut short")
            yield data, ts_sec * 1_000_000 + ts_usec


def pcap_write(path, frames, ts_spacing_us: int = 1) -> int:
    """Write frames (bytes, or (bytes, ts_us) pairs) to a pcap file.

    Bare frames get synthetic timestamps ts_spacing_us apart. Returns the
    record count.
    """
    count = 0
    with open(path, "wb") as fh:
        fh.write(GLOBAL_HEADER.pack(MAGIC_US, 2, 4, 0, 0, SNAPLEN, LINKTYPE_ETHERNET))
        next_ts = 0
        for item in frames:
            if isinstance(item, tuple):
                frame, ts_us = item
            else:
                frame, ts_us = item, next_ts
                next_ts += ts_spacing_us
            fh.write(struct.pack("<IIII", ts_us // 1_000_000, ts_us % 1_000_000, len(frame), len(frame)))
            fh.write(frame)
            count += 1
    return count


def pcap_source(path, repeat: bool = False) -> GeneratorSource:
    """Frame source over a capture file (timestamps dropped; replay is paced
    by the experiment, the way a generator replays a capture at line rate)."""
    return GeneratorSource(lambda: (frame for frame, _ts in pcap_read(path)), repeat=repeat)
