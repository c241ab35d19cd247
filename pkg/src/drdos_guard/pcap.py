"""Classic libpcap file reading and writing (Ethernet link type only)."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Union

from .errors import BadMagic, MalformedFrame
from .packet import PacketHeaderView, parse_frame, serialize_frame

MAGIC_USEC = 0xA1B2C3D4
LINKTYPE_ETHERNET = 1
DEFAULT_SNAPLEN = 65535

_GLOBAL = "IHHiIII"
_RECORD = "IIII"


@dataclass
class PcapReader:
    """Iterates over the frames of a pcap file as header views.

    Frames that fail to parse and a truncated final record are skipped;
    ``skipped`` counts them once iteration finishes.
    """

    path: Union[str, Path]
    skipped: int = 0
    linktype: int = LINKTYPE_ETHERNET
    _endian: str = field(default="<", repr=False)

    def __iter__(self) -> Iterator[PacketHeaderView]:
        with open(self.path, "rb") as fh:
            yield from self._read(fh)

    def _read(self, fh: BinaryIO) -> Iterator[PacketHeaderView]:
        head = fh.read(24)
        if len(head) < 24:
            raise BadMagic("file too short for a pcap global header")
        (magic,) = struct.unpack("<I", head[:4])
        if magic == MAGIC_USEC:
            self._endian = "<"
        elif magic == struct.unpack(">I", struct.pack("<I", MAGIC_USEC))[0]:
            self._endian = ">"
        else:
            raise BadMagic(f"unrecognised pcap magic 0x{magic:08x}")
        fields = struct.unpack(self._endian + _GLOBAL, head)
        self.linktype = fields[6]
        rec = struct.Struct(self._endian + _RECORD)
        while True:
            rh = fh.read(rec.size)
            if not rh:
                return
            if len(rh) < rec.size:
                self.skipped += 1
                return
            sec, usec, incl, _orig = rec.unpack(rh)
            data = fh.read(incl)
            if len(data) < incl:
                self.skipped += 1
                return
            try:
                yield parse_frame(data, sec + usec / 1e6)
            except MalformedFrame:
                self.skipped += 1


def read_pcap(path: Union[str, Path]) -> PcapReader:
    return PcapReader(path)


def _split_timestamp(ts: float) -> tuple[int, int]:
    sec = int(ts)
    usec = int(round((ts - sec) * 1e6))
    if usec >= 1_000_000:
        sec, usec = sec + 1, usec - 1_000_000
    return sec, usec


def write_pcap(stream: Iterable, path: Union[str, Path], snaplen: int = DEFAULT_SNAPLEN) -> int:
    """Write views (or labelled packets carrying ``.view``) to a pcap file.

    Returns the number of records written.
    """
    count = 0
    with open(path, "wb") as fh:
        fh.write(struct.pack("<" + _GLOBAL, MAGIC_USEC, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))
        for item in stream:
            view = getattr(item, "view", item)
            frame = serialize_frame(view)
            sec, usec = _split_timestamp(view.timestamp)
            fh.write(struct.pack("<" + _RECORD, sec, usec, len(frame), len(frame)))
            fh.write(frame)
            count += 1
    return count
