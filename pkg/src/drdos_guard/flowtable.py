"""Single-table OpenFlow-1.3-style match/action engine.

Entries carry a priority; the highest-priority matching entry wins and ties
go to the entry installed first.  A table miss forwards the packet normally.
Installs and removals swap in a new immutable snapshot, so a concurrent
lookup sees either the whole batch or none of it.
"""

from __future__ import annotations

import dataclasses
import enum
import itertools
import threading
from dataclasses import dataclass
from ipaddress import IPv4Address
from typing import Any, Callable, Hashable, Iterable, Iterator, Optional

from .errors import DuplicateEntryId, InvalidSetField
from .packet import ETH_TYPE_ARP, ETH_TYPE_IPV4, PacketHeaderView, as_ipv4


@dataclass(frozen=True, slots=True)
class MatchPattern:
    """Match fields; ``None`` is a wildcard.

    Exact ``udp_*`` fields only match packets with a UDP header, ``arp_*``
    fields only ARP packets and ``ipv4_*`` fields only IPv4 packets.
    """

    ether_type: Optional[int] = None
    arp_op: Optional[int] = None
    arp_tpa: Optional[IPv4Address] = None
    ipv4_src: Optional[IPv4Address] = None
    ipv4_dst: Optional[IPv4Address] = None
    udp_src: Optional[int] = None
    udp_dst: Optional[int] = None

    def matches(self, view: PacketHeaderView) -> bool:
        if self.ether_type is not None and view.ether_type != self.ether_type:
            return False
        if self.arp_op is not None or self.arp_tpa is not None:
            arp = view.arp
            if arp is None:
                return False
            if self.arp_op is not None and arp.op != self.arp_op:
                return False
            if self.arp_tpa is not None and arp.tpa != self.arp_tpa:
                return False
        if self.ipv4_src is not None or self.ipv4_dst is not None:
            ip = view.ipv4
            if ip is None:
                return False
            if self.ipv4_src is not None and ip.src != self.ipv4_src:
                return False
            if self.ipv4_dst is not None and ip.dst != self.ipv4_dst:
                return False
        if self.udp_src is not None or self.udp_dst is not None:
            udp = view.udp
            if udp is None:
                return False
            if self.udp_src is not None and udp.src_port != self.udp_src:
                return False
            if self.udp_dst is not None and udp.dst_port != self.udp_dst:
                return False
        return True


class SetFieldName(enum.Enum):
    IPV4_SRC = "IPV4_SRC"
    IPV4_DST = "IPV4_DST"
    ETH_SRC = "ETH_SRC"
    ETH_DST = "ETH_DST"
    ARP_OP = "ARP_OP"
    ARP_SPA = "ARP_SPA"
    ARP_SHA = "ARP_SHA"
    ARP_TPA = "ARP_TPA"
    ARP_THA = "ARP_THA"


class Terminal(enum.Enum):
    OUTPUT_TARGET = "=> TARGET"
    OUTPUT_NORMAL = "=> NORMAL"
    DROP = "DROP"
    CONTROLLER = "=> CONTROLLER"


@dataclass(frozen=True, slots=True)
class SetField:
    field: SetFieldName
    value: Any

    def __str__(self) -> str:
        return f"set-field {self.field.value} = {self.value}"


@dataclass(frozen=True, slots=True)
class Action:
    terminal: Terminal
    set_fields: tuple[SetField, ...] = ()

    def __str__(self) -> str:
        return "; ".join([*(str(s) for s in self.set_fields), self.terminal.value])


@dataclass(frozen=True, slots=True)
class FlowEntry:
    id: Hashable
    priority: int
    pattern: MatchPattern
    action: Action

    def __post_init__(self) -> None:
        if self.priority < 0:
            raise ValueError("priority must be non-negative")


class Outcome(enum.Enum):
    DELIVERED_TO_TARGET = "delivered"
    FORWARDED_NORMAL = "forwarded"
    DROPPED = "dropped"
    EMITTED_REPLY = "reply"
    PUNTED = "punted"


@dataclass(frozen=True, slots=True)
class Disposition:
    """What the pipeline did with a packet, and the packet it did it with.

    For DROPPED the view is the discarded packet; for EMITTED_REPLY it is the
    synthesized reply.  PUNTED only appears between ``apply`` and the
    controller callback.
    """

    outcome: Outcome
    view: Optional[PacketHeaderView]

    @classmethod
    def delivered(cls, view: PacketHeaderView) -> "Disposition":
        return cls(Outcome.DELIVERED_TO_TARGET, view)

    @classmethod
    def forwarded(cls, view: PacketHeaderView) -> "Disposition":
        return cls(Outcome.FORWARDED_NORMAL, view)

    @classmethod
    def dropped(cls, view: Optional[PacketHeaderView] = None) -> "Disposition":
        return cls(Outcome.DROPPED, view)

    @classmethod
    def reply(cls, view: PacketHeaderView) -> "Disposition":
        return cls(Outcome.EMITTED_REPLY, view)


def _set_field(view: PacketHeaderView, sf: SetField) -> PacketHeaderView:
    name, value = sf.field, sf.value
    if name is SetFieldName.ETH_SRC:
        return dataclasses.replace(view, eth_src=value)
    if name is SetFieldName.ETH_DST:
        return dataclasses.replace(view, eth_dst=value)
    if name in (SetFieldName.IPV4_SRC, SetFieldName.IPV4_DST):
        if view.ipv4 is None:
            raise InvalidSetField(f"{name.value} on a packet without an IPv4 header")
        attr = "src" if name is SetFieldName.IPV4_SRC else "dst"
        return dataclasses.replace(view, ipv4=dataclasses.replace(view.ipv4, **{attr: as_ipv4(value)}))
    if view.arp is None:
        raise InvalidSetField(f"{name.value} on a packet without an ARP header")
    attr = name.value[4:].lower()
    if attr in ("spa", "tpa"):
        value = as_ipv4(value)
    return dataclasses.replace(view, arp=dataclasses.replace(view.arp, **{attr: value}))


def apply(entry: FlowEntry, view: PacketHeaderView) -> Disposition:
    """Run an entry's set-fields on a copy of ``view`` and resolve its terminal.

    ``=> TARGET`` on an ARP packet emits it as a reply (link padding is
    dropped, the switch re-pads on output); on anything else it delivers the
    packet to the protected host.
    """
    out = view
    for sf in entry.action.set_fields:
        out = _set_field(out, sf)
    terminal = entry.action.terminal
    if terminal is Terminal.DROP:
        return Disposition.dropped(out)
    if terminal is Terminal.OUTPUT_NORMAL:
        return Disposition.forwarded(out)
    if terminal is Terminal.CONTROLLER:
        return Disposition(Outcome.PUNTED, out)
    if out.arp is not None:
        return Disposition.reply(dataclasses.replace(out, trailer=b""))
    return Disposition.delivered(out)


class FlowTable:
    def __init__(self, entries: Iterable[FlowEntry] = ()) -> None:
        self._lock = threading.Lock()
        self._seq = itertools.count()
        # (entry, install sequence) sorted by descending priority, then sequence
        self._snapshot: tuple[tuple[FlowEntry, int], ...] = ()
        self.install(entries)

    def _stage(self, staged: list, entry: FlowEntry) -> None:
        staged.append((entry, next(self._seq)))

    def install(self, entries: Iterable[FlowEntry]) -> "FlowTable":
        self.modify(install=entries)
        return self

    def remove(self, ids: Iterable[Hashable]) -> list[Hashable]:
        """Remove entries by id as one batch; unknown ids are ignored."""
        return self.modify(remove=ids)

    def modify(self, remove: Iterable[Hashable] = (), install: Iterable[FlowEntry] = ()) -> list[Hashable]:
        """Remove and install in a single snapshot swap; returns removed ids."""
        wanted = set(remove)
        entries = list(install)
        with self._lock:
            kept = [p for p in self._snapshot if p[0].id not in wanted]
            removed = [p[0].id for p in self._snapshot if p[0].id in wanted]
            ids = {e.id for e, _ in kept}
            batch_ids = set()
            for e in entries:
                if e.id in ids or e.id in batch_ids:
                    raise DuplicateEntryId(e.id)
                batch_ids.add(e.id)
            for e in entries:
                self._stage(kept, e)
            kept.sort(key=lambda pair: (-pair[0].priority, pair[1]))
            self._snapshot = tuple(kept)
        return removed

    def lookup(self, view: PacketHeaderView) -> Optional[FlowEntry]:
        """Highest-priority matching entry, or None on a table miss."""
        for entry, _ in self._snapshot:
            if entry.pattern.matches(view):
                return entry
        return None

    @property
    def entries(self) -> list[FlowEntry]:
        return [e for e, _ in self._snapshot]

    def __len__(self) -> int:
        return len(self._snapshot)

    def __iter__(self) -> Iterator[FlowEntry]:
        return iter(self.entries)

    def __contains__(self, entry_id: object) -> bool:
        return any(e.id == entry_id for e, _ in self._snapshot)

    def dump(self) -> str:
        return dump_entries(self.entries)


Controller = Callable[[PacketHeaderView], Disposition]


@dataclass
class Pipeline:
    table: FlowTable
    controller: Optional[Controller] = None

    def process(self, view: PacketHeaderView) -> Disposition:
        entry = self.table.lookup(view)
        if entry is None:
            return Disposition.forwarded(view)
        result = apply(entry, view)
        if result.outcome is Outcome.PUNTED:
            if self.controller is None:
                raise RuntimeError(f"entry {entry.id!r} punts to a controller but the pipeline has none")
            return self.controller(result.view)
        return result


def install(table: FlowTable, entries: Iterable[FlowEntry]) -> FlowTable:
    return table.install(entries)


def lookup(table: FlowTable, view: PacketHeaderView) -> Optional[FlowEntry]:
    return table.lookup(view)


def process(pipeline: Pipeline, view: PacketHeaderView) -> Disposition:
    return pipeline.process(view)


_COLUMNS = ("prio", "ether_type", "arp_op", "arp_tpa", "ipv4_src", "ipv4_dst", "udp_src", "udp_dst", "action")
_ETHER_NAMES = {ETH_TYPE_IPV4: "0x0800 (IPv4)", ETH_TYPE_ARP: "0x0806 (ARP)"}


def _cell(value: Any) -> str:
    return "*" if value is None else str(value)


def dump_entries(entries: Iterable[FlowEntry]) -> str:
    """Render entries one per row in the layout of a published rule table."""
    rows = [_COLUMNS]
    for e in entries:
        p = e.pattern
        ether = "*" if p.ether_type is None else _ETHER_NAMES.get(p.ether_type, f"0x{p.ether_type:04x}")
        rows.append(
            (
                str(e.priority),
                ether,
                _cell(p.arp_op),
                _cell(p.arp_tpa),
                _cell(p.ipv4_src),
                _cell(p.ipv4_dst),
                _cell(p.udp_src),
                _cell(p.udp_dst),
                str(e.action),
            )
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(_COLUMNS) - 1)]
    lines = []
    for r in rows:
        cells = [c.ljust(w) for c, w in zip(r[:-1], widths)]
        lines.append("  ".join([*cells, r[-1]]).rstrip())
    return "\n".join(lines) + "\n"
