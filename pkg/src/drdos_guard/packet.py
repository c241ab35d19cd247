"""Packet, flow and host types plus Ethernet frame parsing/serialization.

Views are immutable; rewriting a field means ``dataclasses.replace``.  The
serializer always recomputes the IPv4 header checksum and the L4 checksum
from the current field values, so a rewritten view is wire-valid without any
bookkeeping by the caller.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from ipaddress import IPv4Address, IPv4Interface
from typing import NamedTuple, Optional

from .errors import MalformedFrame

ETH_TYPE_IPV4 = 0x0800
ETH_TYPE_ARP = 0x0806
BROADCAST_MAC = "ff:ff:ff:ff:ff:ff"
ZERO_IP = IPv4Address(0)


def as_ipv4(value) -> IPv4Address:
    """IPv4Address from a string, int or bytes; existing addresses pass through."""
    return value if isinstance(value, IPv4Address) else IPv4Address(value)

ARP_REQUEST = 1
ARP_REPLY = 2

_ETH = struct.Struct("!6s6sH")
_IPV4 = struct.Struct("!BBHHHBBH4s4s")
_UDP = struct.Struct("!HHHH")
_ARP = struct.Struct("!HHBBH6s4s6s4s")

_MF_FLAG = 0x2000
_OFFSET_MASK = 0x1FFF


class IpProto(IntEnum):
    ICMP = 1
    TCP = 6
    UDP = 17


def mac_to_bytes(mac: str) -> bytes:
    raw = bytes.fromhex(mac.replace(":", "").replace("-", ""))
    if len(raw) != 6:
        raise ValueError(f"not a 48-bit MAC address: {mac!r}")
    return raw


def bytes_to_mac(raw: bytes) -> str:
    return raw.hex(":")


def internet_checksum(data: bytes) -> int:
    """One's-complement sum of 16-bit words, complemented."""
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


@dataclass(frozen=True, slots=True)
class Ipv4Header:
    src: IPv4Address
    dst: IPv4Address
    protocol: int
    ttl: int = 64
    identification: int = 0
    tos: int = 0
    flags_fragment: int = 0
    options: bytes = b""

    @property
    def fragment_offset(self) -> int:
        return self.flags_fragment & _OFFSET_MASK

    @property
    def is_fragment_tail(self) -> bool:
        """True for non-first fragments, which carry no L4 header."""
        return self.fragment_offset != 0

    @property
    def is_fragmented(self) -> bool:
        return bool(self.flags_fragment & _MF_FLAG) or self.fragment_offset != 0


@dataclass(frozen=True, slots=True)
class UdpHeader:
    src_port: int
    dst_port: int
    # Only set when the wire values cannot be derived from the payload
    # (first fragments, inconsistent length fields); None means "compute".
    length: Optional[int] = None
    checksum: Optional[int] = None


@dataclass(frozen=True, slots=True)
class TcpPorts:
    """TCP port pair; the full TCP header stays in the view payload."""

    src_port: int
    dst_port: int


@dataclass(frozen=True, slots=True)
class ArpHeader:
    op: int
    sha: str
    spa: IPv4Address
    tha: str
    tpa: IPv4Address
    htype: int = 1
    ptype: int = ETH_TYPE_IPV4


@dataclass(frozen=True, slots=True)
class PacketHeaderView:
    """Parsed L2/L3/L4 headers of one Ethernet frame.

    ``payload`` holds everything after the last parsed header (for TCP that
    includes the TCP header itself); ``trailer`` holds Ethernet padding that
    follows the IPv4 datagram or ARP body.
    """

    timestamp: float
    eth_src: str
    eth_dst: str
    ether_type: int
    ipv4: Optional[Ipv4Header] = None
    udp: Optional[UdpHeader] = None
    tcp: Optional[TcpPorts] = None
    arp: Optional[ArpHeader] = None
    payload: bytes = b""
    trailer: bytes = b""

    def __post_init__(self) -> None:
        if (self.ipv4 is not None) != (self.ether_type == ETH_TYPE_IPV4):
            raise ValueError("ipv4 record present iff ether_type is 0x0800")
        if (self.arp is not None) != (self.ether_type == ETH_TYPE_ARP):
            raise ValueError("arp record present iff ether_type is 0x0806")
        if self.udp is not None:
            if self.ipv4 is None or self.ipv4.protocol != IpProto.UDP or self.ipv4.is_fragment_tail:
                raise ValueError("udp record requires an unfragmented-head IPv4/UDP packet")
        if self.tcp is not None:
            if self.ipv4 is None or self.ipv4.protocol != IpProto.TCP or self.ipv4.is_fragment_tail:
                raise ValueError("tcp record requires an IPv4/TCP packet")

    @property
    def payload_length(self) -> int:
        return len(self.payload)

    @property
    def total_length(self) -> int:
        """IPv4 total length as it will be serialized (0 for non-IPv4)."""
        if self.ipv4 is None:
            return 0
        n = 20 + len(self.ipv4.options) + len(self.payload)
        if self.udp is not None:
            n += 8
        return n

    @property
    def src_port(self) -> int:
        if self.udp is not None:
            return self.udp.src_port
        if self.tcp is not None:
            return self.tcp.src_port
        return 0

    @property
    def dst_port(self) -> int:
        if self.udp is not None:
            return self.udp.dst_port
        if self.tcp is not None:
            return self.tcp.dst_port
        return 0


class FlowKey(NamedTuple):
    """Unidirectional 5-tuple; tuple ordering gives a deterministic total order."""

    src_ip: IPv4Address
    dst_ip: IPv4Address
    protocol: int
    src_port: int
    dst_port: int


@dataclass(frozen=True, slots=True)
class HostIdentity:
    ip: IPv4Address
    mac: str
    subnet_prefix_length: int = 24

    @property
    def subnet_broadcast(self) -> IPv4Address:
        return IPv4Interface(f"{self.ip}/{self.subnet_prefix_length}").network.broadcast_address


def udp_packet(
    src: str | IPv4Address,
    sport: int,
    dst: str | IPv4Address,
    dport: int,
    *,
    timestamp: float = 0.0,
    payload: bytes = b"",
    eth_src: str = "02:00:00:00:00:01",
    eth_dst: str = "02:00:00:00:00:02",
) -> PacketHeaderView:
    """Convenience constructor for an Ethernet/IPv4/UDP view."""
    return PacketHeaderView(
        timestamp=timestamp,
        eth_src=eth_src,
        eth_dst=eth_dst,
        ether_type=ETH_TYPE_IPV4,
        ipv4=Ipv4Header(as_ipv4(src), as_ipv4(dst), IpProto.UDP),
        udp=UdpHeader(sport, dport),
        payload=payload,
    )


def tcp_packet(
    src: str | IPv4Address,
    sport: int,
    dst: str | IPv4Address,
    dport: int,
    *,
    timestamp: float = 0.0,
    flags: int = 0x10,
    eth_src: str = "02:00:00:00:00:01",
    eth_dst: str = "02:00:00:00:00:02",
) -> PacketHeaderView:
    header = struct.pack("!HHIIBBHHH", sport, dport, 0, 0, 5 << 4, flags, 65535, 0, 0)
    return PacketHeaderView(
        timestamp=timestamp,
        eth_src=eth_src,
        eth_dst=eth_dst,
        ether_type=ETH_TYPE_IPV4,
        ipv4=Ipv4Header(as_ipv4(src), as_ipv4(dst), IpProto.TCP),
        tcp=TcpPorts(sport, dport),
        payload=header,
    )


def arp_packet(
    op: int,
    sha: str,
    spa: str | IPv4Address,
    tpa: str | IPv4Address,
    *,
    tha: str = "00:00:00:00:00:00",
    timestamp: float = 0.0,
    eth_dst: str = BROADCAST_MAC,
) -> PacketHeaderView:
    return PacketHeaderView(
        timestamp=timestamp,
        eth_src=sha,
        eth_dst=eth_dst,
        ether_type=ETH_TYPE_ARP,
        arp=ArpHeader(op, sha, as_ipv4(spa), tha, as_ipv4(tpa)),
    )


def parse_frame(data: bytes, timestamp: float = 0.0) -> PacketHeaderView:
    """Decode an Ethernet frame into a header view.

    Raises MalformedFrame when the Ethernet header or a declared IPv4, UDP,
    TCP or ARP header does not fit in ``data``.
    """
    data = bytes(data)
    if len(data) < _ETH.size:
        raise MalformedFrame(f"{len(data)} bytes is shorter than an Ethernet header")
    dst, src, ether_type = _ETH.unpack_from(data)
    eth_src, eth_dst = bytes_to_mac(src), bytes_to_mac(dst)
    body = data[_ETH.size:]

    if ether_type == ETH_TYPE_ARP:
        if len(body) < _ARP.size:
            raise MalformedFrame("truncated ARP body")
        htype, ptype, hlen, plen, op, sha, spa, tha, tpa = _ARP.unpack_from(body)
        if hlen != 6 or plen != 4:
            raise MalformedFrame("only Ethernet/IPv4 ARP is supported")
        arp = ArpHeader(op, bytes_to_mac(sha), IPv4Address(spa), bytes_to_mac(tha), IPv4Address(tpa), htype, ptype)
        return PacketHeaderView(timestamp, eth_src, eth_dst, ether_type, arp=arp, trailer=body[_ARP.size:])

    if ether_type != ETH_TYPE_IPV4:
        return PacketHeaderView(timestamp, eth_src, eth_dst, ether_type, payload=body)

    if len(body) < _IPV4.size:
        raise MalformedFrame("truncated IPv4 header")
    ver_ihl, tos, total_length, ident, flags_frag, ttl, proto, _csum, sip, dip = _IPV4.unpack_from(body)
    if ver_ihl >> 4 != 4:
        raise MalformedFrame(f"IP version {ver_ihl >> 4} is not IPv4")
    ihl = (ver_ihl & 0x0F) * 4
    if ihl < 20 or ihl > len(body) or total_length < ihl or total_length > len(body):
        raise MalformedFrame("IPv4 header or total length extends past the buffer")
    ipv4 = Ipv4Header(
        src=IPv4Address(sip),
        dst=IPv4Address(dip),
        protocol=proto,
        ttl=ttl,
        identification=ident,
        tos=tos,
        flags_fragment=flags_frag,
        options=body[20:ihl],
    )
    datagram = body[ihl:total_length]
    trailer = body[total_length:]
    udp = tcp = None
    payload = datagram
    if not ipv4.is_fragment_tail:
        if proto == IpProto.UDP:
            if len(datagram) < _UDP.size:
                raise MalformedFrame("truncated UDP header")
            sport, dport, ulen, ucsum = _UDP.unpack_from(datagram)
            payload = datagram[_UDP.size:]
            if ipv4.is_fragmented or ulen != _UDP.size + len(payload):
                udp = UdpHeader(sport, dport, ulen, ucsum)
            else:
                udp = UdpHeader(sport, dport)
        elif proto == IpProto.TCP:
            if len(datagram) < 20 and not ipv4.is_fragmented:
                raise MalformedFrame("truncated TCP header")
            if len(datagram) < 4:
                raise MalformedFrame("truncated TCP header")
            sport, dport = struct.unpack_from("!HH", datagram)
            tcp = TcpPorts(sport, dport)
    return PacketHeaderView(
        timestamp, eth_src, eth_dst, ether_type, ipv4=ipv4, udp=udp, tcp=tcp, payload=payload, trailer=trailer
    )


def _pseudo_header(ip: Ipv4Header, proto: int, length: int) -> bytes:
    return ip.src.packed + ip.dst.packed + struct.pack("!BBH", 0, proto, length)


def serialize_frame(view: PacketHeaderView) -> bytes:
    """Encode a view as an Ethernet frame with freshly computed checksums."""
    eth = _ETH.pack(mac_to_bytes(view.eth_dst), mac_to_bytes(view.eth_src), view.ether_type)

    if view.arp is not None:
        a = view.arp
        body = _ARP.pack(
            a.htype, a.ptype, 6, 4, a.op, mac_to_bytes(a.sha), a.spa.packed, mac_to_bytes(a.tha), a.tpa.packed
        )
        return eth + body + view.trailer

    ip = view.ipv4
    if ip is None:
        return eth + view.payload + view.trailer

    if view.udp is not None:
        u = view.udp
        ulen = u.length if u.length is not None else _UDP.size + len(view.payload)
        if u.checksum is not None:
            csum = u.checksum
        else:
            segment = _UDP.pack(u.src_port, u.dst_port, ulen, 0) + view.payload
            csum = internet_checksum(_pseudo_header(ip, IpProto.UDP, len(segment)) + segment) or 0xFFFF
        datagram = _UDP.pack(u.src_port, u.dst_port, ulen, csum) + view.payload
    elif view.tcp is not None and not ip.is_fragmented and len(view.payload) >= 20:
        seg = bytearray(view.payload)
        struct.pack_into("!HH", seg, 0, view.tcp.src_port, view.tcp.dst_port)
        seg[16:18] = b"\x00\x00"
        csum = internet_checksum(_pseudo_header(ip, IpProto.TCP, len(seg)) + bytes(seg))
        struct.pack_into("!H", seg, 16, csum)
        datagram = bytes(seg)
    elif view.tcp is not None:
        seg = bytearray(view.payload)
        struct.pack_into("!HH", seg, 0, view.tcp.src_port, view.tcp.dst_port)
        datagram = bytes(seg)
    else:
        datagram = view.payload

    ihl = 20 + len(ip.options)
    if ihl % 4:
        raise ValueError("IPv4 options must pad the header to a multiple of 4 bytes")
    header = bytearray(
        _IPV4.pack(
            0x40 | (ihl // 4),
            ip.tos,
            ihl + len(datagram),
            ip.identification,
            ip.flags_fragment,
            ip.ttl,
            ip.protocol,
            0,
            ip.src.packed,
            ip.dst.packed,
        )
        + ip.options
    )
    struct.pack_into("!H", header, 10, internet_checksum(bytes(header)))
    return eth + bytes(header) + datagram + view.trailer


def flow_key_of(view: PacketHeaderView) -> FlowKey:
    """Unidirectional 5-tuple of a view; ports are 0 without a UDP/TCP header."""
    ip = view.ipv4
    if ip is None:
        return FlowKey(ZERO_IP, ZERO_IP, 0, 0, 0)
    return FlowKey(ip.src, ip.dst, ip.protocol, view.src_port, view.dst_port)
