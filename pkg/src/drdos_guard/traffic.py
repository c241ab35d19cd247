"""Synthetic backbone traffic, reflective-attack injection and pcap I/O.

Benign traffic is built from per-second packet budgets that follow a
sinusoidal day curve inside the configured packet-rate and UDP-share
ranges.  Each second's UDP budget is cut into flows with heavy-tailed
sizes; source ports and destination addresses come from Zipf-like pools.

Every chunk of ``chunk_seconds`` is drawn from its own seeded generator,
so the same flow records feed two consumers that agree exactly:
``gen_benign`` expands them into packets, and ``benign_frame_stats``
aggregates them straight into per-frame histogram statistics for
parameter sweeps over days of traffic.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import heapq
import math
from dataclasses import dataclass
from ipaddress import IPv4Address, IPv4Network
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Optional, Sequence, Union

import numpy as np

from .detection import FrameSeries, entropy_from_stats, xlog2x
from .packet import ETH_TYPE_IPV4, IpProto, Ipv4Header, PacketHeaderView, TcpPorts, UdpHeader, flow_key_of

# Service ports that head the benign source-port ranking.
WELL_KNOWN_UDP_PORTS = (443, 53, 123, 4500, 500, 1900, 5353, 137, 161, 3478, 19302, 514, 1194, 51820, 5060, 11211)
BENIGN_IP_SPACE = IPv4Network("10.0.0.0/8")
REMOTE_IP_SPACE = IPv4Network("100.64.0.0/10")
REFLECTOR_IP_SPACE = IPv4Network("172.16.0.0/12")
TARGET_BLOCK = IPv4Network("10.255.255.8/29")
EPHEMERAL_LOW = 1024

UPSTREAM_MAC = "02:00:00:00:00:01"
DOWNSTREAM_MAC = "02:00:00:00:00:02"


class Label(enum.Enum):
    BENIGN = "benign"
    ATTACK = "attack"
    TARGET_REQUEST = "target-request"
    LEGIT_RESPONSE = "legit-response"
    INCOMING_REQUEST = "incoming-request"
    OUTGOING_RESPONSE = "outgoing-response"
    ARP = "arp"
    UNKNOWN = "unknown"


class LabeledPacket(NamedTuple):
    view: PacketHeaderView
    label: Label


@dataclass(frozen=True)
class BenignProfile:
    """Shape of the benign traffic.

    ``max_flow_packets`` defaults to a quarter of the smallest per-second
    UDP budget so that no single flow can fill a second on its own.
    """

    duration: float = 300.0
    pps_range: tuple[float, float] = (500.0, 1500.0)
    udp_share_range: tuple[float, float] = (0.06, 0.09)
    port_population: int = 30000
    ip_population: int = 50000
    seed: int = 0
    port_zipf: float = 0.75
    ip_zipf: float = 0.8
    flow_size_tail: float = 1.8
    max_flow_packets: Optional[int] = None
    tcp_flow_size_tail: float = 1.2
    tcp_max_flow_packets: int = 200
    day_seconds: float = 86400.0
    phase: float = 0.0
    jitter: float = 0.01
    chunk_seconds: int = 3600
    target_block_rank: int = 64

    def __post_init__(self) -> None:
        lo, hi = self.pps_range
        ulo, uhi = self.udp_share_range
        if not 0 < lo <= hi:
            raise ValueError("packet rate range must satisfy 0 < low <= high")
        if not 0 < ulo <= uhi < 1:
            raise ValueError("UDP share range must satisfy 0 < low <= high < 1")
        if not 1 <= self.port_population <= 65535:
            raise ValueError("port population must be in 1..65535")
        if self.ip_population < self.target_block_rank + TARGET_BLOCK.num_addresses:
            raise ValueError("IP population too small to hold the target block")
        if self.chunk_seconds < 1 or self.duration <= 0:
            raise ValueError("chunk length and duration must be positive")

    @property
    def flow_cap(self) -> int:
        if self.max_flow_packets is not None:
            return self.max_flow_packets
        return max(1, int(math.ceil(self.pps_range[0]) * self.udp_share_range[0]) // 4)

    @property
    def n_seconds(self) -> int:
        return int(math.ceil(self.duration))

    def target_ips(self, s: int = 1) -> tuple[IPv4Address, ...]:
        """The first ``s`` addresses of the /29 the pools reserve for victims."""
        if not 1 <= s <= TARGET_BLOCK.num_addresses:
            raise ValueError(f"subnet size {s} outside 1..{TARGET_BLOCK.num_addresses}")
        return tuple(TARGET_BLOCK[i] for i in range(s))

    def scaled(self, factor: float, **changes) -> "BenignProfile":
        lo, hi = self.pps_range
        return dataclasses.replace(self, pps_range=(lo * factor, hi * factor), **changes)


# Backbone links of the kind modelled here carry 50k-150k pps; the defaults run at 1/100 of that.
DESK_PROFILE = BenignProfile()
SWEEP_PROFILE = BenignProfile(duration=48 * 3600.0, pps_range=(5000.0, 15000.0))


def _zipf_ranks(rng: np.random.Generator, n: int, population: int, exponent: float) -> np.ndarray:
    """Draw ranks 0..population-1 with P(rank k) roughly proportional to (k+1)^-exponent."""
    if population == 1:
        return np.zeros(n, dtype=np.int64)
    u = rng.random(n)
    if exponent == 1.0:
        x = np.exp(u * math.log(population + 1))
    else:
        a = 1.0 - exponent
        x = (u * ((population + 1) ** a - 1.0) + 1.0) ** (1.0 / a)
    return np.minimum(np.floor(x).astype(np.int64) - 1, population - 1)


def zipf_rank_pmf(population: int, exponent: float) -> np.ndarray:
    """Exact rank probabilities of ``_zipf_ranks``."""
    k = np.arange(population + 1, dtype=float) + 1.0
    if exponent == 1.0:
        cdf = np.log(k) / math.log(population + 1)
    else:
        a = 1.0 - exponent
        cdf = (k ** a - 1.0) / ((population + 1) ** a - 1.0)
    return np.diff(cdf)


def _flow_sizes(rng: np.random.Generator, n: int, tail: float, cap: int) -> np.ndarray:
    """Discrete Pareto sizes, P(K >= k) = k^-tail, capped."""
    return np.minimum(np.floor(rng.random(n) ** (-1.0 / tail)).astype(np.int64), cap)


@dataclass(frozen=True)
class TrafficPools:
    ports: np.ndarray  # rank -> port number
    ips: np.ndarray  # rank -> IPv4 as int
    target_ranks: tuple[int, ...]


@functools.lru_cache(maxsize=16)
def pools_for(profile: BenignProfile) -> TrafficPools:
    rng = np.random.default_rng([profile.seed, 0xB0015])
    head = [p for p in WELL_KNOWN_UDP_PORTS][: profile.port_population]
    rest = np.setdiff1d(np.arange(EPHEMERAL_LOW, 65536), head)
    tail = rng.choice(rest, size=profile.port_population - len(head), replace=False)
    ports = np.concatenate([np.array(head, dtype=np.int64), tail.astype(np.int64)])

    base = int(BENIGN_IP_SPACE.network_address)
    reserved = {int(a) - base for a in TARGET_BLOCK}
    picks = rng.choice(BENIGN_IP_SPACE.num_addresses - 2, size=profile.ip_population + 16, replace=False) + 1
    picks = [int(p) for p in picks if int(p) not in reserved][: profile.ip_population]
    ips = np.array(picks, dtype=np.int64) + base
    r0 = profile.target_block_rank
    ips[r0:r0 + TARGET_BLOCK.num_addresses] = [int(a) for a in TARGET_BLOCK]
    return TrafficPools(ports, ips, tuple(range(r0, r0 + TARGET_BLOCK.num_addresses)))


@dataclass
class ChunkRecords:
    """UDP flow records and per-second packet budgets for one chunk."""

    first_second: int
    udp_per_second: np.ndarray
    tcp_per_second: np.ndarray
    second: np.ndarray  # relative to first_second
    packets: np.ndarray
    port_rank: np.ndarray
    dst_rank: np.ndarray


def _per_second_budgets(profile: BenignProfile, rng: np.random.Generator, seconds: np.ndarray):
    lo, hi = profile.pps_range
    ulo, uhi = profile.udp_share_range
    angle = 2 * math.pi * seconds / profile.day_seconds + profile.phase
    pps = (lo + hi) / 2 + (hi - lo) / 2 * np.sin(angle)
    total = np.round(pps * (1.0 + profile.jitter * rng.standard_normal(len(seconds))))
    total = np.clip(total, math.ceil(lo), math.floor(hi)).astype(np.int64)
    share = (ulo + uhi) / 2 + (uhi - ulo) / 2 * np.sin(angle + 1.3)
    udp = np.round(share * total)
    udp = np.clip(udp, np.ceil(ulo * total), np.floor(uhi * total)).astype(np.int64)
    return udp, total - udp


def _segment(sizes_fn, budgets: np.ndarray):
    """Cut the concatenated per-second budgets into flows.

    Flow boundaries come from cumulative flow sizes; second boundaries also
    cut a flow, so every record lies inside one second.
    """
    total = int(budgets.sum())
    if total == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    bounds = np.cumsum(budgets)
    cuts = [np.cumsum(sizes_fn(max(16, total)))]
    while cuts[-1][-1] < total:
        cuts.append(cuts[-1][-1] + np.cumsum(sizes_fn(max(16, total // 2))))
    flow_ends = np.concatenate(cuts)
    ends = np.union1d(flow_ends[flow_ends < total], bounds)
    packets = np.diff(np.concatenate([[0], ends]))
    second = np.searchsorted(bounds, ends, side="left")
    return second.astype(np.int64), packets.astype(np.int64)


def chunk_records(profile: BenignProfile, chunk: int) -> ChunkRecords:
    rng = np.random.default_rng([profile.seed, chunk, 0])
    cs = profile.chunk_seconds
    seconds = np.arange(chunk * cs, (chunk + 1) * cs)
    udp, tcp = _per_second_budgets(profile, rng, seconds)
    cap = profile.flow_cap
    second, packets = _segment(lambda n: _flow_sizes(rng, n, profile.flow_size_tail, cap), udp)
    n = len(packets)
    port_rank = _zipf_ranks(rng, n, profile.port_population, profile.port_zipf)
    dst_rank = _zipf_ranks(rng, n, profile.ip_population, profile.ip_zipf)
    return ChunkRecords(chunk * cs, udp, tcp, second, packets, port_rank, dst_rank)


def _chunks_for(profile: BenignProfile) -> range:
    return range(int(math.ceil(profile.n_seconds / profile.chunk_seconds)))


# --------------------------------------------------------------------------
# packet-level generation


def gen_benign(profile: BenignProfile) -> Iterator[LabeledPacket]:
    """Timestamp-ordered benign packets, deterministic for a given profile."""
    pools = pools_for(profile)
    ip_objs: dict[int, IPv4Address] = {}

    def ip(v: int) -> IPv4Address:
        a = ip_objs.get(v)
        if a is None:
            a = ip_objs[v] = IPv4Address(v)
        return a

    remote_base = int(REMOTE_IP_SPACE.network_address) + 1
    remote_span = REMOTE_IP_SPACE.num_addresses - 2
    for chunk in _chunks_for(profile):
        rec = chunk_records(profile, chunk)
        aux = np.random.default_rng([profile.seed, chunk, 1])
        n = len(rec.packets)
        src_ip = aux.integers(0, remote_span, n) + remote_base
        dst_port = aux.integers(EPHEMERAL_LOW, 65536, n)
        tcp_second, tcp_packets = _segment(
            lambda k: _flow_sizes(aux, k, profile.tcp_flow_size_tail, profile.tcp_max_flow_packets), rec.tcp_per_second
        )
        m = len(tcp_packets)
        tcp_client = aux.integers(0, remote_span, m) + remote_base
        tcp_server = pools.ips[_zipf_ranks(aux, m, profile.ip_population, profile.ip_zipf)]
        tcp_sport = aux.integers(EPHEMERAL_LOW, 65536, m)
        tcp_dport = np.where(aux.random(m) < 0.8, 443, 80)
        outbound = aux.random(m) < 0.5

        udp_pkt_rec = np.repeat(np.arange(n), rec.packets)
        udp_ts = rec.second[udp_pkt_rec] + aux.random(len(udp_pkt_rec))
        tcp_pkt_rec = np.repeat(np.arange(m), tcp_packets)
        tcp_ts = tcp_second[tcp_pkt_rec] + aux.random(len(tcp_pkt_rec))

        ts = np.concatenate([udp_ts, tcp_ts]) + rec.first_second
        kind = np.concatenate([np.zeros(len(udp_ts), np.int8), np.ones(len(tcp_ts), np.int8)])
        idx = np.concatenate([udp_pkt_rec, tcp_pkt_rec])
        order = np.argsort(ts, kind="stable")
        limit = profile.duration
        # records are in second order; only those starting before the end matter
        rel_end = math.ceil(limit - rec.first_second)
        n_live = int(np.searchsorted(rec.second, rel_end, side="left"))
        m_live = int(np.searchsorted(tcp_second, rel_end, side="left"))
        udp_tuples = [
            (ip(int(src_ip[i])), int(pools.ports[rec.port_rank[i]]), ip(int(pools.ips[rec.dst_rank[i]])), int(dst_port[i]))
            for i in range(n_live)
        ]
        tcp_tuples = []
        for j in range(m_live):
            client, server = ip(int(tcp_client[j])), ip(int(tcp_server[j]))
            if outbound[j]:
                tcp_tuples.append((client, int(tcp_sport[j]), server, int(tcp_dport[j])))
            else:
                tcp_tuples.append((server, int(tcp_dport[j]), client, int(tcp_sport[j])))
        for o in order:
            t = float(ts[o])
            if t >= limit:
                break
            if kind[o] == 0:
                s, sp, d, dp = udp_tuples[idx[o]]
                view = PacketHeaderView(
                    t, UPSTREAM_MAC, DOWNSTREAM_MAC, ETH_TYPE_IPV4,
                    ipv4=Ipv4Header(s, d, IpProto.UDP), udp=UdpHeader(sp, dp),
                )
            else:
                s, sp, d, dp = tcp_tuples[idx[o]]
                view = PacketHeaderView(
                    t, UPSTREAM_MAC, DOWNSTREAM_MAC, ETH_TYPE_IPV4,
                    ipv4=Ipv4Header(s, d, IpProto.TCP), tcp=TcpPorts(sp, dp),
                    payload=_tcp_header(sp, dp),
                )
            yield LabeledPacket(view, Label.BENIGN)


@functools.lru_cache(maxsize=4096)
def _tcp_header(sport: int, dport: int) -> bytes:
    return sport.to_bytes(2, "big") + dport.to_bytes(2, "big") + bytes(8) + b"\x50\x10\xff\xff" + bytes(4)


@dataclass(frozen=True)
class AttackSpec:
    """A reflective attack: ``magnitude`` attack flows per benign UDP flow.

    ``ramp`` seconds after ``start`` the magnitude grows linearly from 0;
    with ``worst_case`` the benign flows that share the attack port or go to
    a target are removed while the attack runs.
    """

    magnitude: float
    attack_port: int
    targets: tuple[IPv4Address, ...]
    start: float
    stop: float
    reflector_pool: int = 10000
    packets_per_flow: int = 1
    worst_case: bool = True
    ramp: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.magnitude < 0:
            raise ValueError("attack magnitude must be non-negative")
        if not self.targets:
            raise ValueError("an attack needs at least one target")
        if not 1 <= self.attack_port <= 65535:
            raise ValueError("attack port outside 1..65535")
        object.__setattr__(self, "targets", tuple(IPv4Address(t) for t in self.targets))

    def magnitude_at(self, t: float) -> float:
        if self.ramp > 0 and t < self.start + self.ramp:
            return self.magnitude * max(0.0, t - self.start) / self.ramp
        return self.magnitude


def _frames_of(stream: Iterable, frame_length: float, origin: float):
    """Group a timestamp-ordered stream into (frame index, items) pairs."""
    current, items = None, []
    for item in stream:
        idx = math.floor((item.view.timestamp - origin) / frame_length)
        if current is None:
            current = idx
        if idx != current:
            yield current, items
            current, items = idx, []
        items.append(item)
    if current is not None:
        yield current, items


def inject_attack(
    benign: Iterable[LabeledPacket], spec: AttackSpec, frame_length: float, origin: float = 0.0
) -> Iterator[LabeledPacket]:
    """Merge attack flows into a benign stream, frame by frame.

    A frame overlapping the attack window receives
    ``round(a * benign UDP flows in the frame)`` fresh attack flows, each a
    distinct 5-tuple from a random reflector on the attack port to a target
    port, timed uniformly inside the overlap.  Targets are dealt round-robin
    in shuffled order, so each receives an equal share up to rounding.
    """
    rng = np.random.default_rng([spec.seed, 0xA77AC])
    span = REFLECTOR_IP_SPACE.num_addresses - 2
    reflectors = rng.choice(span, size=min(spec.reflector_pool, span), replace=False) + int(
        REFLECTOR_IP_SPACE.network_address
    ) + 1
    targets = set(spec.targets)
    for idx, items in _frames_of(benign, frame_length, origin):
        f_start = origin + idx * frame_length
        lo, hi = max(f_start, spec.start), min(f_start + frame_length, spec.stop)
        if spec.magnitude == 0 or lo >= hi:
            yield from items
            continue
        keys = {flow_key_of(p.view) for p in items}
        udp_flows = sum(1 for k in keys if k.protocol == IpProto.UDP and (k.src_port or k.dst_port))
        n_attack = int(round(spec.magnitude_at(lo) * udp_flows))
        if spec.worst_case:
            def keep(p: LabeledPacket) -> bool:
                v = p.view
                if not lo <= v.timestamp < hi or v.udp is None:
                    return True
                return v.udp.src_port != spec.attack_port and v.ipv4.dst not in targets

            items = [p for p in items if keep(p)]
        dealt = [spec.targets[i % len(spec.targets)] for i in range(n_attack)]
        rng.shuffle(dealt)
        attack = []
        for dst in dealt:
            while True:
                src = IPv4Address(int(reflectors[rng.integers(len(reflectors))]))
                dport = int(rng.integers(EPHEMERAL_LOW, 65536))
                key = (src, dst, IpProto.UDP.value, spec.attack_port, dport)
                if key not in keys:
                    keys.add(key)
                    break
            for t in np.sort(rng.uniform(lo, hi, spec.packets_per_flow)):
                view = PacketHeaderView(
                    float(t), UPSTREAM_MAC, DOWNSTREAM_MAC, ETH_TYPE_IPV4,
                    ipv4=Ipv4Header(src, dst, IpProto.UDP), udp=UdpHeader(spec.attack_port, dport),
                )
                attack.append(LabeledPacket(view, Label.ATTACK))
        attack.sort(key=lambda p: p.view.timestamp)
        yield from heapq.merge(items, attack, key=lambda p: p.view.timestamp)


# --------------------------------------------------------------------------
# frame-level synthesis for sweeps


@dataclass
class _ProbeStats:
    s_flow: np.ndarray
    s_pkt: np.ndarray
    probe_flow: np.ndarray  # (frames, probes)
    probe_pkt: np.ndarray


def _frame_hist_stats(frame: np.ndarray, n_frames: int, keys: np.ndarray, n_keys: int, packets: np.ndarray,
                      probes: Sequence[int]) -> _ProbeStats:
    """Per-frame sum(c log2 c) of key histograms, plus counts of probe keys."""
    probes = np.asarray(probes, dtype=np.int64)
    if n_frames * n_keys <= 8_000_000:
        flat = frame * n_keys + keys
        cf = np.bincount(flat, minlength=n_frames * n_keys).reshape(n_frames, n_keys)
        cp = np.bincount(flat, weights=packets, minlength=n_frames * n_keys).reshape(n_frames, n_keys)
        return _ProbeStats(xlog2x(cf).sum(axis=1), xlog2x(cp).sum(axis=1), cf[:, probes].astype(float), cp[:, probes])
    flat = frame * n_keys + keys
    order = np.argsort(flat, kind="stable")
    sk = flat[order]
    starts = np.flatnonzero(np.concatenate([[True], sk[1:] != sk[:-1]])) if len(sk) else np.zeros(0, np.int64)
    cf = np.diff(np.append(starts, len(sk))).astype(float)
    cp = np.add.reduceat(packets[order], starts).astype(float) if len(sk) else np.zeros(0)
    bins = sk[starts]
    bin_frame = bins // n_keys
    s_flow = np.bincount(bin_frame, weights=xlog2x(cf), minlength=n_frames)
    s_pkt = np.bincount(bin_frame, weights=xlog2x(cp), minlength=n_frames)
    pf = np.zeros((n_frames, len(probes)))
    pp = np.zeros((n_frames, len(probes)))
    bin_key = bins % n_keys
    for j, p in enumerate(probes):
        hit = bin_key == p
        pf[bin_frame[hit], j] = cf[hit]
        pp[bin_frame[hit], j] = cp[hit]
    return _ProbeStats(s_flow, s_pkt, pf, pp)


@dataclass
class BenignFrameStats:
    """Sufficient statistics of benign frames for analytic attack injection."""

    frame_length: float
    udp_flows: np.ndarray
    udp_pkts: np.ndarray
    tcp_pkts: np.ndarray
    port_s_flow: np.ndarray
    port_s_pkt: np.ndarray
    port_probe_flow: np.ndarray  # count at the attack port
    port_probe_pkt: np.ndarray
    dst_s_flow: np.ndarray
    dst_s_pkt: np.ndarray
    dst_probe_flow: np.ndarray  # (frames, 8): counts at the target block
    dst_probe_pkt: np.ndarray

    def series(self) -> FrameSeries:
        n = len(self.udp_flows)
        return FrameSeries(
            frame_length=self.frame_length,
            start=np.arange(n) * self.frame_length,
            udp_flows=self.udp_flows,
            tcp_flows=np.full(n, -1, dtype=np.int64),
            udp_pkts=self.udp_pkts,
            tcp_pkts=self.tcp_pkts,
            h_srcport_flow=entropy_from_stats(self.udp_flows, self.port_s_flow),
            h_srcport_pkt=entropy_from_stats(self.udp_pkts, self.port_s_pkt),
            h_dstip_flow=entropy_from_stats(self.udp_flows, self.dst_s_flow),
            h_dstip_pkt=entropy_from_stats(self.udp_pkts, self.dst_s_pkt),
        )

    def attacked(self, magnitude: float, subnet_size: int = 1, packets_per_flow: int = 1,
                 worst_case: bool = True) -> FrameSeries:
        """Frames with an attack of the given magnitude present in every frame.

        Worst case is applied per metric: the source-port histogram loses
        the benign attack-port flows and the destination histogram loses
        the benign flows to the targets.
        """
        n_attack = np.round(magnitude * self.udp_flows)
        att_pkts = n_attack * packets_per_flow
        wc = 1.0 if worst_case else 0.0

        pf, pp = self.port_probe_flow[:, 0] * wc, self.port_probe_pkt[:, 0] * wc
        if worst_case:
            # the attack bin replaces the benign attack-port bin
            port_sf = self.port_s_flow - xlog2x(pf) + xlog2x(n_attack)
            port_sp = self.port_s_pkt - xlog2x(pp) + xlog2x(att_pkts)
        else:
            pf0, pp0 = self.port_probe_flow[:, 0], self.port_probe_pkt[:, 0]
            port_sf = self.port_s_flow - xlog2x(pf0) + xlog2x(pf0 + n_attack)
            port_sp = self.port_s_pkt - xlog2x(pp0) + xlog2x(pp0 + att_pkts)
        h_port_f = entropy_from_stats(self.udp_flows - pf + n_attack, port_sf)
        h_port_p = entropy_from_stats(self.udp_pkts - pp + att_pkts, port_sp)

        share_base = np.floor(n_attack / subnet_size)
        extra = n_attack - share_base * subnet_size
        dst_sf = self.dst_s_flow.copy()
        dst_sp = self.dst_s_pkt.copy()
        removed_f = np.zeros(len(n_attack))
        removed_p = np.zeros(len(n_attack))
        for i in range(subnet_size):
            a_i = share_base + (i < extra)
            cf, cp = self.dst_probe_flow[:, i], self.dst_probe_pkt[:, i]
            if worst_case:
                dst_sf += xlog2x(a_i) - xlog2x(cf)
                dst_sp += xlog2x(a_i * packets_per_flow) - xlog2x(cp)
                removed_f += cf
                removed_p += cp
            else:
                dst_sf += xlog2x(cf + a_i) - xlog2x(cf)
                dst_sp += xlog2x(cp + a_i * packets_per_flow) - xlog2x(cp)
        h_dst_f = entropy_from_stats(self.udp_flows - removed_f + n_attack, dst_sf)
        h_dst_p = entropy_from_stats(self.udp_pkts - removed_p + att_pkts, dst_sp)

        n = len(n_attack)
        return FrameSeries(
            frame_length=self.frame_length,
            start=np.arange(n) * self.frame_length,
            udp_flows=(self.udp_flows + n_attack).astype(np.int64),
            tcp_flows=np.full(n, -1, dtype=np.int64),
            udp_pkts=(self.udp_pkts + att_pkts).astype(np.int64),
            tcp_pkts=self.tcp_pkts,
            h_srcport_flow=h_port_f,
            h_srcport_pkt=h_port_p,
            h_dstip_flow=h_dst_f,
            h_dstip_pkt=h_dst_p,
        )


def benign_frame_stats(
    profile: BenignProfile, frame_lengths: Sequence[int], attack_port: int = 53
) -> dict[int, BenignFrameStats]:
    """Aggregate the profile's flow records into frames of each length.

    Only complete frames inside ``profile.duration`` are returned.  Every
    frame length must divide ``profile.chunk_seconds``.  Each flow record is
    one flow (records never share a 5-tuple by construction of the packet
    expansion, up to random collisions of the drawn addresses and ports).
    """
    cs = profile.chunk_seconds
    for l in frame_lengths:
        if int(l) != l or l < 1 or cs % int(l):
            raise ValueError(f"frame length {l} must be a whole number of seconds dividing {cs}")
    pools = pools_for(profile)
    hits = np.flatnonzero(pools.ports == attack_port)
    port_probe = [int(hits[0])] if len(hits) else [profile.port_population]
    n_port_keys = profile.port_population + 1
    parts: dict[int, list] = {int(l): [] for l in frame_lengths}
    for chunk in _chunks_for(profile):
        rec = chunk_records(profile, chunk)
        for l in parts:
            n_frames = cs // l
            frame = rec.second // l
            port = _frame_hist_stats(frame, n_frames, rec.port_rank, n_port_keys, rec.packets, port_probe)
            dst = _frame_hist_stats(frame, n_frames, rec.dst_rank, profile.ip_population, rec.packets,
                                    pools.target_ranks)
            parts[l].append(
                (
                    np.bincount(frame, minlength=n_frames),
                    np.bincount(frame, weights=rec.packets, minlength=n_frames),
                    rec.tcp_per_second.reshape(n_frames, l).sum(axis=1),
                    port,
                    dst,
                )
            )
    out = {}
    for l, chunks in parts.items():
        n_frames = int(profile.duration // l)
        cat = lambda getter: np.concatenate([getter(c) for c in chunks])[:n_frames]  # noqa: E731
        out[l] = BenignFrameStats(
            frame_length=float(l),
            udp_flows=cat(lambda c: c[0]).astype(np.int64),
            udp_pkts=cat(lambda c: c[1]).astype(np.int64),
            tcp_pkts=cat(lambda c: c[2]).astype(np.int64),
            port_s_flow=cat(lambda c: c[3].s_flow),
            port_s_pkt=cat(lambda c: c[3].s_pkt),
            port_probe_flow=cat(lambda c: c[3].probe_flow),
            port_probe_pkt=cat(lambda c: c[3].probe_pkt),
            dst_s_flow=cat(lambda c: c[4].s_flow),
            dst_s_pkt=cat(lambda c: c[4].s_pkt),
            dst_probe_flow=cat(lambda c: c[4].probe_flow),
            dst_probe_pkt=cat(lambda c: c[4].probe_pkt),
        )
    return out


# --------------------------------------------------------------------------
# profile files


_PROFILE_KEYS = {
    "duration": float,
    "pps_low": float,
    "pps_high": float,
    "udp_share_low": float,
    "udp_share_high": float,
    "port_population": int,
    "ip_population": int,
    "seed": int,
    "port_zipf": float,
    "ip_zipf": float,
    "flow_size_tail": float,
    "max_flow_packets": int,
    "chunk_seconds": int,
    "jitter": float,
}


def profile_to_text(profile: BenignProfile) -> str:
    values = {
        "duration": profile.duration,
        "pps_low": profile.pps_range[0],
        "pps_high": profile.pps_range[1],
        "udp_share_low": profile.udp_share_range[0],
        "udp_share_high": profile.udp_share_range[1],
        "port_population": profile.port_population,
        "ip_population": profile.ip_population,
        "seed": profile.seed,
        "port_zipf": profile.port_zipf,
        "ip_zipf": profile.ip_zipf,
        "flow_size_tail": profile.flow_size_tail,
        "max_flow_packets": profile.flow_cap,
        "chunk_seconds": profile.chunk_seconds,
        "jitter": profile.jitter,
    }
    return "".join(f"{k}={v}\n" for k, v in values.items())


def parse_profile(text: str, base: BenignProfile = DESK_PROFILE) -> BenignProfile:
    kv = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _PROFILE_KEYS:
            raise ValueError(f"unknown profile key {key!r}")
        kv[key] = _PROFILE_KEYS[key](value.strip())
    changes = {k: v for k, v in kv.items() if k in {f.name for f in dataclasses.fields(BenignProfile)}}
    if "pps_low" in kv or "pps_high" in kv:
        changes["pps_range"] = (kv.get("pps_low", base.pps_range[0]), kv.get("pps_high", base.pps_range[1]))
    if "udp_share_low" in kv or "udp_share_high" in kv:
        changes["udp_share_range"] = (
            kv.get("udp_share_low", base.udp_share_range[0]),
            kv.get("udp_share_high", base.udp_share_range[1]),
        )
    return dataclasses.replace(base, **changes)


def load_profile(path: Union[str, Path], base: BenignProfile = DESK_PROFILE) -> BenignProfile:
    return parse_profile(Path(path).read_text(), base)
