"""Frame-based entropy detection of reflective attacks.

Traffic is cut into half-open frames of ``l`` seconds.  Per frame we keep
UDP source-port and destination-IP histograms, counted per flow and per
packet, plus the UDP share of packets.  A classifier compares the combined
value of the ``e`` most recent frames with a single reference frame ``g``
frames before them.  Entropies are Shannon entropies in bits.

The source-port classifier confirms an attack; the destination-IP and
ratio classifiers are indicators and can optionally pre-screen.
"""

from __future__ import annotations

import csv
import enum
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from ipaddress import IPv4Address
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import InsufficientHistory, UnorderedInput
from .packet import IpProto, PacketHeaderView, flow_key_of


def shannon_entropy(histogram: Mapping) -> float:
    """H = -sum(p log2 p) over keys with a positive count; 0 when empty."""
    total = sum(c for c in histogram.values() if c > 0)
    if total == 0:
        return 0.0
    h = 0.0
    for c in histogram.values():
        if c > 0:
            p = c / total
            h -= p * math.log2(p)
    return h


def _xlog2x(c: float) -> float:
    return c * math.log2(c) if c > 0 else 0.0


class EntropyAccumulator:
    """Histogram that keeps its entropy up to date as counts arrive.

    Tracks N = sum(c) and S = sum(c log2 c); H = log2 N - S / N.
    """

    __slots__ = ("counts", "total", "_s")

    def __init__(self) -> None:
        self.counts: Counter = Counter()
        self.total = 0
        self._s = 0.0

    def add(self, key, n: int = 1) -> None:
        if n <= 0:
            return
        c = self.counts[key]
        self._s += _xlog2x(c + n) - _xlog2x(c)
        self.counts[key] = c + n
        self.total += n

    @property
    def entropy(self) -> float:
        if self.total == 0 or len(self.counts) == 1:
            return 0.0
        h = math.log2(self.total) - self._s / self.total
        return min(max(h, 0.0), math.log2(len(self.counts)))


def entropy_from_stats(total, sum_xlogx):
    """Vectorized H = log2 N - S / N with H = 0 where N = 0."""
    total = np.asarray(total, dtype=float)
    sum_xlogx = np.asarray(sum_xlogx, dtype=float)
    out = np.zeros(np.broadcast(total, sum_xlogx).shape)
    pos = total > 0
    out[pos] = np.log2(total[pos]) - sum_xlogx[pos] / total[pos]
    return np.maximum(out, 0.0)


def xlog2x(counts):
    c = np.asarray(counts, dtype=float)
    out = np.zeros_like(c)
    pos = c > 0
    out[pos] = c[pos] * np.log2(c[pos])
    return out


def dst_ip_aggregate(ip: IPv4Address, s: int = 1) -> IPv4Address:
    """Histogram key for a destination address.

    The subnet size only shapes how attack traffic is spread over targets,
    so the key is the full address for every ``s``.
    """
    if s < 1 or s & (s - 1):
        raise ValueError(f"subnet size {s} is not a power of two")
    return ip


class Base(enum.Enum):
    FLOWS = "flows"
    PACKETS = "packets"


class Combiner(enum.Enum):
    MEAN = "mean"
    MEDIAN = "median"


def combine(values: Sequence[float], combiner: Union[Combiner, str] = Combiner.MEAN) -> float:
    if len(values) == 0:
        raise ValueError("combine needs at least one value")
    if Combiner(combiner) is Combiner.MEAN:
        return float(np.mean(values))
    return float(np.median(values))


def classify_entropy(reference, current, threshold):
    """Fires when the entropy fell by at least |threshold| (threshold < 0)."""
    return (current - reference) <= threshold


def classify_ratio(reference, current, threshold):
    """Fires when the UDP share rose by at least ``threshold``."""
    return (current - reference) >= threshold


@dataclass
class FrameStats:
    index: int
    start: float
    length: float
    udp_flow_count: int = 0
    tcp_flow_count: int = 0
    udp_packet_count: int = 0
    tcp_packet_count: int = 0
    src_port_flows: Counter = field(default_factory=Counter)
    src_port_packets: Counter = field(default_factory=Counter)
    dst_ip_flows: Counter = field(default_factory=Counter)
    dst_ip_packets: Counter = field(default_factory=Counter)
    port_dst_flows: Counter = field(default_factory=Counter)
    entropy_src_port_flow: float = 0.0
    entropy_src_port_pkt: float = 0.0
    entropy_dst_ip_flow: float = 0.0
    entropy_dst_ip_pkt: float = 0.0

    @property
    def end(self) -> float:
        return self.start + self.length

    @property
    def udp_ratio(self) -> float:
        return udp_tcp_ratio(self)

    def entropy_src_port(self, base: Union[Base, str] = Base.FLOWS) -> float:
        return self.entropy_src_port_flow if Base(base) is Base.FLOWS else self.entropy_src_port_pkt

    def entropy_dst_ip(self, base: Union[Base, str] = Base.FLOWS) -> float:
        return self.entropy_dst_ip_flow if Base(base) is Base.FLOWS else self.entropy_dst_ip_pkt


def udp_tcp_ratio(frame: FrameStats) -> float:
    total = frame.udp_packet_count + frame.tcp_packet_count
    return frame.udp_packet_count / total if total else 0.0


class _FrameBuilder:
    def __init__(self, index: int, start: float, length: float) -> None:
        self.frame = FrameStats(index, start, length)
        self.flows: set = set()
        self.acc = {name: EntropyAccumulator() for name in ("spf", "spp", "dif", "dip")}

    def add(self, view: PacketHeaderView) -> None:
        ip = view.ipv4
        if ip is None:
            return
        f = self.frame
        if ip.protocol == IpProto.TCP:
            f.tcp_packet_count += 1
            key = flow_key_of(view)
            if key not in self.flows:
                self.flows.add(key)
                f.tcp_flow_count += 1
            return
        if ip.protocol != IpProto.UDP:
            return
        f.udp_packet_count += 1
        if view.udp is None:
            return
        port, dst = view.udp.src_port, ip.dst
        self.acc["spp"].add(port)
        self.acc["dip"].add(dst)
        key = flow_key_of(view)
        if key not in self.flows:
            self.flows.add(key)
            f.udp_flow_count += 1
            self.acc["spf"].add(port)
            self.acc["dif"].add(dst)
            f.port_dst_flows[(port, dst)] += 1

    def finish(self) -> FrameStats:
        f, a = self.frame, self.acc
        f.src_port_flows = a["spf"].counts
        f.src_port_packets = a["spp"].counts
        f.dst_ip_flows = a["dif"].counts
        f.dst_ip_packets = a["dip"].counts
        f.entropy_src_port_flow = a["spf"].entropy
        f.entropy_src_port_pkt = a["spp"].entropy
        f.entropy_dst_ip_flow = a["dif"].entropy
        f.entropy_dst_ip_pkt = a["dip"].entropy
        return f


class FrameAssembler:
    """Online frame folding: push packets, collect finished frames.

    Frame i covers [origin + i*l, origin + (i+1)*l).  Empty frames between
    packets are emitted.  ``origin`` defaults to the first timestamp rounded
    down to a multiple of the frame length.
    """

    def __init__(self, frame_length: float, origin: Optional[float] = None) -> None:
        if frame_length <= 0:
            raise ValueError("frame length must be positive")
        self.frame_length = frame_length
        self.origin = None if origin is None else float(origin)
        self._builder: Optional[_FrameBuilder] = None
        self._last_ts = -math.inf

    def _open(self, index: int) -> None:
        self._builder = _FrameBuilder(index, self.origin + index * self.frame_length, self.frame_length)

    def advance(self, ts: float) -> list[FrameStats]:
        """Close every frame that ends at or before ``ts``."""
        if self.origin is None:
            self.origin = float(math.floor(ts / self.frame_length) * self.frame_length)
        idx = math.floor((ts - self.origin) / self.frame_length)
        if idx < 0:
            raise UnorderedInput(f"timestamp {ts} precedes the frame origin {self.origin}")
        if self._builder is None:
            self._open(0)
        done = []
        while self._builder.frame.index < idx:
            done.append(self._builder.finish())
            self._open(self._builder.frame.index + 1)
        return done

    def push(self, item) -> list[FrameStats]:
        view = getattr(item, "view", item)
        ts = view.timestamp
        if ts < self._last_ts:
            raise UnorderedInput(f"timestamp {ts} after {self._last_ts}")
        self._last_ts = ts
        done = self.advance(ts)
        self._builder.add(view)
        return done

    def finish(self, end: Optional[float] = None) -> list[FrameStats]:
        """Close the open frame, and with ``end`` every frame up to it."""
        if self.origin is None:
            if end is None:
                return []
            self.origin = 0.0
        if self._builder is None:
            self._open(0)
        done = []
        if end is not None:
            n_frames = math.ceil((end - self.origin) / self.frame_length - 1e-9)
            while self._builder.frame.index < n_frames - 1:
                done.append(self._builder.finish())
                self._open(self._builder.frame.index + 1)
        done.append(self._builder.finish())
        self._builder = None
        return done


def assign_frames(
    packets: Iterable,
    frame_length: float,
    origin: Optional[float] = None,
    end: Optional[float] = None,
) -> Iterator[FrameStats]:
    """Fold a timestamp-ordered packet stream into consecutive frames.

    See ``FrameAssembler``; with ``end`` given, frames run up to ``end``.
    Items may be views or labelled packets.
    """
    asm = FrameAssembler(frame_length, origin)
    for item in packets:
        yield from asm.push(item)
    yield from asm.finish(end)


@dataclass(frozen=True)
class DetectorConfig:
    frame_length: float = 10.0
    gap: int = 5
    entropy_count: int = 1
    entropy_threshold: float = -3.0
    ratio_threshold: float = 0.1
    subnet_size: int = 1
    base: Base = Base.FLOWS
    combiner: Combiner = Combiner.MEAN
    prescreen: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "base", Base(self.base))
        object.__setattr__(self, "combiner", Combiner(self.combiner))
        if self.frame_length <= 0:
            raise ValueError("frame length must be positive")
        if self.gap < 1 or self.entropy_count < 1:
            raise ValueError("gap and entropy count must be at least 1")
        if not 0 < self.ratio_threshold < 1:
            raise ValueError("ratio threshold must lie in (0, 1)")
        dst_ip_aggregate(IPv4Address(0), self.subnet_size)

    @property
    def history(self) -> int:
        """Frames needed for one evaluation: reference, gap and window."""
        return self.gap + self.entropy_count

    @property
    def latency(self) -> float:
        return (self.gap + self.entropy_count) * self.frame_length


@dataclass(frozen=True)
class Evidence:
    reference: float
    current: float
    delta: float
    threshold: float
    fired: bool


@dataclass(frozen=True)
class AttackReport:
    target_ip: IPv4Address
    attack_port: int
    detected_at: float
    evidence: dict


def _modal(counter: Mapping):
    """Most frequent key, smallest key on ties."""
    best = max(counter.values())
    return min(k for k, v in counter.items() if v == best)


def evaluate_window(frames: Sequence[FrameStats], config: DetectorConfig) -> dict[str, Evidence]:
    """Evidence of all three classifiers for ``g + e`` frames, oldest first."""
    if len(frames) != config.history:
        raise InsufficientHistory(f"need {config.history} frames, got {len(frames)}")
    ref, current = frames[0], frames[config.gap:]
    comb = config.combiner
    empty = ref.udp_flow_count == 0 or sum(f.udp_flow_count for f in current) == 0
    evidence = {}
    for name, getter in (
        ("src_port", lambda f: f.entropy_src_port(config.base)),
        ("dst_ip", lambda f: f.entropy_dst_ip(config.base)),
    ):
        r, c = getter(ref), combine([getter(f) for f in current], comb)
        fired = (not empty) and bool(classify_entropy(r, c, config.entropy_threshold))
        evidence[name] = Evidence(r, c, c - r, config.entropy_threshold, fired)
    no_packets = (ref.udp_packet_count + ref.tcp_packet_count) == 0 or all(
        f.udp_packet_count + f.tcp_packet_count == 0 for f in current
    )
    r, c = ref.udp_ratio, combine([f.udp_ratio for f in current], comb)
    fired = (not no_packets) and bool(classify_ratio(r, c, config.ratio_threshold))
    evidence["ratio"] = Evidence(r, c, c - r, config.ratio_threshold, fired)
    return evidence


class Detector:
    """Online detector: push frames, get a report when an attack is confirmed."""

    def __init__(self, config: DetectorConfig) -> None:
        self.config = config
        self.window: deque[FrameStats] = deque(maxlen=config.history)
        self.last_evidence: Optional[dict] = None

    def push(self, frame: FrameStats) -> Optional[AttackReport]:
        self.window.append(frame)
        if len(self.window) < self.config.history:
            return None
        frames = list(self.window)
        evidence = evaluate_window(frames, self.config)
        self.last_evidence = evidence
        if not evidence["src_port"].fired:
            return None
        if self.config.prescreen and not (evidence["dst_ip"].fired or evidence["ratio"].fired):
            return None
        current = frames[self.config.gap:]
        ports: Counter = Counter()
        for f in current:
            ports.update(f.src_port_flows if self.config.base is Base.FLOWS else f.src_port_packets)
        if not ports:
            return None
        port = _modal(ports)
        targets: Counter = Counter()
        for f in current:
            for (p, dst), n in f.port_dst_flows.items():
                if p == port:
                    targets[dst] += n
        if not targets:
            return None
        return AttackReport(_modal(targets), port, current[-1].end, evidence)


def detect(frames: Iterable[FrameStats], config: DetectorConfig) -> list[Optional[AttackReport]]:
    """One entry per evaluation point: a report or None."""
    frames = list(frames)
    if len(frames) < config.history:
        raise InsufficientHistory(f"{len(frames)} frames < gap + window = {config.history}")
    det = Detector(config)
    out = []
    for i, f in enumerate(frames):
        r = det.push(f)
        if i >= config.history - 1:
            out.append(r)
    return out


@dataclass
class FrameSeries:
    """Per-frame aggregates as arrays; the unit the sweep works on."""

    frame_length: float
    start: np.ndarray
    udp_flows: np.ndarray
    tcp_flows: np.ndarray
    udp_pkts: np.ndarray
    tcp_pkts: np.ndarray
    h_srcport_flow: np.ndarray
    h_srcport_pkt: np.ndarray
    h_dstip_flow: np.ndarray
    h_dstip_pkt: np.ndarray

    def __len__(self) -> int:
        return len(self.start)

    @property
    def udp_ratio(self) -> np.ndarray:
        total = self.udp_pkts + self.tcp_pkts
        return np.divide(self.udp_pkts, total, out=np.zeros(len(total)), where=total > 0)

    def entropy(self, metric: str, base: Union[Base, str] = Base.FLOWS) -> np.ndarray:
        flows = Base(base) is Base.FLOWS
        if metric == "src_port":
            return self.h_srcport_flow if flows else self.h_srcport_pkt
        if metric == "dst_ip":
            return self.h_dstip_flow if flows else self.h_dstip_pkt
        raise ValueError(f"unknown entropy metric {metric!r}")

    @classmethod
    def from_frames(cls, frames: Sequence[FrameStats]) -> "FrameSeries":
        def arr(getter, dtype=float):
            return np.array([getter(f) for f in frames], dtype=dtype)

        return cls(
            frame_length=frames[0].length if frames else 0.0,
            start=arr(lambda f: f.start),
            udp_flows=arr(lambda f: f.udp_flow_count, np.int64),
            tcp_flows=arr(lambda f: f.tcp_flow_count, np.int64),
            udp_pkts=arr(lambda f: f.udp_packet_count, np.int64),
            tcp_pkts=arr(lambda f: f.tcp_packet_count, np.int64),
            h_srcport_flow=arr(lambda f: f.entropy_src_port_flow),
            h_srcport_pkt=arr(lambda f: f.entropy_src_port_pkt),
            h_dstip_flow=arr(lambda f: f.entropy_dst_ip_flow),
            h_dstip_pkt=arr(lambda f: f.entropy_dst_ip_pkt),
        )


def windowed(values: np.ndarray, gap: int, count: int, combiner: Union[Combiner, str]):
    """Reference and combined current values for every evaluation point.

    Point k uses current frames k+g .. k+g+e-1 and reference frame k.
    """
    values = np.asarray(values, dtype=float)
    n_points = len(values) - gap - count + 1
    if n_points <= 0:
        raise InsufficientHistory(f"{len(values)} frames < gap + window = {gap + count}")
    view = np.lib.stride_tricks.sliding_window_view(values, count)[gap:gap + n_points]
    if Combiner(combiner) is Combiner.MEAN:
        current = view.mean(axis=1)
    else:
        current = np.median(view, axis=1)
    return values[:n_points], current


def nonempty_points(counts: np.ndarray, gap: int, count: int) -> np.ndarray:
    """Mask of evaluation points whose reference and current window both hold traffic."""
    counts = np.asarray(counts)
    n_points = len(counts) - gap - count + 1
    window_sum = np.lib.stride_tricks.sliding_window_view(counts, count).sum(axis=1)[gap:gap + n_points]
    return (counts[:n_points] > 0) & (window_sum > 0)


FRAME_CSV_COLUMNS = (
    "frame_index",
    "start",
    "udp_flows",
    "tcp_flows",
    "udp_pkts",
    "tcp_pkts",
    "H_srcport_flow",
    "H_srcport_pkt",
    "H_dstip",
    "udp_ratio",
)


def write_frames_csv(frames: Iterable[FrameStats], path) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FRAME_CSV_COLUMNS)
        for f in frames:
            w.writerow(
                [
                    f.index,
                    f"{f.start:.6f}",
                    f.udp_flow_count,
                    f.tcp_flow_count,
                    f.udp_packet_count,
                    f.tcp_packet_count,
                    f"{f.entropy_src_port_flow:.6f}",
                    f"{f.entropy_src_port_pkt:.6f}",
                    f"{f.entropy_dst_ip_flow:.6f}",
                    f"{f.udp_ratio:.6f}",
                ]
            )
            n += 1
    return n
