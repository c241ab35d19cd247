"""Evaluation engine: parameter sweeps, closed-loop scenarios, rule equivalence.

A sweep compares, for every grid point and evaluation window, the verdict on
benign traffic (FP or TN) with the verdict on the same window carrying an
attack (TP or FN).  The reference frame always comes from benign traffic:
the attack is assumed not to have started yet when it was measured.
"""

from __future__ import annotations

import csv
import dataclasses
import heapq
import itertools
import json
import math
import random
import time
from collections import Counter
from dataclasses import dataclass, field
from ipaddress import IPv4Address, IPv4Network
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from .detection import (
    Base,
    Combiner,
    Detector,
    DetectorConfig,
    FrameAssembler,
    FrameSeries,
    nonempty_points,
)
from .flowtable import Disposition, FlowTable, Outcome
from .mitigation import MitigationManager, Variant
from .packet import (
    ARP_REPLY,
    ARP_REQUEST,
    ETH_TYPE_IPV4,
    HostIdentity,
    IpProto,
    Ipv4Header,
    PacketHeaderView,
    TcpPorts,
    arp_packet,
    udp_packet,
)
from .traffic import (
    AttackSpec,
    BenignProfile,
    Label,
    LabeledPacket,
    benign_frame_stats,
    gen_benign,
    inject_attack,
)

CLASSIFIERS = ("src_port", "dst_ip", "ratio")


# --------------------------------------------------------------------------
# grids and results


@dataclass(frozen=True)
class SweepGrid:
    T_h: tuple[float, ...] = (-0.5, -1.0, -1.5, -2.0, -2.5, -3.0, -3.5)
    T_r: tuple[float, ...] = (0.05, 0.1, 0.2, 0.25, 0.3, 0.35)
    g: tuple[int, ...] = (5, 10, 60, 300)
    l: tuple[int, ...] = (1, 10, 30, 60, 90, 300, 600)
    e: tuple[int, ...] = (1, 2, 3, 4, 5)
    a: tuple[float, ...] = (0.5, 1.0, 1.5, 2.0, 2.5)
    s: tuple[int, ...] = (1, 8)
    base: tuple[Base, ...] = (Base.FLOWS, Base.PACKETS)
    combiner: tuple[Combiner, ...] = (Combiner.MEAN, Combiner.MEDIAN)
    classifiers: tuple[str, ...] = CLASSIFIERS

    def __post_init__(self) -> None:
        object.__setattr__(self, "base", tuple(Base(b) for b in self.base))
        object.__setattr__(self, "combiner", tuple(Combiner(c) for c in self.combiner))
        unknown = set(self.classifiers) - set(CLASSIFIERS)
        if unknown:
            raise ValueError(f"unknown classifiers {sorted(unknown)}")


_GRID_PARSERS: dict[str, Callable[[str], object]] = {
    "T_h": float,
    "T_r": float,
    "g": int,
    "l": int,
    "e": int,
    "a": float,
    "s": int,
    "base": Base,
    "combiner": Combiner,
    "classifiers": str,
}


def parse_grid(text: str, base: SweepGrid = SweepGrid()) -> SweepGrid:
    """Read ``name = v1, v2, ...`` lines; names missing keep their defaults."""
    changes = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, values = line.partition("=")
        key = key.strip()
        if not sep or key not in _GRID_PARSERS:
            raise ValueError(f"bad grid line {raw!r}")
        conv = _GRID_PARSERS[key]
        changes[key] = tuple(conv(v.strip()) for v in values.split(",") if v.strip())
    return dataclasses.replace(base, **changes)


def load_grid(path: Union[str, Path], base: SweepGrid = SweepGrid()) -> SweepGrid:
    return parse_grid(Path(path).read_text(), base)


def metrics(tp: int, fp: int, tn: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall and accuracy; a 0/0 ratio is reported as 0."""
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    total = tp + tn + fp + fn
    accuracy = (tp + tn) / total if total else 0.0
    return precision, recall, accuracy


def confusion(benign_fired: Sequence[bool], attacked_fired: Sequence[bool]) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn) from per-window verdicts on benign and attacked traffic."""
    if len(benign_fired) != len(attacked_fired):
        raise ValueError("benign and attacked verdicts must cover the same windows")
    fp = int(sum(bool(v) for v in benign_fired))
    tp = int(sum(bool(v) for v in attacked_fired))
    return tp, fp, len(benign_fired) - fp, len(attacked_fired) - tp


@dataclass(frozen=True)
class SweepResult:
    classifier: str
    base: Base
    combiner: Combiner
    l: float
    g: int
    e: int
    T_h: Optional[float]
    T_r: Optional[float]
    a: float
    s: int
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def precision(self) -> float:
        return metrics(self.tp, self.fp, self.tn, self.fn)[0]

    @property
    def precision_defined(self) -> bool:
        return self.tp + self.fp > 0

    @property
    def recall(self) -> float:
        return metrics(self.tp, self.fp, self.tn, self.fn)[1]

    @property
    def accuracy(self) -> float:
        return metrics(self.tp, self.fp, self.tn, self.fn)[2]

    @property
    def latency(self) -> float:
        return (self.g + self.e) * self.l

    @property
    def threshold(self) -> float:
        return self.T_r if self.classifier == "ratio" else self.T_h


# --------------------------------------------------------------------------
# sweeps


@dataclass
class SeriesPair:
    """Benign frames and the same frames with an attack of magnitude ``a``."""

    l: float
    a: float
    s: int
    benign: FrameSeries
    attacked: FrameSeries


@dataclass(frozen=True)
class Skipped:
    l: float
    g: int
    e: int
    frames: int


def synthetic_pairs(
    profile: BenignProfile,
    frame_lengths: Sequence[int],
    magnitudes: Sequence[float],
    subnet_sizes: Sequence[int],
    attack_port: int = 53,
    packets_per_flow: int = 1,
    worst_case: bool = True,
) -> Iterator[SeriesPair]:
    stats = benign_frame_stats(profile, frame_lengths, attack_port)
    for l in frame_lengths:
        st = stats.pop(int(l))
        benign = st.series()
        for a in magnitudes:
            for s in subnet_sizes:
                yield SeriesPair(float(l), a, s, benign, st.attacked(a, s, packets_per_flow, worst_case))


def _signal(series: FrameSeries, classifier: str, base: Base) -> np.ndarray:
    if classifier == "ratio":
        return series.udp_ratio
    return series.entropy(classifier, base)


def _activity(series: FrameSeries, classifier: str) -> np.ndarray:
    if classifier == "ratio":
        return series.udp_pkts + series.tcp_pkts
    return series.udp_flows


def _combined(values: np.ndarray, e: int, combiner: Combiner) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(values, e)
    return view.mean(axis=1) if combiner is Combiner.MEAN else np.median(view, axis=1)


@dataclass
class WindowDeltas:
    """Per-window deltas (current - reference) for one classifier setting."""

    benign: np.ndarray
    attacked: np.ndarray


def window_deltas(pair: SeriesPair, classifier: str, base: Base, combiner: Combiner,
                  gaps: Sequence[int], counts: Sequence[int]) -> Iterator[tuple[int, int, Optional[WindowDeltas]]]:
    """Deltas of every usable window, per (g, e); None when the run is too short."""
    vb = _signal(pair.benign, classifier, base)
    va = _signal(pair.attacked, classifier, base)
    act_b, act_a = _activity(pair.benign, classifier), _activity(pair.attacked, classifier)
    n = len(vb)
    for e in counts:
        if n < e:
            for g in gaps:
                yield g, e, None
            continue
        cb, ca = _combined(vb, e, combiner), _combined(va, e, combiner)
        for g in gaps:
            n_points = n - g - e + 1
            if n_points <= 0:
                yield g, e, None
                continue
            ok = nonempty_points(act_b, g, e) & nonempty_points(act_a, g, e)
            ref = vb[:n_points]
            yield g, e, WindowDeltas((cb[g:g + n_points] - ref)[ok], (ca[g:g + n_points] - ref)[ok])


def _fire_counts(deltas: np.ndarray, thresholds: Sequence[float], classifier: str) -> list[int]:
    d = np.sort(deltas)
    if classifier == "ratio":
        # fires when delta >= T_r
        return [int(len(d) - np.searchsorted(d, t, side="left")) for t in thresholds]
    # fires when delta <= T_h
    return [int(np.searchsorted(d, t, side="right")) for t in thresholds]


def evaluate(
    pairs: Iterable[SeriesPair],
    grid: SweepGrid = SweepGrid(),
    on_skip: Optional[Callable[[Skipped], None]] = None,
) -> list[SweepResult]:
    """Confusion counts for every grid point over every pair.

    Source-port and ratio verdicts do not depend on the subnet size, so they
    are produced once per (l, a), for the first subnet size in the grid.
    The ratio classifier is packet-based only.  Grid points needing more
    frames than the run holds are reported through ``on_skip``.
    """
    results: list[SweepResult] = []
    skipped_seen = set()
    for pair in pairs:
        for classifier in grid.classifiers:
            if classifier != "dst_ip" and pair.s != grid.s[0]:
                continue
            bases = (Base.PACKETS,) if classifier == "ratio" else grid.base
            thresholds = grid.T_r if classifier == "ratio" else grid.T_h
            for base, comb in itertools.product(bases, grid.combiner):
                for g, e, wd in window_deltas(pair, classifier, base, comb, grid.g, grid.e):
                    if wd is None:
                        key = (pair.l, g, e)
                        if on_skip is not None and key not in skipped_seen:
                            on_skip(Skipped(pair.l, g, e, len(pair.benign)))
                        skipped_seen.add(key)
                        continue
                    w = len(wd.benign)
                    fps = _fire_counts(wd.benign, thresholds, classifier)
                    tps = _fire_counts(wd.attacked, thresholds, classifier)
                    for t, fp, tp in zip(thresholds, fps, tps):
                        results.append(
                            SweepResult(
                                classifier, base, comb, pair.l, g, e,
                                None if classifier == "ratio" else t,
                                t if classifier == "ratio" else None,
                                pair.a, pair.s, tp, fp, w - fp, w - tp,
                            )
                        )
    return results


def sweep(
    profile: BenignProfile,
    grid: SweepGrid = SweepGrid(),
    attack_port: int = 53,
    packets_per_flow: int = 1,
    worst_case: bool = True,
    on_skip: Optional[Callable[[Skipped], None]] = None,
) -> list[SweepResult]:
    pairs = synthetic_pairs(profile, grid.l, grid.a, grid.s, attack_port, packets_per_flow, worst_case)
    return evaluate(pairs, grid, on_skip)


def monotonicity_violations(pairs: Iterable[SeriesPair], grid: SweepGrid = SweepGrid()) -> int:
    """Windows where a classifier fires at a stricter threshold but not a looser one."""
    violations = 0
    for pair in pairs:
        for classifier in grid.classifiers:
            bases = (Base.PACKETS,) if classifier == "ratio" else grid.base
            # loosest first: entropy thresholds near 0, ratio thresholds small
            if classifier == "ratio":
                ordered = sorted(grid.T_r)
            else:
                ordered = sorted(grid.T_h, reverse=True)
            for base, comb in itertools.product(bases, grid.combiner):
                for _g, _e, wd in window_deltas(pair, classifier, base, comb, grid.g, grid.e):
                    if wd is None:
                        continue
                    for d in (wd.benign, wd.attacked):
                        if classifier == "ratio":
                            fired = np.stack([d >= t for t in ordered])
                        else:
                            fired = np.stack([d <= t for t in ordered])
                        # a stricter threshold firing while the looser one does not
                        violations += int((fired[1:] & ~fired[:-1]).sum())
    return violations


def mean_accuracy(results: Iterable[SweepResult], **where) -> float:
    accs = [r.accuracy for r in results if all(getattr(r, k) == v for k, v in where.items())]
    if not accs:
        raise ValueError(f"no results match {where}")
    return float(np.mean(accs))


# --------------------------------------------------------------------------
# output


CSV_COLUMNS = (
    "classifier", "base", "combiner", "l", "g", "e", "T_h", "T_r", "a", "s",
    "tp", "fp", "tn", "fn", "precision", "recall", "accuracy", "latency_s",
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (Base, Combiner)):
        return v.value
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def emit_csv(results: Iterable[SweepResult], path: Union[str, Path]) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in results:
            row = [getattr(r, c) for c in CSV_COLUMNS[:14]]
            row += [r.precision, r.recall, r.accuracy, r.latency]
            w.writerow([_fmt(v) for v in row])
            n += 1
    return n


def read_csv(path: Union[str, Path]) -> list[SweepResult]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            opt = lambda k: float(row[k]) if row[k] else None  # noqa: E731
            out.append(
                SweepResult(
                    row["classifier"], Base(row["base"]), Combiner(row["combiner"]), float(row["l"]),
                    int(row["g"]), int(row["e"]), opt("T_h"), opt("T_r"), float(row["a"]), int(row["s"]),
                    int(row["tp"]), int(row["fp"]), int(row["tn"]), int(row["fn"]),
                )
            )
    return out


def plot_series(results: Iterable[SweepResult]) -> list[dict]:
    """Precision/recall points per threshold, one series per setting and magnitude."""
    groups: dict[tuple, list] = {}
    for r in results:
        key = (r.classifier, r.base.value, r.combiner.value, r.l, r.g, r.e, r.s, r.a)
        groups.setdefault(key, []).append((r.threshold, r.precision, r.recall))
    series = []
    for key, points in groups.items():
        names = ("classifier", "base", "combiner", "l", "g", "e", "s", "a")
        series.append({**dict(zip(names, key)), "points": sorted(points, key=lambda p: abs(p[0]))})
    return series


def emit_plot_data(results: Iterable[SweepResult], path: Union[str, Path]) -> int:
    series = plot_series(results)
    Path(path).write_text(json.dumps(series, indent=1) + "\n")
    return len(series)


# --------------------------------------------------------------------------
# rule-program equivalence


DEFAULT_TARGET = HostIdentity(IPv4Address("192.0.2.10"), "02:00:00:00:0a:0a", 24)
DEFAULT_ALIAS_SUBNET = IPv4Network("198.51.100.0/24")
SERVER_BASE = int(IPv4Address("203.0.113.0"))
UNRELATED_IP = IPv4Address("192.0.2.99")
GATEWAY_IP = IPv4Address("192.0.2.1")


@dataclass
class EquivalenceReport:
    packets: int
    mismatches: int
    elapsed: float
    regions: Counter
    first_mismatch: Optional[tuple] = None


def _paired_managers(alias_subnet, seed: int):
    managers = []
    for variant in (Variant.CONTROLLER_ASSISTED, Variant.SWITCH_ONLY):
        managers.append(MitigationManager(FlowTable(), alias_subnet, variant, rng=random.Random(seed)))
    return managers


def _region(table: FlowTable, view: PacketHeaderView) -> str:
    entry = table.lookup(view)
    if entry is None:
        return "miss"
    name = str(entry.id).split("/", 1)[1]
    return name.split("/", 1)[0]


def check_equivalence(
    n_packets: int = 100_000,
    seed: int = 0,
    target: HostIdentity = DEFAULT_TARGET,
    attack_port: int = 53,
    alias_subnet: IPv4Network = DEFAULT_ALIAS_SUBNET,
) -> EquivalenceReport:
    """Run random packets through both rule programs and compare dispositions.

    The first half runs against a fresh plan, the second half against a
    rotated plan whose previous alias is still in its grace period.
    Packets are drawn so that every rule of both programs gets hit,
    including requests whose source and destination port both equal the
    attack port and ARP requests for the alias, the target and others.
    """
    started = time.perf_counter()
    ctrl, switch = _paired_managers(alias_subnet, seed)
    for m in (ctrl, switch):
        m.activate(target, attack_port, now=0.0)
    rng = random.Random(seed)
    ip_t = target.ip
    mismatches, first = 0, None
    regions: Counter = Counter()
    p_ctrl, p_switch = ctrl.pipeline(), switch.pipeline()
    for i in range(n_packets):
        if i == n_packets // 2:
            for m in (ctrl, switch):
                m.rotate(now=1.0, grace=1e9)
        plan = switch.plan
        aliases = list(plan.aliases)

        def addr() -> IPv4Address:
            pick = rng.random()
            if pick < 0.3:
                return ip_t
            if pick < 0.5:
                return rng.choice(aliases)
            if pick < 0.6:
                return IPv4Address(int(alias_subnet.network_address) + rng.randrange(1, 255))
            if pick < 0.8:
                return IPv4Address(SERVER_BASE + rng.randrange(1, 255))
            return IPv4Address(rng.getrandbits(32))

        def port() -> int:
            pick = rng.random()
            if pick < 0.45:
                return attack_port
            if pick < 0.55:
                return rng.choice((123, 1900, 11211, 443))
            return rng.randrange(1, 65536)

        kind = rng.random()
        ts = i * 1e-4
        if kind < 0.70:
            view = udp_packet(addr(), port(), addr(), port(), timestamp=ts)
        elif kind < 0.80:
            s, d = addr(), addr()
            view = PacketHeaderView(
                ts, "02:00:00:00:00:01", "02:00:00:00:00:02", ETH_TYPE_IPV4,
                ipv4=Ipv4Header(s, d, IpProto.TCP), tcp=TcpPorts(port(), port()),
            )
        elif kind < 0.83:
            view = PacketHeaderView(
                ts, "02:00:00:00:00:01", "02:00:00:00:00:02", ETH_TYPE_IPV4,
                ipv4=Ipv4Header(addr(), addr(), IpProto.ICMP),
            )
        else:
            op = ARP_REQUEST if rng.random() < 0.8 else ARP_REPLY
            tpa = rng.choice([*aliases, ip_t, UNRELATED_IP, addr()])
            view = arp_packet(op, "02:00:00:00:00:01", GATEWAY_IP, tpa, timestamp=ts)
            if rng.random() < 0.3:
                view = dataclasses.replace(view, trailer=bytes(18))
        regions["controller:" + _region(ctrl.table, view)] += 1
        regions["switch:" + _region(switch.table, view)] += 1
        a, b = p_ctrl.process(view), p_switch.process(view)
        if a != b:
            mismatches += 1
            if first is None:
                first = (view, a, b)
    return EquivalenceReport(n_packets, mismatches, time.perf_counter() - started, regions, first)


# --------------------------------------------------------------------------
# closed-loop scenario


@dataclass(frozen=True)
class TargetWorkload:
    """Traffic of the protected host whose fate the scenario accounts for.

    The host sends requests to servers on the attack port (their responses
    are generated when the request leaves the switch, so they go to the
    address the request carried), serves requests on that port itself and
    is asked for by ARP every ``arp_interval`` seconds.
    """

    target: HostIdentity = DEFAULT_TARGET
    request_rate: float = 5.0
    service_rate: float = 5.0
    arp_interval: float = 5.0
    response_delay: tuple[float, float] = (0.005, 0.2)
    late_fraction: float = 0.0
    late_delay: tuple[float, float] = (1.0, 30.0)
    servers: int = 16
    seed: int = 0


@dataclass
class ScenarioReport:
    """Fate of every labelled packet addressed to the protected host.

    Attack responses and legitimate responses are counted from plan
    activation on; ``before_activation`` holds the rest, so attack,
    legitimate, transition and incoming-request counts with it partition
    the packets sent to the host.
    """

    detection_time: float = math.inf
    detected_target: Optional[IPv4Address] = None
    detected_port: Optional[int] = None
    activated_at: Optional[float] = None
    illegitimate_delivered: int = 0
    illegitimate_dropped: int = 0
    legitimate_delivered: int = 0
    legitimate_dropped: int = 0
    unaliased_responses_dropped: int = 0
    unaliased_responses_delivered: int = 0
    grace_delivered: int = 0
    grace_stragglers: int = 0
    stale_alias_delivered: int = 0
    last_old_alias_delivery: float = -math.inf
    incoming_requests: int = 0
    incoming_requests_unmodified: int = 0
    outgoing_responses: int = 0
    outgoing_responses_unmodified: int = 0
    alias_leaks: int = 0
    arp_replies: int = 0
    before_activation: int = 0
    variant_mismatches: int = 0
    packets: int = 0
    rotations: list = field(default_factory=list)
    outcomes: Counter = field(default_factory=Counter)

    @property
    def detected(self) -> bool:
        return math.isfinite(self.detection_time)


def _workload_stream(w: TargetWorkload, attack_port: int, duration: float) -> list[LabeledPacket]:
    rng = np.random.default_rng([w.seed, 0x7A6])
    out: list[LabeledPacket] = []
    ip_t = w.target.ip
    n_req = rng.poisson(w.request_rate * duration)
    for t in np.sort(rng.uniform(0, duration, n_req)):
        server = IPv4Address(SERVER_BASE + 1 + int(rng.integers(w.servers)))
        view = udp_packet(ip_t, int(rng.integers(1024, 65536)), server, attack_port, timestamp=float(t),
                          eth_src=w.target.mac)
        out.append(LabeledPacket(view, Label.TARGET_REQUEST))
    n_srv = rng.poisson(w.service_rate * duration)
    for t in np.sort(rng.uniform(0, duration, n_srv)):
        client = IPv4Address(int(IPv4Address("198.18.0.0")) + int(rng.integers(1, 1 << 15)))
        cport = int(rng.integers(1024, 65536))
        out.append(LabeledPacket(udp_packet(client, cport, ip_t, attack_port, timestamp=float(t)),
                                 Label.INCOMING_REQUEST))
        reply_t = float(t) + float(rng.uniform(*w.response_delay))
        if reply_t < duration:
            out.append(LabeledPacket(udp_packet(ip_t, attack_port, client, cport, timestamp=reply_t,
                                                eth_src=w.target.mac), Label.OUTGOING_RESPONSE))
    out.sort(key=lambda p: p.view.timestamp)
    return out


def _delivered(d: Disposition, ip_t: IPv4Address) -> bool:
    if d.outcome is Outcome.DELIVERED_TO_TARGET:
        return True
    return d.outcome is Outcome.FORWARDED_NORMAL and d.view.ipv4 is not None and d.view.ipv4.dst == ip_t


def run_scenario(
    profile: BenignProfile,
    attack: AttackSpec,
    config: DetectorConfig,
    variant: Variant = Variant.SWITCH_ONLY,
    workload: TargetWorkload = TargetWorkload(),
    alias_subnet: IPv4Network = DEFAULT_ALIAS_SUBNET,
    rotate_every: Optional[float] = None,
    grace: float = 0.0,
    seed: int = 0,
) -> ScenarioReport:
    """Stream traffic through detection and, once it fires, mitigation.

    Every packet runs through ``variant`` and, in lockstep with identical
    alias draws, through the other rule program; differing dispositions
    are counted as mismatches.  Responses to the host's requests are
    created from the request as it left the switch.
    """
    ip_t = workload.target.ip
    p_a = attack.attack_port
    primary, shadow = (
        MitigationManager(FlowTable(), alias_subnet, v, rng=random.Random(seed)) for v in (variant, variant.other)
    )
    pipe_p, pipe_s = primary.pipeline(), shadow.pipeline()
    assembler = FrameAssembler(config.frame_length, origin=0.0)
    detector = Detector(config)
    report = ScenarioReport()
    rng = np.random.default_rng([seed, workload.seed, 0x5CE])

    base = inject_attack(gen_benign(profile), attack, config.frame_length)
    scheduled = heapq.merge(base, _workload_stream(workload, p_a, profile.duration),
                            key=lambda p: p.view.timestamp)
    pending: list = []  # (ts, seq, LabeledPacket or None for an ARP probe)
    seq = itertools.count()
    heapq.heappush(pending, (workload.arp_interval, next(seq), None))
    used_aliases: set = set()
    next_rotation = math.inf

    def events() -> Iterator[tuple[float, Optional[LabeledPacket]]]:
        nxt = next(scheduled, None)
        while nxt is not None or pending:
            if pending and (nxt is None or pending[0][0] < nxt.view.timestamp):
                ts, _, item = heapq.heappop(pending)
                yield ts, item
            else:
                yield nxt.view.timestamp, nxt
                nxt = next(scheduled, None)

    for ts, item in events():
        if ts >= profile.duration:
            if item is None:
                continue
            break
        for frame in assembler.advance(ts):
            rep = detector.push(frame)
            if rep is not None and report.activated_at is None:
                report.detection_time = rep.detected_at
                report.detected_target, report.detected_port = rep.target_ip, rep.attack_port
                if rep.target_ip == ip_t:
                    for m in (primary, shadow):
                        m.activate(workload.target, rep.attack_port, rep.detected_at)
                    report.activated_at = rep.detected_at
                    used_aliases.add(primary.plan.alias_ip)
                    if rotate_every:
                        next_rotation = rep.detected_at + rotate_every
        while ts >= next_rotation:
            for m in (primary, shadow):
                m.rotate(next_rotation, grace)
            report.rotations.append((next_rotation, primary.plan.alias_ip))
            used_aliases.add(primary.plan.alias_ip)
            next_rotation += rotate_every
        for m in (primary, shadow):
            m.tick(ts)

        if item is None:
            # ARP probes for the host, an unrelated address and the live aliases
            asked = [ip_t, UNRELATED_IP]
            if primary.plan is not None:
                asked += list(primary.plan.aliases)
            views = [arp_packet(ARP_REQUEST, "02:00:00:00:00:fe", GATEWAY_IP, tpa, timestamp=ts)
                     for tpa in asked]
            packets = [LabeledPacket(v, Label.ARP) for v in views]
            heapq.heappush(pending, (ts + workload.arp_interval, next(seq), None))
        else:
            packets = [item]

        for pkt in packets:
            view, label = pkt
            assembler.push(view)
            d = pipe_p.process(view)
            if d != pipe_s.process(view):
                report.variant_mismatches += 1
            report.packets += 1
            report.outcomes[d.outcome.value] += 1
            _account(report, pkt, d, primary, used_aliases, ip_t, p_a)
            if label is Label.TARGET_REQUEST and d.outcome is Outcome.FORWARDED_NORMAL:
                out = d.view
                late = rng.random() < workload.late_fraction
                delay = rng.uniform(*(workload.late_delay if late else workload.response_delay))
                resp = udp_packet(out.ipv4.dst, p_a, out.ipv4.src, out.udp.src_port, timestamp=ts + float(delay))
                heapq.heappush(pending, (ts + float(delay), next(seq), LabeledPacket(resp, Label.LEGIT_RESPONSE)))

    for frame in assembler.finish():
        detector.push(frame)
    return report


def _account(report: ScenarioReport, pkt: LabeledPacket, d: Disposition, manager: MitigationManager,
             used_aliases: set, ip_t: IPv4Address, p_a: int) -> None:
    view, label = pkt
    ts = view.timestamp
    active = report.activated_at is not None and ts >= report.activated_at
    delivered = _delivered(d, ip_t)
    if delivered and d.view is not None and d.view.ipv4 is not None:
        if {d.view.ipv4.src, d.view.ipv4.dst} & used_aliases:
            report.alias_leaks += 1
    if label is Label.ARP:
        if d.outcome is Outcome.EMITTED_REPLY:
            report.arp_replies += 1
        return
    if label is Label.OUTGOING_RESPONSE:
        if active:
            report.outgoing_responses += 1
            report.outgoing_responses_unmodified += d.outcome is Outcome.FORWARDED_NORMAL and d.view == view
        return
    if label is Label.INCOMING_REQUEST:
        if active:
            report.incoming_requests += 1
            report.incoming_requests_unmodified += delivered and d.view == view
        else:
            report.before_activation += 1
        return
    if label not in (Label.ATTACK, Label.LEGIT_RESPONSE):
        return
    if not active:
        report.before_activation += 1
        return
    if label is Label.ATTACK:
        if delivered:
            report.illegitimate_delivered += 1
        else:
            report.illegitimate_dropped += 1
        return
    dst = view.ipv4.dst
    if dst not in used_aliases:
        # answer to a request that left before activation, unaliased
        if delivered:
            report.unaliased_responses_delivered += 1
        else:
            report.unaliased_responses_dropped += 1
        return
    plan = manager.plan
    accepted = plan is not None and dst in plan.aliases
    ok = delivered and d.view.ipv4.dst == ip_t and d.outcome is Outcome.DELIVERED_TO_TARGET
    if plan is not None and dst != plan.alias_ip:
        if ok:
            report.grace_delivered += 1
            report.last_old_alias_delivery = max(report.last_old_alias_delivery, ts)
            if not accepted:
                report.stale_alias_delivered += 1
        elif not accepted:
            report.grace_stragglers += 1
            return
    if ok:
        report.legitimate_delivered += 1
    else:
        report.legitimate_dropped += 1
