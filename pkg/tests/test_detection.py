import dataclasses
import math
import random
from collections import Counter
from ipaddress import IPv4Address

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import entropy as scipy_entropy

from drdos_guard.detection import (
    Base,
    Combiner,
    Detector,
    DetectorConfig,
    EntropyAccumulator,
    FrameSeries,
    assign_frames,
    classify_entropy,
    classify_ratio,
    combine,
    detect,
    dst_ip_aggregate,
    evaluate_window,
    shannon_entropy,
    udp_tcp_ratio,
    windowed,
    write_frames_csv,
)
from drdos_guard.errors import InsufficientHistory, UnorderedInput
from drdos_guard.packet import tcp_packet, udp_packet
from drdos_guard.traffic import DESK_PROFILE, AttackSpec, benign_frame_stats, gen_benign, inject_attack


def test_entropy_examples():
    assert shannon_entropy({53: 4}) == 0.0
    assert shannon_entropy({p: 1 for p in range(8)}) == 3.0
    assert shannon_entropy({53: 2, 123: 1, 161: 1}) == 1.5
    assert shannon_entropy({}) == 0.0
    assert shannon_entropy({1: 0, 2: 5}) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.integers(0, 65535), st.integers(1, 10_000), min_size=1, max_size=60))
def test_accumulator_matches_reference(hist):
    acc = EntropyAccumulator()
    for k, c in hist.items():
        acc.add(k, c)
    ref = scipy_entropy(list(hist.values()), base=2)
    assert acc.entropy == pytest.approx(ref, abs=1e-9)
    assert shannon_entropy(hist) == pytest.approx(ref, abs=1e-9)
    assert 0.0 <= acc.entropy <= math.log2(len(hist)) + 1e-12


def test_accumulator_incremental_equals_batch(rng):
    acc = EntropyAccumulator()
    for _ in range(5000):
        acc.add(rng.randrange(300))
    assert acc.entropy == pytest.approx(shannon_entropy(acc.counts), abs=1e-9)
    acc.add("x", 0)
    assert "x" not in acc.counts


def pkt(t, sport=53, dst="10.0.0.1", dport=4000):
    return udp_packet("172.16.0.1", sport, dst, dport, timestamp=t)


def test_flow_dedup_within_frame():
    (frame,) = assign_frames([pkt(0.1 * i) for i in range(10)], 10.0)
    assert sum(frame.src_port_flows.values()) == 1 and sum(frame.src_port_packets.values()) == 10
    assert frame.udp_flow_count == 1 and frame.udp_packet_count == 10


def test_boundary_packet_goes_to_later_frame():
    frames = list(assign_frames([pkt(0.0), pkt(10.0)], 10.0, origin=0.0))
    assert [f.udp_packet_count for f in frames] == [1, 1]
    assert frames[1].start == 10.0


def test_empty_frames_are_emitted_with_zero_entropy():
    frames = list(assign_frames([pkt(1.0), pkt(35.0)], 10.0, origin=0.0, end=50.0))
    assert [f.udp_packet_count for f in frames] == [1, 0, 0, 1, 0]
    empty = frames[1]
    assert empty.entropy_src_port_flow == empty.entropy_dst_ip_pkt == 0.0 and empty.udp_ratio == 0.0


def test_unordered_input():
    with pytest.raises(UnorderedInput):
        list(assign_frames([pkt(5.0), pkt(4.0)], 10.0))


def test_tcp_counts_and_ratio():
    packets = [pkt(0.01 * i, dport=4000 + i) for i in range(70)]
    packets += [tcp_packet("10.0.0.2", 443, "10.0.0.3", 5000 + i, timestamp=1 + 0.001 * i) for i in range(930)]
    packets.sort(key=lambda v: v.timestamp)
    (frame,) = assign_frames(packets, 10.0)
    assert udp_tcp_ratio(frame) == pytest.approx(0.07)
    assert frame.tcp_flow_count == 930 and not frame.src_port_flows.keys() - {53}


def test_ratio_edge_cases():
    (only_udp,) = assign_frames([pkt(0.0)], 10.0)
    assert udp_tcp_ratio(only_udp) == 1.0
    (empty,) = assign_frames([], 10.0, origin=0.0, end=10.0)
    assert udp_tcp_ratio(empty) == 0.0


def test_combine_examples():
    assert combine([3, 5]) == 4
    assert combine([1, 9, 2], Combiner.MEDIAN) == 2
    assert combine([1, 9, 2, 4], "median") == 3
    assert combine([7.5], "mean") == combine([7.5], "median") == 7.5
    with pytest.raises(ValueError):
        combine([])


def test_classifier_examples():
    assert classify_entropy(9.0, 5.2, -3.5)
    assert not classify_entropy(9.0, 8.8, -0.5)
    assert not any(classify_entropy(4.0, 4.0, t) for t in (-0.5, -1, -1.5, -2, -2.5, -3, -3.5))
    assert classify_ratio(0.07, 0.35, 0.2)
    assert not classify_ratio(0.07, 0.11, 0.05)
    assert not classify_ratio(0.3, 0.3, 0.05)


@given(st.floats(0, 16), st.floats(0, 16))
def test_entropy_classifier_is_monotone(ref, cur):
    grid = sorted((-0.5, -1, -1.5, -2, -2.5, -3, -3.5))
    fired = [classify_entropy(ref, cur, t) for t in grid]
    assert fired == sorted(fired)  # once it fires it keeps firing at looser thresholds


def test_dst_ip_aggregate():
    ip = IPv4Address("10.255.255.9")
    assert dst_ip_aggregate(ip, 1) == dst_ip_aggregate(ip, 8) == ip
    with pytest.raises(ValueError):
        dst_ip_aggregate(ip, 3)


def test_spreading_over_eight_targets_adds_three_bits():
    one = Counter({"t0": 64})
    eight = Counter({f"t{i}": 8 for i in range(8)})
    assert shannon_entropy(eight) - shannon_entropy(one) == 3.0


def test_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(gap=0)
    with pytest.raises(ValueError):
        DetectorConfig(ratio_threshold=1.5)
    with pytest.raises(ValueError):
        DetectorConfig(subnet_size=6)
    assert DetectorConfig(base="packets", combiner="median").base is Base.PACKETS
    assert DetectorConfig(frame_length=10, gap=5, entropy_count=3).latency == 80


def test_packet_duplication_invariance():
    r = random.Random(3)
    views = sorted((pkt(r.uniform(0, 9.9), sport=r.randrange(1, 200), dport=r.randrange(1024, 65536))
                    for _ in range(300)), key=lambda v: v.timestamp)
    (plain,) = assign_frames(views, 10.0, origin=0.0)
    # duplicate every packet of the flows from port 7 or below, repeated 5 times
    dup = sorted(views + [v for v in views if v.udp.src_port <= 7 for _ in range(5)], key=lambda v: v.timestamp)
    (doubled,) = assign_frames(dup, 10.0, origin=0.0)
    assert doubled.entropy_src_port_flow == pytest.approx(plain.entropy_src_port_flow, abs=1e-12)
    assert doubled.entropy_src_port_pkt != pytest.approx(plain.entropy_src_port_pkt, abs=1e-6)


def test_single_port_attack_lowers_flow_entropy():
    r = random.Random(8)
    benign = [pkt(r.uniform(0, 9), sport=r.randrange(1, 400), dport=r.randrange(1024, 65536)) for _ in range(200)]
    (before,) = assign_frames(sorted(benign, key=lambda v: v.timestamp), 10.0, origin=0.0)
    distinct = len(before.src_port_flows)
    previous = before.entropy_src_port_flow
    for n in (distinct, 2 * distinct, 4 * distinct):
        attack = [pkt(r.uniform(0, 9), sport=53, dport=1024 + i) for i in range(n)]
        (after,) = assign_frames(sorted(benign + attack, key=lambda v: v.timestamp), 10.0, origin=0.0)
        assert after.entropy_src_port_flow < previous
        previous = after.entropy_src_port_flow


@pytest.fixture(scope="module")
def attacked_frames():
    profile = dataclasses.replace(DESK_PROFILE, duration=120.0, seed=4)
    target = profile.target_ips(1)[0]
    spec = AttackSpec(1.0, 53, (target,), start=80.0, stop=120.0, seed=4)
    stream = inject_attack(gen_benign(profile), spec, 10.0)
    return target, list(assign_frames(stream, 10.0, origin=0.0, end=profile.duration))


def test_detects_synthetic_attack(attacked_frames):
    target, frames = attacked_frames
    reports = detect(frames, DetectorConfig())
    assert len(reports) == len(frames) - 6 + 1
    hits = [r for r in reports if r is not None]
    assert hits, "attack not detected"
    first = hits[0]
    assert first.attack_port == 53 and first.target_ip == target
    assert first.detected_at == 90.0 and first.evidence["src_port"].fired
    # nothing fires on the pre-attack windows
    assert all(r is None for r in reports[:3])


def test_detect_is_deterministic(attacked_frames):
    _, frames = attacked_frames
    cfg = DetectorConfig(prescreen=True)
    assert detect(frames, cfg) == detect(frames, cfg)


def test_online_detector_matches_batch(attacked_frames):
    _, frames = attacked_frames
    det = Detector(DetectorConfig())
    online = [det.push(f) for f in frames][5:]
    assert online == detect(frames, DetectorConfig())
    assert set(det.last_evidence) == {"src_port", "dst_ip", "ratio"}


def test_short_stream_raises(attacked_frames):
    _, frames = attacked_frames
    with pytest.raises(InsufficientHistory):
        detect(frames[:5], DetectorConfig())
    with pytest.raises(InsufficientHistory):
        evaluate_window(frames[:2], DetectorConfig())


def test_frame_series_matches_windowed_evaluation(attacked_frames):
    _, frames = attacked_frames
    cfg = DetectorConfig(entropy_count=2, combiner="median")
    series = FrameSeries.from_frames(frames)
    ref, cur = windowed(series.entropy("src_port"), cfg.gap, cfg.entropy_count, cfg.combiner)
    for k in range(len(ref)):
        ev = evaluate_window(frames[k:k + cfg.history], cfg)["src_port"]
        assert ev.reference == ref[k] and ev.current == pytest.approx(cur[k])


def test_benign_two_days_stay_quiet():
    profile = dataclasses.replace(DESK_PROFILE, duration=48 * 3600.0)
    series = benign_frame_stats(profile, [300])[300].series()
    assert len(series) == 576
    cfg = DetectorConfig(frame_length=300, entropy_threshold=-3.5)
    ref, cur = windowed(series.entropy("src_port", cfg.base), cfg.gap, cfg.entropy_count, cfg.combiner)
    assert not classify_entropy(ref, cur, cfg.entropy_threshold).any()
    assert np.all(series.udp_flows > 0)


def test_frames_csv(tmp_path, attacked_frames):
    _, frames = attacked_frames
    path = tmp_path / "frames.csv"
    assert write_frames_csv(frames, path) == len(frames)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("frame_index,start") and len(lines) == len(frames) + 1
