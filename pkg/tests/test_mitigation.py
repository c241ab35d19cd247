import random
from collections import Counter
from ipaddress import IPv4Address, IPv4Network

import pytest

from conftest import IP_A, IP_T, MAC_V, P_A, make_plan
from drdos_guard.errors import NotAnArpRequest, SubnetExhausted
from drdos_guard.flowtable import FlowTable, MatchPattern, Outcome, SetField, SetFieldName, Terminal
from drdos_guard.mitigation import (
    MitigationManager,
    Variant,
    allocate_alias,
    compile_rules,
    controller_nat,
    deactivate,
    expire_grace,
    parse_plan_state,
    plan_state,
    rotate_alias,
    synthesize_arp_reply,
)
from drdos_guard.packet import BROADCAST_MAC, ETH_TYPE_ARP, ETH_TYPE_IPV4, arp_packet, serialize_frame, tcp_packet, udp_packet

OLD = IPv4Address("198.51.100.5")


def test_alias_in_host_range():
    subnet = IPv4Network("198.51.100.0/24")
    draws = {allocate_alias(subnet, rng_seed=s) for s in range(2000)}
    assert all(subnet.network_address < a < subnet.broadcast_address for a in draws)
    assert len(draws) > 200


def test_unseeded_alias_is_valid():
    a = allocate_alias("198.51.100.0/24")
    assert a in IPv4Network("198.51.100.0/24")


def test_full_subnet():
    with pytest.raises(SubnetExhausted):
        allocate_alias("198.51.100.0/30", {IPv4Address("198.51.100.1"), IPv4Address("198.51.100.2")}, rng_seed=1)


def test_dense_subnet_uses_remaining_address():
    in_use = {IPv4Address(f"198.51.100.{i}") for i in range(1, 255) if i != 99}
    assert allocate_alias("198.51.100.0/24", in_use, rng_seed=5) == IPv4Address("198.51.100.99")


def test_seeded_draws():
    assert allocate_alias("10.9.0.0/16", rng_seed=42) == allocate_alias("10.9.0.0/16", rng_seed=42)
    draws = [allocate_alias("10.9.0.0/16", rng_seed=s) for s in range(1000)]
    dupes = len(draws) - len(set(draws))
    # birthday bound: 1000^2 / (2 * 65534) is about 7.6 expected collisions
    assert dupes <= 20


def test_switch_row_one():
    rules = compile_rules(make_plan("switch"))
    row = rules[0]
    assert row.pattern == MatchPattern(ether_type=ETH_TYPE_IPV4, ipv4_src=IP_T, udp_dst=P_A)
    assert row.action.set_fields == (SetField(SetFieldName.IPV4_SRC, IP_A),)
    assert row.action.terminal is Terminal.OUTPUT_NORMAL


def test_controller_arp_row():
    row = compile_rules(make_plan("controller"))[-1]
    assert row.pattern == MatchPattern(ether_type=ETH_TYPE_ARP)
    assert row.action.terminal is Terminal.CONTROLLER and row.action.set_fields == ()


def test_grace_adds_rows():
    assert len(compile_rules(make_plan("controller", OLD, 10.0))) == 7
    assert len(compile_rules(make_plan("switch", OLD, 10.0))) == 8


def test_priorities_descend_and_compile_is_deterministic():
    for v in ("controller", "switch"):
        rules = compile_rules(make_plan(v, OLD, 10.0))
        prios = [r.priority for r in rules]
        assert prios == sorted(prios, reverse=True) and len(set(prios)) == len(prios)
        assert rules == compile_rules(make_plan(v, OLD, 10.0))


def test_plan_invariants():
    with pytest.raises(ValueError):
        make_plan("switch").__class__(**{**make_plan("switch").__dict__, "alias_ip": IP_T})
    with pytest.raises(ValueError):
        make_plan("switch", IP_A, 5.0)
    with pytest.raises(ValueError):
        make_plan("switch").__class__(**{**make_plan("switch").__dict__, "attack_port": 0})


def test_controller_nat_request_and_response():
    plan = make_plan("controller")
    out = controller_nat(plan, udp_packet(IP_T, 5555, "203.0.113.9", 53))
    assert out.outcome is Outcome.FORWARDED_NORMAL
    assert (out.view.ipv4.src, out.view.udp.src_port, out.view.ipv4.dst) == (IP_A, 5555, IPv4Address("203.0.113.9"))
    back = controller_nat(plan, udp_packet("203.0.113.9", 53, IP_A, 5555))
    assert back.outcome is Outcome.DELIVERED_TO_TARGET
    assert (back.view.ipv4.dst, back.view.udp.dst_port) == (IP_T, 5555)


def test_controller_nat_other_traffic_unchanged():
    plan = make_plan("controller")
    view = udp_packet("203.0.113.9", 123, "10.0.0.1", 5555)
    assert controller_nat(plan, view).view == view


def test_arp_reply_fields():
    plan = make_plan("switch")
    req = arp_packet(1, "02:00:00:00:00:01", "192.0.2.1", IP_A)
    reply = synthesize_arp_reply(plan, req)
    assert (reply.eth_src, reply.eth_dst) == (MAC_V, BROADCAST_MAC)
    a = reply.arp
    assert (a.op, a.spa, a.sha, a.tpa, a.tha) == (2, IP_A, MAC_V, IPv4Address("192.0.2.255"), BROADCAST_MAC)
    assert len(serialize_frame(reply)) == 42
    assert controller_nat(plan, req).view == reply


def test_arp_reply_for_previous_alias_during_grace():
    plan = make_plan("switch", OLD, 50.0)
    reply = synthesize_arp_reply(plan, arp_packet(1, "02:00:00:00:00:01", "192.0.2.1", OLD))
    assert reply.arp.spa == OLD


def test_arp_reply_preconditions():
    plan = make_plan("switch")
    with pytest.raises(NotAnArpRequest):
        synthesize_arp_reply(plan, udp_packet(IP_T, 1, IP_A, 2))
    with pytest.raises(NotAnArpRequest):
        synthesize_arp_reply(plan, arp_packet(2, "02:00:00:00:00:01", "192.0.2.1", IP_A))
    with pytest.raises(ValueError):
        synthesize_arp_reply(plan, arp_packet(1, "02:00:00:00:00:01", "192.0.2.1", "192.0.2.99"))
    # the controller handles the unrelated request by forwarding it
    unrelated = arp_packet(1, "02:00:00:00:00:01", "192.0.2.1", "192.0.2.99")
    assert controller_nat(plan, unrelated).outcome is Outcome.FORWARDED_NORMAL


def manager(variant="switch", seed=3):
    return MitigationManager(FlowTable(), "198.51.100.0/24", Variant(variant), rng=random.Random(seed))


def test_rotation_timeline(target):
    m = manager()
    m.activate(target, P_A, now=0.0)
    pipe = m.pipeline()
    old = m.plan.alias_ip
    m.rotate(now=100.0, grace=30.0)
    assert m.plan.previous_alias == old and m.plan.grace_expires_at == 130.0
    m.tick(120.0)
    d = pipe.process(udp_packet("203.0.113.9", 53, old, 5555, timestamp=120.0))
    assert d.outcome is Outcome.DELIVERED_TO_TARGET and d.view.ipv4.dst == IP_T
    m.tick(131.0)
    assert m.plan.previous_alias is None
    d = pipe.process(udp_packet("203.0.113.9", 53, old, 5555, timestamp=131.0))
    assert d.outcome is Outcome.FORWARDED_NORMAL and d.view.ipv4.dst == old


def test_rotating_twice_keeps_only_latest_previous(target):
    m = manager()
    first = m.activate(target, P_A, 0.0).alias_ip
    second = m.rotate(10.0, 60.0).alias_ip
    plan = m.rotate(20.0, 60.0)
    assert plan.previous_alias == second and first not in plan.aliases


def test_zero_grace(target):
    plan = make_plan("switch")
    rotated = rotate_alias(plan, 5.0, 0.0, random.Random(1))
    assert rotated.previous_alias is None and rotated.alias_ip != plan.alias_ip
    assert expire_grace(make_plan("switch", OLD, 5.0), 5.0).previous_alias is None


def test_deactivate(target):
    m = manager()
    m.activate(target, P_A, 0.0)
    m.rotate(10.0, 60.0)
    ids = m.deactivate()
    assert len(ids) == 8 and len(m.table) == 0
    assert m.deactivate() == []
    pipe = m.pipeline()
    for view in (udp_packet("172.16.0.1", 53, IP_T, 999), udp_packet(IP_T, 999, "203.0.113.9", 53),
                 tcp_packet("203.0.113.9", 80, IP_T, 999)):
        assert pipe.process(view).outcome is Outcome.FORWARDED_NORMAL
    assert sorted(deactivate(make_plan("switch", OLD, 5.0))) == sorted(e.id for e in compile_rules(make_plan("switch", OLD, 5.0)))


def test_activation_refuses_target_inside_alias_subnet():
    from drdos_guard.packet import HostIdentity

    with pytest.raises(ValueError):
        manager().activate(HostIdentity(IPv4Address("198.51.100.9"), MAC_V), P_A, 0.0)


@pytest.mark.parametrize("variant", ["controller", "switch"])
def test_security_properties_on_mixed_traffic(variant, target):
    m = manager(variant)
    m.activate(target, P_A, 0.0)
    m.rotate(1.0, 100.0)
    pipe, rng = m.pipeline(), random.Random(9)
    alias_set = set(m.plan.aliases)
    counts = Counter()
    for _ in range(3000):
        src = rng.choice([IP_T, IPv4Address("203.0.113.9"), IPv4Address("172.16.0.9")])
        dst = rng.choice([IP_T, *alias_set, IPv4Address("203.0.113.9")])
        sport, dport = rng.choice([P_A, 5555, 123]), rng.choice([P_A, 5555, 123])
        view = udp_packet(src, sport, dst, dport)
        d = pipe.process(view)
        counts[d.outcome] += 1
        if d.outcome is Outcome.DELIVERED_TO_TARGET:
            # transparency: the host never sees the alias
            assert d.view.ipv4.dst == IP_T and d.view.ipv4.src not in alias_set
        if dst == IP_T and sport == P_A and src != IP_T:
            assert d.outcome is Outcome.DROPPED or dport == P_A  # incoming-request row outranks drop
        if dst == IP_T and dport == P_A and src != IP_T:
            assert d.outcome is Outcome.DELIVERED_TO_TARGET and d.view == view
        if src == IP_T and sport == P_A and dport != P_A:
            assert d.outcome is Outcome.FORWARDED_NORMAL and d.view == view
        if sport == P_A and src != IP_T:
            reaches = d.outcome is Outcome.DELIVERED_TO_TARGET
            assert reaches == (dst in alias_set or (dst == IP_T and dport == P_A))
    assert counts[Outcome.DROPPED] > 0


def test_plan_state_round_trip():
    plan = make_plan("controller", OLD, 42.5)
    assert parse_plan_state(plan_state(plan)) == plan
    assert "alias_ip=198.51.100.77" in plan_state(plan)
