"""Alias-NAT mitigation: plans, rule programs, controller NAT and rotation.

While a plan is active, the protected host's outgoing UDP requests to the
attack port leave with a secret alias source address.  Only responses sent
to that alias are rewritten back and delivered; responses addressed to the
real address on the attack port are dropped.
"""

from __future__ import annotations

import dataclasses
import enum
import random
import secrets
import threading
from dataclasses import dataclass
from ipaddress import IPv4Address, IPv4Network
from typing import Iterable, Optional, Union

from .errors import NotAnArpRequest, SubnetExhausted
from .flowtable import (
    Action,
    Disposition,
    FlowEntry,
    FlowTable,
    MatchPattern,
    Pipeline,
    SetField,
    SetFieldName,
    Terminal,
)
from .packet import ARP_REPLY, ARP_REQUEST, BROADCAST_MAC, ETH_TYPE_ARP, ETH_TYPE_IPV4, HostIdentity, PacketHeaderView

TOP_PRIORITY = 1000


class Variant(enum.Enum):
    CONTROLLER_ASSISTED = "controller"
    SWITCH_ONLY = "switch"

    @property
    def other(self) -> "Variant":
        return Variant.SWITCH_ONLY if self is Variant.CONTROLLER_ASSISTED else Variant.CONTROLLER_ASSISTED


@dataclass(frozen=True)
class MitigationPlan:
    target: HostIdentity
    alias_ip: IPv4Address
    attack_port: int
    variant: Variant
    alias_subnet: IPv4Network
    activated_at: float = 0.0
    previous_alias: Optional[IPv4Address] = None
    grace_expires_at: Optional[float] = None

    def __post_init__(self) -> None:
        if not 1 <= self.attack_port <= 65535:
            raise ValueError(f"attack port {self.attack_port} outside 1..65535")
        if self.alias_ip == self.target.ip:
            raise ValueError("alias must differ from the target address")
        if self.alias_ip not in self.alias_subnet:
            raise ValueError(f"alias {self.alias_ip} outside alias subnet {self.alias_subnet}")
        if self.previous_alias is not None:
            if self.previous_alias == self.alias_ip:
                raise ValueError("previous alias equals the current alias")
            if self.grace_expires_at is None:
                raise ValueError("previous alias needs a grace expiry")

    @property
    def aliases(self) -> tuple[IPv4Address, ...]:
        """Aliases whose responses are currently accepted, newest first."""
        if self.previous_alias is None:
            return (self.alias_ip,)
        return (self.alias_ip, self.previous_alias)


def _host_range(subnet: IPv4Network) -> tuple[int, int]:
    first = int(subnet.network_address) + 1
    last = int(subnet.broadcast_address) - 1
    return first, last


def allocate_alias(
    alias_subnet: Union[str, IPv4Network],
    in_use: Iterable[IPv4Address] = (),
    rng_seed: Optional[int] = None,
    rng: Optional[random.Random] = None,
) -> IPv4Address:
    """Pick a uniformly random free host address in ``alias_subnet``.

    Network and broadcast addresses are never returned.  Without a seed or
    ``rng`` the draw comes from the operating system's CSPRNG, so the alias
    cannot be predicted from earlier ones.
    """
    subnet = IPv4Network(alias_subnet)
    first, last = _host_range(subnet)
    size = last - first + 1
    taken = {int(a) for a in in_use if first <= int(a) <= last}
    free = size - len(taken)
    if size <= 0 or free <= 0:
        raise SubnetExhausted(f"no free host address in {subnet}")
    if rng is None:
        rng = random.Random(rng_seed) if rng_seed is not None else secrets.SystemRandom()
    if len(taken) <= size // 2:
        while True:
            candidate = first + rng.randrange(size)
            if candidate not in taken:
                return IPv4Address(candidate)
    pick = rng.randrange(free)
    for candidate in range(first, last + 1):
        if candidate in taken:
            continue
        if pick == 0:
            return IPv4Address(candidate)
        pick -= 1
    raise AssertionError("unreachable")


def _entry(plan: MitigationPlan, name: str, pattern: MatchPattern, action: Action) -> FlowEntry:
    # priority is filled in by compile_rules from row order
    return FlowEntry(id=f"{plan.target.ip}/{name}", priority=0, pattern=pattern, action=action)


def _arp_reply_fields(plan: MitigationPlan, alias: IPv4Address) -> tuple[SetField, ...]:
    mac = plan.target.mac
    return (
        SetField(SetFieldName.ETH_SRC, mac),
        SetField(SetFieldName.ETH_DST, BROADCAST_MAC),
        SetField(SetFieldName.ARP_OP, ARP_REPLY),
        SetField(SetFieldName.ARP_SPA, alias),
        SetField(SetFieldName.ARP_SHA, mac),
        SetField(SetFieldName.ARP_TPA, plan.target.subnet_broadcast),
        SetField(SetFieldName.ARP_THA, BROADCAST_MAC),
    )


def compile_rules(plan: MitigationPlan) -> list[FlowEntry]:
    """Flow entries for a plan, highest priority first.

    The controller-assisted program punts outgoing requests, alias responses
    and all ARP to the controller; the switch-only program does the rewrites
    and the ARP reply with set-field actions.  A live previous alias adds
    its own alias-response row (and, switch-only, its own ARP row).
    """
    ip_t, p_a = plan.target.ip, plan.attack_port
    switch_only = plan.variant is Variant.SWITCH_ONLY
    ipv4 = ETH_TYPE_IPV4

    if switch_only:
        nat_out = Action(Terminal.OUTPUT_NORMAL, (SetField(SetFieldName.IPV4_SRC, plan.alias_ip),))
    else:
        nat_out = Action(Terminal.CONTROLLER)
    rows = [
        _entry(plan, "request-nat", MatchPattern(ether_type=ipv4, ipv4_src=ip_t, udp_dst=p_a), nat_out),
        _entry(
            plan,
            "outgoing-response",
            MatchPattern(ether_type=ipv4, ipv4_src=ip_t, udp_src=p_a),
            Action(Terminal.OUTPUT_NORMAL),
        ),
        _entry(
            plan,
            "incoming-request",
            MatchPattern(ether_type=ipv4, ipv4_dst=ip_t, udp_dst=p_a),
            Action(Terminal.OUTPUT_TARGET),
        ),
        _entry(plan, "drop-response", MatchPattern(ether_type=ipv4, ipv4_dst=ip_t, udp_src=p_a), Action(Terminal.DROP)),
    ]
    for alias in plan.aliases:
        if switch_only:
            action = Action(Terminal.OUTPUT_TARGET, (SetField(SetFieldName.IPV4_DST, ip_t),))
        else:
            action = Action(Terminal.CONTROLLER)
        rows.append(
            _entry(plan, f"alias-response/{alias}", MatchPattern(ether_type=ipv4, ipv4_dst=alias, udp_src=p_a), action)
        )
    if switch_only:
        for alias in plan.aliases:
            rows.append(
                _entry(
                    plan,
                    f"arp-reply/{alias}",
                    MatchPattern(ether_type=ETH_TYPE_ARP, arp_op=ARP_REQUEST, arp_tpa=alias),
                    Action(Terminal.OUTPUT_TARGET, _arp_reply_fields(plan, alias)),
                )
            )
    else:
        rows.append(_entry(plan, "arp", MatchPattern(ether_type=ETH_TYPE_ARP), Action(Terminal.CONTROLLER)))
    return [dataclasses.replace(e, priority=TOP_PRIORITY - i) for i, e in enumerate(rows)]


def synthesize_arp_reply(plan: MitigationPlan, view: PacketHeaderView) -> PacketHeaderView:
    """Answer an ARP request for an accepted alias on behalf of the target.

    The reply is broadcast and names the target's subnet broadcast address
    as the target protocol address, exactly as the switch-only rule does.
    """
    arp = view.arp
    if arp is None or arp.op != ARP_REQUEST:
        raise NotAnArpRequest("view is not an ARP request")
    if arp.tpa not in plan.aliases:
        raise ValueError(f"ARP request for {arp.tpa}, which is not an accepted alias")
    mac = plan.target.mac
    reply = dataclasses.replace(
        arp, op=ARP_REPLY, spa=arp.tpa, sha=mac, tpa=plan.target.subnet_broadcast, tha=BROADCAST_MAC
    )
    return dataclasses.replace(view, eth_src=mac, eth_dst=BROADCAST_MAC, arp=reply, trailer=b"")


def controller_nat(plan: MitigationPlan, view: PacketHeaderView) -> Disposition:
    ip, udp, p_a = view.ipv4, view.udp, plan.attack_port
    if ip is not None and udp is not None:
        if ip.src == plan.target.ip and udp.dst_port == p_a:
            return Disposition.forwarded(dataclasses.replace(view, ipv4=dataclasses.replace(ip, src=plan.alias_ip)))
        if ip.dst in plan.aliases and udp.src_port == p_a:
            return Disposition.delivered(dataclasses.replace(view, ipv4=dataclasses.replace(ip, dst=plan.target.ip)))
    arp = view.arp
    if arp is not None and arp.op == ARP_REQUEST and arp.tpa in plan.aliases:
        return Disposition.reply(synthesize_arp_reply(plan, view))
    return Disposition.forwarded(view)


def rotate_alias(
    plan: MitigationPlan, now: float, grace: float, rng: Optional[random.Random] = None
) -> MitigationPlan:
    """Move to a fresh alias; the old one stays accepted until ``now + grace``.

    Only one previous alias is kept, so rotating again inside a grace window
    forgets the older one.
    """
    in_use = {plan.target.ip, plan.alias_ip}
    if plan.previous_alias is not None:
        in_use.add(plan.previous_alias)
    new_alias = allocate_alias(plan.alias_subnet, in_use, rng=rng)
    if grace > 0:
        return dataclasses.replace(plan, alias_ip=new_alias, previous_alias=plan.alias_ip, grace_expires_at=now + grace)
    return dataclasses.replace(plan, alias_ip=new_alias, previous_alias=None, grace_expires_at=None)


def expire_grace(plan: MitigationPlan, now: float) -> MitigationPlan:
    if plan.previous_alias is not None and now >= plan.grace_expires_at:
        return dataclasses.replace(plan, previous_alias=None, grace_expires_at=None)
    return plan


def deactivate(plan: MitigationPlan) -> list:
    """Ids of every entry the plan installs."""
    return [e.id for e in compile_rules(plan)]


def plan_state(plan: MitigationPlan) -> str:
    """Line-oriented key=value dump of a plan."""
    lines = [
        f"target_ip={plan.target.ip}",
        f"target_mac={plan.target.mac}",
        f"target_prefix={plan.target.subnet_prefix_length}",
        f"alias_ip={plan.alias_ip}",
        f"alias_subnet={plan.alias_subnet}",
        f"attack_port={plan.attack_port}",
        f"variant={plan.variant.value}",
        f"activated_at={plan.activated_at:g}",
        f"previous_alias={plan.previous_alias or ''}",
        f"grace_expires_at={'' if plan.grace_expires_at is None else format(plan.grace_expires_at, 'g')}",
    ]
    return "\n".join(lines) + "\n"


def parse_plan_state(text: str) -> MitigationPlan:
    kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
    return MitigationPlan(
        target=HostIdentity(IPv4Address(kv["target_ip"]), kv["target_mac"], int(kv.get("target_prefix", 24))),
        alias_ip=IPv4Address(kv["alias_ip"]),
        attack_port=int(kv["attack_port"]),
        variant=Variant(kv["variant"]),
        alias_subnet=IPv4Network(kv["alias_subnet"]),
        activated_at=float(kv.get("activated_at") or 0.0),
        previous_alias=IPv4Address(kv["previous_alias"]) if kv.get("previous_alias") else None,
        grace_expires_at=float(kv["grace_expires_at"]) if kv.get("grace_expires_at") else None,
    )


class MitigationManager:
    """Keeps one plan's rules installed in a flow table.

    Every plan change swaps the whole rule set in one atomic table update,
    so packets never see a half-rotated plan.
    """

    def __init__(
        self,
        table: FlowTable,
        alias_subnet: Union[str, IPv4Network],
        variant: Variant = Variant.SWITCH_ONLY,
        rng: Optional[random.Random] = None,
    ) -> None:
        self.table = table
        self.alias_subnet = IPv4Network(alias_subnet)
        self.variant = variant
        self.rng = rng
        self.plan: Optional[MitigationPlan] = None
        self._installed: list = []
        self._lock = threading.Lock()

    def apply_plan(self, plan: Optional[MitigationPlan]) -> None:
        with self._lock:
            entries = compile_rules(plan) if plan is not None else []
            self.table.modify(remove=self._installed, install=entries)
            self._installed = [e.id for e in entries]
            self.plan = plan

    def activate(self, target: HostIdentity, attack_port: int, now: float) -> MitigationPlan:
        if target.ip in self.alias_subnet:
            raise ValueError("alias subnet must not contain the protected host")
        alias = allocate_alias(self.alias_subnet, {target.ip}, rng=self.rng)
        plan = MitigationPlan(target, alias, attack_port, self.variant, self.alias_subnet, activated_at=now)
        self.apply_plan(plan)
        return plan

    def rotate(self, now: float, grace: float) -> MitigationPlan:
        if self.plan is None:
            raise RuntimeError("no active plan to rotate")
        plan = rotate_alias(expire_grace(self.plan, now), now, grace, rng=self.rng)
        self.apply_plan(plan)
        return plan

    def tick(self, now: float) -> None:
        """Drop the previous alias once its grace period is over."""
        if self.plan is not None and self.plan.previous_alias is not None:
            plan = expire_grace(self.plan, now)
            if plan is not self.plan:
                self.apply_plan(plan)

    def deactivate(self) -> list:
        """Remove the plan's rules; returns the removed ids (empty if inactive)."""
        with self._lock:
            removed = self.table.remove(self._installed)
            self._installed = []
            self.plan = None
        return removed

    def controller(self, view: PacketHeaderView) -> Disposition:
        if self.plan is None:
            return Disposition.forwarded(view)
        return controller_nat(self.plan, view)

    def pipeline(self) -> Pipeline:
        return Pipeline(self.table, self.controller)
