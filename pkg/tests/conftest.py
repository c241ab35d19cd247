import random
from ipaddress import IPv4Address

import pytest

from drdos_guard.mitigation import MitigationPlan, Variant
from drdos_guard.packet import HostIdentity

IP_T = IPv4Address("192.0.2.10")
IP_A = IPv4Address("198.51.100.77")
MAC_V = "02:00:00:00:0a:0a"
P_A = 53


@pytest.fixture
def target():
    return HostIdentity(IP_T, MAC_V, 24)


@pytest.fixture
def rng():
    return random.Random(1234)


def make_plan(variant, previous=None, expires=None):
    from ipaddress import IPv4Network

    return MitigationPlan(
        target=HostIdentity(IP_T, MAC_V, 24),
        alias_ip=IP_A,
        attack_port=P_A,
        variant=Variant(variant),
        alias_subnet=IPv4Network("198.51.100.0/24"),
        previous_alias=previous,
        grace_expires_at=expires,
    )


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(name: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
