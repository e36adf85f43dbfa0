"""Host-header redirection check against two controlled sentinel servers.

For each direction a GET is sent to one sentinel's address carrying the
other sentinel's name in ``Host:``.  A transparent proxy that re-resolves
the Host header delivers it to the name's owner instead of the address's
owner.  The sentinels are then asked over the control port (443, which the
proxy under test does not touch) which of them saw the token.
"""
from __future__ import annotations

import enum
import logging
import secrets
from dataclasses import dataclass
from typing import Callable

from .errors import (
    ConnectRefused,
    ConnectTimeout,
    FetchTimeout,
    SentinelUnreachable,
    TlsFailure,
)
from .prober import Prober

log = logging.getLogger(__name__)

CONTROL_PREFIX = "/control/received/"
PROBE_PREFIX = "/probe/"
QUERY_ATTEMPTS = 3
QUERY_INTERVAL_S = 2.0


@dataclass(frozen=True)
class SentinelConfig:
    name: str
    hostname: str
    address: str
    control_port: int = 443
    data_port: int = 80


@dataclass(frozen=True)
class RedirectProbe:
    token: str
    host_header: str
    target_address: str
    sent_at: float


class DirectionResult(str, enum.Enum):
    HOST_OWNER = "ReceivedByHostOwner"
    ADDRESS_OWNER = "ReceivedByAddressOwner"
    NEITHER = "ReceivedByNeither"


@dataclass(frozen=True)
class RedirectVerdict:
    direction_results: dict[str, DirectionResult]
    redirection_detected: bool
    probes: tuple[RedirectProbe, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def inconclusive(self) -> bool:
        return len(self.direction_results) < 2


def random_token() -> str:
    return secrets.token_hex(16)


def control_path(token: str) -> str:
    return CONTROL_PREFIX + token


def probe_path(token: str) -> str:
    return PROBE_PREFIX + token


def token_from_path(path: str) -> str | None:
    if path.startswith(PROBE_PREFIX):
        token = path[len(PROBE_PREFIX):].split("?", 1)[0].strip("/")
        return token or None
    return None


def _received(prober: Prober, sentinel: SentinelConfig, token: str) -> bool:
    resp = prober.request(sentinel.address, sentinel.control_port, control_path(token),
                          sentinel.hostname, use_tls=sentinel.control_port == 443)
    if resp.status != 200:
        raise SentinelUnreachable(f"{sentinel.name}: control status {resp.status}")
    return resp.body.strip() == b"true"


def _query(prober: Prober, sentinel: SentinelConfig, token: str) -> bool | None:
    try:
        return _received(prober, sentinel, token)
    except (ConnectTimeout, ConnectRefused, FetchTimeout, TlsFailure, SentinelUnreachable) as exc:
        log.debug("control query to %s failed: %s", sentinel.name, exc)
        return None


def run_redirect_probe(e1: SentinelConfig, e2: SentinelConfig, prober: Prober, *,
                       token_factory: Callable[[], str] = random_token,
                       attempts: int = QUERY_ATTEMPTS,
                       interval_s: float = QUERY_INTERVAL_S) -> RedirectVerdict:
    if e1.address == e2.address:
        raise ValueError("sentinels must have distinct addresses")
    transport = prober.transport
    results: dict[str, DirectionResult] = {}
    probes, warnings = [], []
    used: set[str] = set()

    for host_owner, addr_owner in ((e1, e2), (e2, e1)):
        label = f"{host_owner.name}->{addr_owner.name}"
        token = token_factory()
        while token in used:
            token = token_factory()
        used.add(token)
        probe = RedirectProbe(token, host_owner.hostname, addr_owner.address, transport.now())
        probes.append(probe)
        try:
            prober.request(addr_owner.address, addr_owner.data_port, probe_path(token),
                           host_owner.hostname, use_tls=False)
        except (ConnectTimeout, ConnectRefused, FetchTimeout) as exc:
            warnings.append(f"{label}: data request failed ({type(exc).__name__})")

        outcome = None
        reachable = False
        for attempt in range(attempts):
            if attempt:
                transport.sleep(interval_s * 1000.0)
            by_host = _query(prober, host_owner, token)
            by_addr = _query(prober, addr_owner, token)
            reachable = reachable or by_host is not None or by_addr is not None
            if by_host and by_addr:
                warnings.append(f"{label}: token logged by both sentinels")
            if by_host:
                outcome = DirectionResult.HOST_OWNER
                break
            if by_addr:
                outcome = DirectionResult.ADDRESS_OWNER
                break
        if not reachable:
            raise SentinelUnreachable(f"{label}: no sentinel answered the control API")
        if outcome is None:
            outcome = DirectionResult.NEITHER
            warnings.append(f"{label}: token {token} reached neither sentinel")
        results[label] = outcome

    detected = any(r is DirectionResult.HOST_OWNER for r in results.values())
    return RedirectVerdict(results, detected, tuple(probes), tuple(warnings))
