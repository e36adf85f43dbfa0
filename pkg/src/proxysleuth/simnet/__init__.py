"""Deterministic user-space network with a configurable transparent proxy."""
from .clock import ClockMode, SimClock
from .fabric import Faults, SimNet, SimTransport, build_network
from .proxybox import (
    CacheConfig,
    Proxybox,
    ProxyboxConfig,
    RedirectorConfig,
    SimRequest,
    Stage,
    TranscoderConfig,
    cache_expiry,
)
from .scenario import Scenario, bundled_scenario_dir, load_scenario, scenario_from_dict
from .topology import Host, Link, Path, Topology

__all__ = [
    "CacheConfig", "ClockMode", "Faults", "Host", "Link", "Path", "Proxybox",
    "ProxyboxConfig", "RedirectorConfig", "Scenario", "SimClock", "SimNet",
    "SimRequest", "SimTransport", "Stage", "Topology", "TranscoderConfig",
    "build_network", "bundled_scenario_dir", "cache_expiry", "load_scenario",
    "scenario_from_dict",
]
