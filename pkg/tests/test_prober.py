import pytest

from proxysleuth.errors import PairFailed, ResolutionFailed, SiteUnmeasurable
from proxysleuth.liveservers import ObjectSpec
from proxysleuth.prober import (
    Outcome, ProbePair, Prober, ProberConfig, digest, is_valid_hostname,
)
from proxysleuth.rewrite import ContentClass
from proxysleuth.simnet import Faults, Host, Link, Topology, build_network

import oracles


def prober_for(net, **cfg):
    return Prober(net.transport("client"), ProberConfig(**cfg))


def test_pin_from_host_table(chain_net):
    p = prober_for(chain_net())
    ep = p.resolve_and_pin("origin.sim")
    assert ep.pinned_address == "10.0.0.2"


def test_pin_is_first_answer_and_stable():
    hosts = (Host("client", "10.0.0.1"), Host("a", "10.0.0.2"), Host("b", "10.0.0.3"))
    links = (Link("client", "a", 1, 1e6), Link("client", "b", 1, 1e6))
    net = build_network(Topology(hosts, links, {"multi.sim": ["10.0.0.3", "10.0.0.2"]}))
    p = prober_for(net)
    pins = {p.resolve_and_pin("multi.sim") for _ in range(10)}
    assert len(pins) == 1 and pins.pop().pinned_address == "10.0.0.3"


@pytest.mark.parametrize("name", ["nosuch.invalid", "bad_name!", "", "-x.sim", "a" * 300])
def test_resolution_failures(chain_net, name):
    with pytest.raises(ResolutionFailed):
        prober_for(chain_net()).resolve_and_pin(name)


def test_hostname_validation():
    assert is_valid_hostname("www.example.com")
    assert is_valid_hostname("example.com.")
    assert not is_valid_hostname("exa mple.com")


def test_pair_rtts_with_split_proxy(chain_net):
    p = prober_for(chain_net())
    pair = p.probe_pair(p.resolve_and_pin("origin.sim"))
    assert pair.rtt80 == oracles.handshake_ms([5])
    assert pair.rtt443 == oracles.handshake_ms([5, 45])
    assert pair.diff == 90.0


def test_pair_without_proxy(chain_net):
    p = prober_for(chain_net(proxy_on=False))
    pair = p.probe_pair(p.resolve_and_pin("origin.sim"))
    assert pair.rtt80 == pair.rtt443 == 100.0 and pair.diff == 0.0


def test_probe_pair_arithmetic():
    assert ProbePair.from_rtts(10, 100).diff == 90
    assert ProbePair.from_rtts(100, 100).diff == 0


def test_timeout_then_retry(chain_net):
    p = prober_for(chain_net(faults=Faults(drop_first_connections={"origin": 1})))
    pair = p.probe_pair(p.resolve_and_pin("origin.sim"))
    assert pair.diff == 90.0
    assert [s.outcome for s in p.rtt_samples] == [Outcome.TIMEOUT, Outcome.OK, Outcome.OK]


def test_pair_fails_after_retry(chain_net):
    p = prober_for(chain_net(faults=Faults(refuse_ports={"origin": (443,)})))
    with pytest.raises(PairFailed):
        p.probe_pair(p.resolve_and_pin("origin.sim"))


def test_collect_site_probes_counts(chain_net):
    p = prober_for(chain_net())
    ep = p.resolve_and_pin("origin.sim")
    assert len(p.collect_site_probes(ep)) == 4
    assert len(p.collect_site_probes(ep, count=2)) == 2
    with pytest.raises(ValueError):
        p.collect_site_probes(ep, count=1)


def test_refused_443_is_unmeasurable(chain_net):
    p = prober_for(chain_net(faults=Faults(refuse_ports={"origin": (443,)})))
    with pytest.raises(SiteUnmeasurable):
        p.collect_site_probes(p.resolve_and_pin("origin.sim"))


def test_timed_connect_rejects_other_ports(chain_net):
    p = prober_for(chain_net())
    with pytest.raises(ValueError):
        p.timed_connect(p.resolve_and_pin("origin.sim"), 8080)


def test_alternating_order_and_interval(chain_net):
    net = chain_net()
    p = prober_for(net, alternate_order=True, pair_interval_ms=1000)
    pairs = p.collect_site_probes(p.resolve_and_pin("origin.sim"))
    ports = [s.port for s in p.rtt_samples]
    assert ports == [80, 443, 443, 80, 80, 443, 443, 80]
    assert all(pair.diff == 90.0 for pair in pairs)
    assert net.clock.now == pytest.approx(4 * 110 + 3 * 1000)


class SlowClockTransport:
    """Every clock read costs 60 ms, as if the host stalled between probes."""

    def __init__(self):
        self.t = 0.0

    def resolve(self, hostname):
        return ["192.0.2.1"]

    def dial(self, address, port, timeout=10.0):
        class Conn:
            def close(self):
                pass
        return Conn(), 10.0

    def now(self):
        self.t += 60.0
        return self.t

    def sleep(self, ms):
        self.t += ms


def test_gap_limit_rejects_pair():
    p = Prober(SlowClockTransport(), ProberConfig(max_gap_ms=50))
    ep = p.resolve_and_pin("slow.example")
    with pytest.raises(PairFailed):
        p.probe_pair(ep)
    assert len(Prober(SlowClockTransport(), ProberConfig(max_gap_ms=1000))
               .collect_site_probes(ep)) == 4


def test_timed_fetch(chain_net):
    net = chain_net(manifest=[ObjectSpec("/x.css", ContentClass.CSS, 64 * 1024),
                              ObjectSpec("/empty.css", ContentClass.CSS, 0)])
    p = prober_for(net)
    ep = p.resolve_and_pin("origin.sim")
    sample = p.timed_fetch(ep, 443, "/x.css", use_tls=True)
    assert sample.fetch_time == pytest.approx(165.536)
    assert sample.body_length == 65536 and sample.status == 200
    empty = p.timed_fetch(ep, 443, "/empty.css", use_tls=True)
    assert empty.body_length == 0 and empty.body_digest == digest(b"")
    with pytest.raises(ValueError):
        p.timed_fetch(ep, 80, "/x.css", use_tls=True)


def test_cached_fetch_is_client_leg_only(chain_net):
    from proxysleuth.simnet import CacheConfig
    net = chain_net(manifest=[ObjectSpec("/x.css", ContentClass.CSS, 8 * 1024)],
                    cache=CacheConfig(enabled=True))
    p = prober_for(net)
    ep = p.resolve_and_pin("origin.sim")
    p.timed_fetch(ep, 80, "/x.css", use_tls=False)
    hit = p.timed_fetch(ep, 80, "/x.css", use_tls=False)
    assert hit.fetch_time == pytest.approx(oracles.proxied_hit_ms([5], 8 * 1024, 1e6))
