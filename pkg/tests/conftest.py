import pytest

from proxysleuth.liveservers import make_self_signed_cert
from proxysleuth.simnet import (
    Host, Link, Topology, ProxyboxConfig, build_network, load_scenario,
)


def chain(proxy_on=True, split=True, jitter=0.0, bw_client=1.0e6, bw_up=1.0e7, **proxy):
    """client --5ms-- gw --45ms-- origin, the textbook path."""
    hosts = (Host("client", "10.0.0.1", "client"), Host("gw", "10.0.0.254"),
             Host("origin", "10.0.0.2", "origin"))
    links = (Link("client", "gw", 5.0, bw_client, jitter), Link("gw", "origin", 45.0, bw_up, jitter))
    topo = Topology(hosts, links, {"origin.sim": "10.0.0.2"}, "gw" if proxy_on else None)
    return topo, ProxyboxConfig(split_handshake=split, **proxy)


@pytest.fixture
def make_chain():
    return chain


@pytest.fixture
def chain_net():
    def build(manifest=None, seed=0, faults=None, **kw):
        from proxysleuth.liveservers import default_manifest
        topo, cfg = chain(**kw)
        return build_network(topo, cfg, seed, origins={"origin": manifest or default_manifest()},
                             faults=faults)
    return build


@pytest.fixture
def scenario():
    return load_scenario


@pytest.fixture(scope="session")
def certs(tmp_path_factory):
    d = tmp_path_factory.mktemp("certs")
    return make_self_signed_cert(["origin.test", "e1.test", "e2.test", "localhost"], d)
