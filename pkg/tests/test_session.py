import pytest

from proxysleuth.errors import ConfigInvalid, ScenarioNotFound
from proxysleuth.session import (
    Mode, SessionConfig, env_overrides, load_session_config, run_scenario, run_session,
)
from proxysleuth.simnet import bundled_scenario_dir


def sim(name, **kw):
    return SessionConfig(mode=Mode.SIM, scenario=name, **kw)


def test_proxy_on_seed_42():
    assert run_session(sim("proxy-on.scn", seed=42)).proxy_present is True


def test_no_proxy():
    assert run_session(sim("no-proxy.scn", seed=42)).proxy_present is False


def test_real_mode_needs_destinations():
    with pytest.raises(ConfigInvalid):
        run_session(SessionConfig())


@pytest.mark.parametrize("field, value", [
    ("probes_per_site", 0), ("far_filter_multiplier", -1.0), ("network_threshold_fraction", 0),
    ("network_threshold_fraction", 1.5), ("min_object_size", 0), ("cache_pairs", 1),
    ("cache_cooldown_seconds", 0), ("filter_mode", "sideways"), ("suites", ["nope"]),
    ("sentinels", [{"hostname": "a"}]), ("objects", ["not a url"]),
])
def test_invalid_config(field, value):
    cfg = SessionConfig(destinations=["example.com"])
    setattr(cfg, field, value)
    with pytest.raises(ConfigInvalid):
        cfg.validate()


def test_sim_needs_scenario():
    with pytest.raises(ConfigInvalid):
        run_session(SessionConfig(mode=Mode.SIM))


def test_missing_scenario():
    with pytest.raises(ScenarioNotFound):
        run_session(sim("does-not-exist.scn"))


def test_config_file_env_and_overrides(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("destinations: [a.example, b.example]\nprobes_per_site: 6\ncache_pairs: 3\n")
    env = {"PROXYSLEUTH_PROBES_PER_SITE": "8", "PROXYSLEUTH_DESTINATIONS": "c.example,d.example",
           "PROXYSLEUTH_ALTERNATE_ORDER": "true", "UNRELATED": "1"}
    cfg = load_session_config(path, {"cache_pairs": 5, "seed": None}, environ=env)
    assert cfg.probes_per_site == 8 and cfg.cache_pairs == 5
    assert cfg.destinations == ["c.example", "d.example"] and cfg.alternate_order is True
    assert env_overrides({"PROXYSLEUTH_NOT_A_FIELD": "1"}) == {}


def test_unknown_config_keys(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("destinatons: [a.example]\n")
    with pytest.raises(ConfigInvalid):
        load_session_config(path, environ={})


def test_sim_reports_are_byte_identical():
    a = run_session(sim("caching.scn", seed=9)).to_json()
    b = run_session(sim("caching.scn", seed=9)).to_json()
    c = run_session(sim("caching.scn", seed=10)).to_json()
    assert a == b and a != c


def test_explicit_config_beats_scenario_session(scenario):
    rep = run_scenario(scenario("proxy-on.scn"), 1, sim("proxy-on.scn", probes_per_site=6))
    assert all(len(p) == 6 for p in rep.probe_pairs.values())


def test_failures_degrade_to_warnings(scenario):
    sc = scenario("proxy-on.scn").with_overrides(
        faults={"refuse_ports": {"far-00": [443]}},
        topology={"host_table": {"ghost.sim": "10.0.0.254"}})
    cfg = sim("proxy-on.scn", destinations=[f"far-{i:02d}.sim" for i in range(20)]
              + ["nosuch.sim"])
    rep = run_scenario(sc, 3, cfg)
    assert rep.proxy_present is True
    assert any("nosuch.sim" in w for w in rep.warnings)
    assert any("far-00.sim" in w for w in rep.warnings)
    assert "far-00.sim" not in rep.probe_pairs


def test_per_site_filter_mode(scenario):
    rep = run_scenario(scenario("mixed-distance.scn"), 2, sim("mixed-distance.scn",
                                                              filter_mode="per-site"))
    assert rep.filter.mode == "per-site" and rep.filter.threshold is None
    assert all(len(v) == 4 for v in rep.filter.per_site_samples.values())
    from proxysleuth.report import verify_report
    assert verify_report(rep) == []


def test_full_scenario_all_suites(scenario):
    sc = scenario("caching.scn")
    rep = run_scenario(sc, 0, sim("caching.scn", suites=["cache", "rewrite"]))
    assert rep.cache_verdicts and rep.rewrite_verdicts
    assert all(v.classification.value == "NoRewrite" for v in rep.rewrite_verdicts)


def test_bundled_dir_has_six():
    assert len(list(bundled_scenario_dir().glob("*.scn"))) == 6
