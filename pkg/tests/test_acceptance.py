"""Acceptance criteria, each reported as one PASS/FAIL line.

Ground truth is derived from the scenario's proxy configuration and the
exact-arithmetic oracles, not from the code under test.
"""
import copy
import math
import random
import time

import pytest

from proxysleuth import inference as inf
from proxysleuth.report import export_csv_tables
from proxysleuth.rewrite import IMAGE_CLASSES, RewriteClass
from proxysleuth.redirect import DirectionResult
from proxysleuth.session import SessionConfig, run_scenario
from proxysleuth.simnet import load_scenario
from proxysleuth.simnet.scenario import bundled_scenario_dir, list_scenarios, scenario_from_dict

import oracles

SEEDS_100 = range(100)
SEEDS_50 = range(50)
MIN_OBJECT_SIZE = SessionConfig().min_object_size


@pytest.fixture
def report_line(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance] criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
    return emit


def bundled(name):
    return load_scenario(bundled_scenario_dir() / f"{name}.scn")


def without_jitter(scenario):
    raw = copy.deepcopy(scenario.raw)

    def walk(node):
        if isinstance(node, dict):
            for key, value in node.items():
                if key == "jitter_sd_ms":
                    node[key] = 0.0
                else:
                    walk(value)
        elif isinstance(node, list):
            for item in node:
                walk(item)
    walk(raw)
    return scenario_from_dict(raw, scenario.source)


def test_1_detection_positive(report_line):
    sc = bundled("proxy-on")
    start = time.perf_counter()
    hits = sum(bool(run_scenario(sc, seed).proxy_present) for seed in SEEDS_100)
    elapsed = time.perf_counter() - start
    ok = hits == 100 and elapsed < 10.0
    report_line(1, ok, f"proxy_present in {hits}/100 seeds, {elapsed:.2f} s")
    assert ok


def test_2_detection_negative(report_line):
    sc = bundled("no-proxy")
    assert sc.proxy.split_handshake is False
    positives = sum(bool(run_scenario(sc, seed).proxy_present) for seed in SEEDS_100)
    ok = positives <= 1
    report_line(2, ok, f"false positives in {positives}/100 seeds")
    assert ok


def test_3_filtering_necessity(report_line):
    sc = bundled("mixed-distance")
    good = 0
    worst_unfiltered = 0.0
    for seed in SEEDS_100:
        rep = run_scenario(sc, seed)
        unfiltered = rep.unfiltered_verdict.fraction_positive
        worst_unfiltered = max(worst_unfiltered, unfiltered)
        good += unfiltered < 0.8 and bool(rep.proxy_present)
    ok = good >= 95
    report_line(3, ok, f"{good}/100 seeds ambiguous unfiltered and positive filtered, "
                       f"max unfiltered fraction {worst_unfiltered:.2f}")
    assert ok


def _expected_cached(sc):
    cfg = sc.proxy.cache
    out = {}
    for hostname in sc.origin_hostnames():
        origin = sc.origins[sc.topology.host_at(sc.topology.host_table[hostname][0]).name]
        for spec in origin:
            if spec.size_bytes < MIN_OBJECT_SIZE:
                continue
            no_store = cfg.respect_cache_control and "no-store" in (spec.cache_control or "")
            out[f"http://{hostname}{spec.path}"] = (
                cfg.enabled and spec.content_class in cfg.cacheable_classes and not no_store)
    return out


def test_4_caching(report_line):
    sc = bundled("caching")
    expected = _expected_cached(sc)
    assert any(expected.values()) and not all(expected.values())
    late = sc.with_overrides(session={"cache_within_pair_gap_seconds": sc.proxy.cache.ttl_seconds + 1})
    agree = total = 0
    for seed in SEEDS_50:
        rep = run_scenario(sc, seed)
        got = {v.object: v.cached for v in rep.cache_verdicts}
        agree += got == expected
        late_rep = run_scenario(late, seed)
        agree += all(not v.cached for v in late_rep.cache_verdicts) and \
            len(late_rep.cache_verdicts) == len(expected)
        total += 2
    ok = agree == total
    report_line(4, ok, f"{agree}/{total} runs agree with the proxy config "
                       f"({sum(expected.values())} cacheable, 301 s gap uncached)")
    assert ok


def test_5_rewriting(report_line):
    sc = bundled("transcoding")
    trans = sc.proxy.transcoder
    expected = {}
    for hostname in sc.origin_hostnames():
        origin = sc.origins[sc.topology.host_at(sc.topology.host_table[hostname][0]).name]
        for spec in origin:
            url = f"http://{hostname}{spec.path}"
            if spec.differentiate:
                expected[url] = RewriteClass.SERVER_DIFFERENTIATED
            elif spec.content_class in IMAGE_CLASSES:
                expected[url] = (RewriteClass.PROXY_REWRITTEN
                                 if spec.size_bytes < trans.size_threshold_bytes
                                 else RewriteClass.NO_REWRITE)
    agree = 0
    for seed in SEEDS_50:
        rep = run_scenario(sc, seed)
        got = {v.object.url: v.classification for v in rep.rewrite_verdicts}
        prof = rep.transcoding_profile
        bracket = (prof is not None and 500 * 1024 <= prof.lower_bound
                   and prof.lower_bound < trans.size_threshold_bytes <= prof.threshold <= 800 * 1024)
        agree += all(got.get(u) is c for u, c in expected.items()) and bracket
    ok = agree == 50
    report_line(5, ok, f"{agree}/50 seeds classify {len(expected)} objects and bracket the "
                       f"{trans.size_threshold_bytes} B threshold in (500 KB, 800 KB]")
    assert ok


def test_6_redirection(report_line):
    sc = bundled("redirect")
    off = sc.with_overrides(proxy={"redirector": {"enabled": False}})
    drop = sc.with_overrides(faults={"drop_mismatch": True})
    on_ok = off_ok = drop_ok = 0
    for seed in SEEDS_50:
        on_ok += run_scenario(sc, seed).redirect.redirection_detected is True
        off_ok += run_scenario(off, seed).redirect.redirection_detected is False
        v = run_scenario(drop, seed).redirect
        drop_ok += (set(v.direction_results.values()) == {DirectionResult.NEITHER}
                    and bool(v.warnings) and not v.redirection_detected)
    ok = on_ok == off_ok == drop_ok == 50
    report_line(6, ok, f"on {on_ok}/50, off {off_ok}/50, drop-mismatch {drop_ok}/50")
    assert ok


def _rel_close(a, b):
    return math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-12)


def test_7_statistics_oracle(report_line):
    rng = random.Random("acceptance-7")
    failures = []
    for i in range(1000):
        n = rng.randint(2, 12)
        scale = 10 ** rng.uniform(-1, 3)
        xs = [rng.gauss(rng.uniform(-1, 1) * scale, scale) for _ in range(n)]
        if not _rel_close(inf.mean(xs), float(oracles.mean(xs))):
            failures.append((i, "mean"))
        if not _rel_close(inf.sample_sd(xs), float(oracles.sample_sd(xs))):
            failures.append((i, "sd"))
        if inf.site_proxy_verdict(xs).proxy_inferred != oracles.proxy_inferred(xs):
            failures.append((i, "site"))
        floor = rng.uniform(0, 20)
        pairs = [inf.CachePairSample.of("u", x, 0.0) for x in xs]
        if inf.cache_verdict(pairs, floor).cached != oracles.cached(xs, floor):
            failures.append((i, "cache"))
        rtts = {f"s{j}": abs(rng.gauss(100, 80)) + 0.1 for j in range(rng.randint(2, 25))}
        res = inf.far_site_filter(rtts, 2.0)
        kept, excluded = oracles.far_partition(rtts, 2.0)
        if set(res.kept) != set(kept) or set(res.excluded) != set(excluded):
            failures.append((i, "filter"))
        flags = [rng.random() < 0.8 for _ in range(rng.randint(1, 30))]
        verdicts = [inf.site_proxy_verdict([10, 10] if f else [0, 0]) for f in flags]
        if inf.network_proxy_verdict(verdicts, 0.8).proxy_present != oracles.network_present(flags, 0.8):
            failures.append((i, "network"))
    ok = not failures
    report_line(7, ok, f"{len(failures)} mismatches over 1000 random inputs")
    assert ok, failures[:10]


def test_8_perf_delta(report_line):
    sc = without_jitter(bundled("caching"))
    rep = run_scenario(sc, 0)
    links = {frozenset((l.a, l.b)): l for l in sc.topology.links}
    client_leg = links[frozenset(("client", "gw"))]
    origin_leg = links[frozenset(("gw", "origin"))]
    sizes = {f"http://origin.sim{s.path}": s.size_bytes for s in sc.origins["origin"]}
    errors = []
    for delta in (d for d in rep.perf_deltas if d.kind == "cache"):
        size = sizes[delta.subject]
        near = ([client_leg.one_way_delay_ms], client_leg.bandwidth_bytes_per_s)
        far = ([origin_leg.one_way_delay_ms], origin_leg.bandwidth_bytes_per_s)
        miss = oracles.proxied_miss_ms(near[0], far[0], size, near[1], far[1])
        hit = oracles.proxied_hit_ms(near[0], size, near[1])
        predicted = (miss - hit) / miss
        errors.append(abs(delta.relative_improvement - predicted) / predicted)
    tables = export_csv_tables(rep)
    csv_ok = (tables["perf_deltas"].count(b"\ncache,") == len(errors)
              and tables["cache_diffs"].startswith(b"object,pair_index,first_fetch"))
    ok = bool(errors) and max(errors) <= 0.05 and csv_ok
    worst = max(errors) if errors else float("nan")
    report_line(8, ok, f"{len(errors)} cache deltas, worst relative error {worst:.2e}, "
                       f"csv emitted={csv_ok}")
    assert ok


def test_9_determinism(report_line):
    paths = list_scenarios(bundled_scenario_dir())
    differing = []
    for path in paths:
        sc = load_scenario(path)
        for seed in (0, 7):
            if run_scenario(sc, seed).to_json() != run_scenario(sc, seed).to_json():
                differing.append((sc.name, seed))
    ok = bool(paths) and not differing
    report_line(9, ok, f"{len(paths)} bundled scenarios byte-identical, differing={differing}")
    assert ok
