"""End-to-end measurement sessions.

A session runs, in order: resolve and pin every destination, take the
RTT_443 survey, filter far sites, collect probe pairs, decide proxy
existence, then (when configured) the cache, rewrite and redirect suites,
and finally the performance deltas.  A failing step becomes a warning on
the report; only invalid configuration aborts.
"""
from __future__ import annotations

import dataclasses
import enum
import json
import logging
import os
import random
import secrets
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable
from urllib.parse import urlsplit

import yaml
from pydantic import TypeAdapter

from . import inference
from .errors import (
    ConfigInvalid,
    ConnectRefused,
    ConnectTimeout,
    EmptyInput,
    FetchTimeout,
    InsufficientSites,
    NonPositiveBaseline,
    ProxySleuthError,
    ResolutionFailed,
    SentinelUnreachable,
    SiteUnmeasurable,
    TlsFailure,
)
from .inference import CachePairSample, PerfDelta
from .prober import PinnedEndpoint, Prober, ProberConfig, RttSample
from .redirect import SentinelConfig, run_redirect_probe
from .report import ObservationSet, Report, SessionMetadata, profile_from_observations
from .rewrite import (
    ContentObservation,
    ObjectRef,
    RewriteClass,
    classify_rewrite,
    eligible_objects,
    extract_embedded_objects,
)
from .transport import SocketTransport, Transport, make_ssl_context

log = logging.getLogger(__name__)

SUITES = ("detect", "cache", "rewrite", "redirect")
FILTER_MODES = ("across-site", "per-site")
REAL_COOLDOWN_S = 360.0
ENV_PREFIX = "PROXYSLEUTH_"

# errors a single fetch may raise in the field
_FETCH_ERRORS = (ConnectTimeout, ConnectRefused, FetchTimeout, TlsFailure, OSError)


class Mode(str, enum.Enum):
    REAL = "Real"
    SIM = "Sim"


@dataclass
class SessionConfig:
    destinations: list[str] = field(default_factory=list)
    probes_per_site: int = inference.DEFAULT_PROBE_COUNT
    far_filter_multiplier: float = inference.DEFAULT_FAR_MULTIPLIER
    network_threshold_fraction: float = inference.DEFAULT_NETWORK_FRACTION
    min_object_size: int = 5120
    cache_pairs: int = 4
    # None: 360 s in Real mode, proxy ttl + 1 s in Sim mode
    cache_cooldown_seconds: float | None = None
    cache_within_pair_gap_seconds: float = 0.0
    cache_min_effect_ms: float = inference.DEFAULT_CACHE_FLOOR_MS
    mode: Mode = Mode.REAL
    scenario: str | None = None
    # Real: two mappings of SentinelConfig fields.  Sim: two sentinel names.
    sentinels: list[Any] | None = None
    # Real: path to a baseline observations file.  Sim: "direct" (default) or "none".
    baseline_vantage: str | None = None
    objects: list[str] = field(default_factory=list)
    # pages whose embedded objects are added to ``objects``
    object_pages: list[str] = field(default_factory=list)
    suites: list[str] = field(default_factory=lambda: list(SUITES))
    filter_mode: str = "across-site"
    # also probe filtered-out sites and report an unfiltered verdict
    probe_excluded_sites: bool = False
    alternate_order: bool = False
    pair_interval_ms: float = 0.0
    connect_timeout_seconds: float = 10.0
    fetch_timeout_seconds: float = 30.0
    seed: int = 0
    trust_anchor: str | None = None
    # Real mode only: static name -> address overrides and logical -> real port remaps
    host_table: dict[str, str] = field(default_factory=dict)
    port_map: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.destinations = list(self.destinations or [])
        self.objects = list(self.objects or [])
        self.object_pages = list(self.object_pages or [])
        self.suites = list(self.suites or [])
        self.port_map = {int(k): int(v) for k, v in (self.port_map or {}).items()}
        self.host_table = dict(self.host_table or {})

    def validate(self) -> None:
        positive = {
            "probes_per_site": self.probes_per_site,
            "far_filter_multiplier": self.far_filter_multiplier,
            "network_threshold_fraction": self.network_threshold_fraction,
            "min_object_size": self.min_object_size,
            "cache_pairs": self.cache_pairs,
            "connect_timeout_seconds": self.connect_timeout_seconds,
            "fetch_timeout_seconds": self.fetch_timeout_seconds,
        }
        if self.cache_cooldown_seconds is not None:
            positive["cache_cooldown_seconds"] = self.cache_cooldown_seconds
        for name, value in positive.items():
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
                raise ConfigInvalid(f"{name} must be positive, got {value!r}")
        if self.network_threshold_fraction > 1:
            raise ConfigInvalid("network_threshold_fraction must be at most 1")
        if self.probes_per_site < 2 or self.cache_pairs < 2:
            raise ConfigInvalid("probes_per_site and cache_pairs need at least 2 samples for an SD")
        if self.cache_within_pair_gap_seconds < 0 or self.cache_min_effect_ms < 0 \
                or self.pair_interval_ms < 0:
            raise ConfigInvalid("gaps and floors must be non-negative")
        unknown = set(self.suites) - set(SUITES)
        if unknown:
            raise ConfigInvalid(f"unknown suites {sorted(unknown)}")
        if self.filter_mode not in FILTER_MODES:
            raise ConfigInvalid(f"filter_mode must be one of {FILTER_MODES}")
        if self.sentinels is not None and len(self.sentinels) != 2:
            raise ConfigInvalid("sentinels must be a pair")
        for url in self.objects + self.object_pages:
            parts = urlsplit(url)
            if parts.scheme not in ("http", "https") or not parts.hostname:
                raise ConfigInvalid(f"not an absolute http(s) URL: {url!r}")
        if self.mode is Mode.REAL:
            if not self.destinations and "detect" in self.suites:
                raise ConfigInvalid("destinations must be non-empty in Real mode")
            if self.sentinels is not None:
                for s in self.sentinels:
                    if not isinstance(s, dict) or "hostname" not in s:
                        raise ConfigInvalid("Real-mode sentinels need at least a hostname")
        elif not self.scenario:
            raise ConfigInvalid("Sim mode needs a scenario")

    def echo(self) -> dict[str, Any]:
        """JSON-friendly copy for the report metadata."""
        out = dataclasses.asdict(self)
        out["mode"] = self.mode.value
        out["port_map"] = {str(k): v for k, v in self.port_map.items()}
        return json.loads(json.dumps(out, default=str))


_FIELDS = {f.name: f for f in dataclasses.fields(SessionConfig)}


def config_from_dict(data: dict[str, Any]) -> SessionConfig:
    unknown = set(data) - set(_FIELDS)
    if unknown:
        raise ConfigInvalid(f"unknown config keys {sorted(unknown)}")
    try:
        return SessionConfig(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(str(exc)) from exc


def _coerce_env(name: str, raw: str) -> Any:
    # YAML scalars cover ints, floats, bools and inline lists
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"{ENV_PREFIX}{name.upper()}: {exc}") from exc
    if name in ("destinations", "objects", "object_pages", "suites") and isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    return value


def env_overrides(environ: dict[str, str] | None = None) -> dict[str, Any]:
    """``PROXYSLEUTH_<FIELD>`` variables, e.g. ``PROXYSLEUTH_PROBES_PER_SITE=6``."""
    environ = os.environ if environ is None else environ
    out = {}
    for key, raw in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in _FIELDS:
                out[name] = _coerce_env(name, raw)
    return out


def load_session_config(path: str | os.PathLike | None = None,
                        overrides: dict[str, Any] | None = None,
                        environ: dict[str, str] | None = None) -> SessionConfig:
    """File config, then environment, then explicit overrides (e.g. CLI flags)."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigInvalid(f"config {path} must be a mapping")
    data.update(env_overrides(environ))
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_dict(data)


# baselines

_OBSERVATIONS = TypeAdapter(list[ContentObservation])


def save_baseline(observations: list[ContentObservation], path: str | os.PathLike) -> None:
    Path(path).write_bytes(_OBSERVATIONS.dump_json(observations, indent=2))


def load_baseline(path: str | os.PathLike) -> dict[tuple[str, int], ContentObservation]:
    try:
        items = _OBSERVATIONS.validate_json(Path(path).read_bytes())
    except OSError as exc:
        raise ConfigInvalid(f"cannot read baseline {path}: {exc}") from exc
    return {(o.object.url, o.port): o for o in items}


# the session proper

class _Run:
    def __init__(self, config: SessionConfig, transport: Transport,
                 baseline: Transport | dict | None,
                 sentinels: tuple[SentinelConfig, SentinelConfig] | None,
                 token_factory: Callable[[], str], cooldown_s: float):
        self.config = config
        self.transport = transport
        self.prober = Prober(transport, ProberConfig(
            connect_timeout=config.connect_timeout_seconds,
            fetch_timeout=config.fetch_timeout_seconds,
            pair_interval_ms=config.pair_interval_ms,
            alternate_order=config.alternate_order))
        self.baseline_prober = None
        self.baseline_table: dict = {}
        if isinstance(baseline, dict):
            self.baseline_table = baseline
        elif baseline is not None:
            self.baseline_prober = Prober(baseline, self.prober.config)
        self.sentinels = sentinels
        self.token_factory = token_factory
        self.cooldown_s = cooldown_s
        self.report = Report(SessionMetadata(config.mode.value, config.seed, config.scenario,
                                             transport.now(), transport.now(), config.echo()))
        self.kept: list[PinnedEndpoint] = []

    def warn(self, message: str) -> None:
        log.warning(message)
        self.report.warnings.append(message)

    def run(self) -> Report:
        if "detect" in self.config.suites:
            self.detect()
        objects = self.discover() if {"cache", "rewrite"} & set(self.config.suites) else []
        if objects and "cache" in self.config.suites:
            self.cache_suite(objects)
        if objects and "rewrite" in self.config.suites:
            self.rewrite_suite(objects)
        if self.sentinels and "redirect" in self.config.suites:
            self.redirect_suite()
        self.perf_deltas()
        self.report.metadata = dataclasses.replace(self.report.metadata,
                                                   finished_at=self.transport.now())
        return self.report

    # detection

    def _pin(self, hostname: str) -> PinnedEndpoint | None:
        try:
            return self.prober.resolve_and_pin(hostname)
        except ResolutionFailed as exc:
            self.warn(f"cannot resolve {hostname}: {exc}")
            return None

    def _survey(self, endpoint: PinnedEndpoint, count: int) -> list[RttSample]:
        samples = []
        for _ in range(count):
            sample = None
            for _ in range(1 + self.prober.config.retries):
                sample = self.prober.timed_connect(endpoint, 443)
                self.report.rtt_survey.append(sample)
                if sample.ok:
                    break
            if not sample.ok:
                return []
            samples.append(sample)
        return samples

    def detect(self) -> None:
        cfg = self.config
        pins = [p for p in (self._pin(h) for h in cfg.destinations) if p is not None]
        self.report.pins = pins
        survey_count = cfg.probes_per_site if cfg.filter_mode == "per-site" else 1
        surveyed: dict[str, list[float]] = {}
        by_name = {}
        for endpoint in pins:
            samples = self._survey(endpoint, survey_count)
            if not samples:
                self.warn(f"{endpoint.hostname}: RTT_443 survey failed, site dropped")
                continue
            surveyed[endpoint.hostname] = [s.rtt for s in samples]
            by_name[endpoint.hostname] = endpoint

        try:
            if cfg.filter_mode == "per-site":
                result = inference.per_site_far_filter(surveyed, cfg.far_filter_multiplier)
            else:
                result = inference.far_site_filter({k: v[0] for k, v in surveyed.items()},
                                                   cfg.far_filter_multiplier)
        except InsufficientSites as exc:
            self.warn(f"far-site filter skipped: {exc}")
            result = None
        self.report.filter = result
        if result is not None and result.all_excluded:
            self.warn("far-site filter excluded every site")
        kept = list(result.kept) if result is not None else list(surveyed)
        self.kept = [by_name[h] for h in kept]

        to_probe = list(surveyed) if cfg.probe_excluded_sites else kept
        verdicts = {}
        for hostname in to_probe:
            try:
                pairs = self.prober.collect_site_probes(by_name[hostname], cfg.probes_per_site)
            except SiteUnmeasurable as exc:
                self.warn(f"site unmeasurable: {exc}")
                continue
            self.report.probe_pairs[hostname] = pairs
            verdicts[hostname] = inference.site_proxy_verdict(pairs, hostname)

        fraction = cfg.network_threshold_fraction
        try:
            self.report.network_verdict = inference.network_proxy_verdict(
                [verdicts[h] for h in kept if h in verdicts], fraction)
        except EmptyInput:
            self.warn("no measurable far sites; proxy existence undecided")
        if cfg.probe_excluded_sites and verdicts:
            self.report.unfiltered_verdict = inference.network_proxy_verdict(
                list(verdicts.values()), fraction)

    # objects

    def _endpoint_for(self, url: str) -> tuple[PinnedEndpoint, str] | None:
        parts = urlsplit(url)
        endpoint = self._pin(parts.hostname or "")
        if endpoint is None:
            return None
        path = parts.path or "/"
        if parts.query:
            path += "?" + parts.query
        return endpoint, path

    def _fetch(self, prober: Prober, obj: ObjectRef, port: int,
               extra_headers=()) -> ContentObservation | None:
        target = self._endpoint_for(obj.url)
        if target is None:
            return None
        endpoint, path = target
        try:
            sample = prober.timed_fetch(endpoint, port, path, port == 443, extra_headers)
        except _FETCH_ERRORS as exc:
            self.warn(f"fetch {obj.url} on {port} failed: {type(exc).__name__}")
            return None
        return ContentObservation.from_fetch(obj, sample)

    def discover(self) -> list[ObjectRef]:
        refs = [ObjectRef.from_url(u) for u in self.config.objects]
        seen = {r.url for r in refs}
        for page in self.config.object_pages:
            target = self._endpoint_for(page)
            if target is None:
                continue
            endpoint, path = target
            try:
                body = self.prober.fetch_page(endpoint, path)
            except _FETCH_ERRORS as exc:
                self.warn(f"cannot load {page}: {type(exc).__name__}")
                continue
            for ref in extract_embedded_objects(body, page):
                if ref.url not in seen:
                    seen.add(ref.url)
                    refs.append(ref)
        # sizes come from port 443 so the port-80 cache stays cold
        sized = []
        for ref in refs:
            obs = self._fetch(self.prober, ref, 443)
            if obs is None or obs.failed:
                sized.append(ref.with_size(None))
            else:
                sized.append(ref.with_size(obs.body_length, obs.content_type or None))
        eligible = eligible_objects(sized, self.config.min_object_size)
        dropped = len(sized) - len(eligible)
        if dropped:
            log.info("%d objects below %d bytes or unmeasured class", dropped,
                     self.config.min_object_size)
        self.report.objects = eligible
        return eligible

    # cache

    def cache_suite(self, objects: list[ObjectRef]) -> None:
        cfg = self.config
        samples: dict[str, list[CachePairSample]] = {o.url: [] for o in objects}
        # round-robin over objects so one cooldown serves every object
        for round_ in range(cfg.cache_pairs):
            if round_:
                self.transport.sleep(self.cooldown_s * 1000.0)
            for obj in objects:
                first = self._fetch(self.prober, obj, 80)
                if cfg.cache_within_pair_gap_seconds:
                    self.transport.sleep(cfg.cache_within_pair_gap_seconds * 1000.0)
                second = self._fetch(self.prober, obj, 80)
                if first is None or second is None or first.failed or second.failed:
                    continue
                samples[obj.url].append(CachePairSample.of(
                    obj.url, first.fetch_time, second.fetch_time,
                    first.body_digest, second.body_digest))
        for obj in objects:
            pairs = samples[obj.url]
            if len(pairs) < 2:
                self.warn(f"cache: only {len(pairs)} valid pairs for {obj.url}")
                continue
            verdict = inference.cache_verdict(pairs, cfg.cache_min_effect_ms)
            if verdict.needs_rewrite_analysis:
                self.warn(f"cache: content of {obj.url} changed between fetches")
            self.report.cache_verdicts.append(verdict)

    # rewrite

    def _baseline(self, obj: ObjectRef, port: int) -> ContentObservation | None:
        if self.baseline_prober is not None:
            return self._fetch(self.baseline_prober, obj, port)
        return self.baseline_table.get((obj.url, port))

    def rewrite_suite(self, objects: list[ObjectRef]) -> None:
        if self.baseline_prober is None and not self.baseline_table:
            self.warn("rewrite: no baseline vantage, verdicts will be Inconclusive")
        for obj in objects:
            cell80 = self._fetch(self.prober, obj, 80)
            cell443 = self._fetch(self.prober, obj, 443)
            obs = ObservationSet(obj, cell80, cell443, self._baseline(obj, 80),
                                 self._baseline(obj, 443))
            self.report.observations.append(obs)
            self.report.rewrite_verdicts.append(
                classify_rewrite(obs.cell80, obs.cell443, obs.base80, obs.base443, obj=obj))
        self.report.transcoding_profile = profile_from_observations(self.report.observations)

    # redirect

    def redirect_suite(self) -> None:
        e1, e2 = self.sentinels
        try:
            verdict = run_redirect_probe(e1, e2, self.prober, token_factory=self.token_factory)
        except SentinelUnreachable as exc:
            self.warn(f"redirect: {exc}")
            return
        self.report.redirect = verdict
        self.report.warnings.extend(f"redirect: {w}" for w in verdict.warnings)

    # deltas

    def perf_deltas(self) -> None:
        deltas: list[PerfDelta] = []
        cached = set()
        for verdict in self.report.cache_verdicts:
            if not verdict.cached:
                continue
            cached.add(verdict.object)
            first = inference.mean([p.first_fetch for p in verdict.pairs])
            second = inference.mean([p.second_fetch for p in verdict.pairs])
            deltas.append(inference.relative_improvement(first, second, "cache", verdict.object))
        kinds = {RewriteClass.PROXY_REWRITTEN: "transcode", RewriteClass.NO_REWRITE: "split-tcp"}
        by_url = {o.object.url: o for o in self.report.observations}
        for verdict in self.report.rewrite_verdicts:
            kind = kinds.get(verdict.classification)
            obs = by_url[verdict.object.url]
            # a cache hit on port 80 would masquerade as a transport gain
            if kind is None or (kind == "split-tcp" and verdict.object.url in cached):
                continue
            try:
                deltas.append(inference.relative_improvement(
                    obs.cell443.fetch_time, obs.cell80.fetch_time, kind, verdict.object.url))
            except NonPositiveBaseline:
                continue
        self.report.perf_deltas = deltas


def _real_sentinels(config: SessionConfig, transport: Transport):
    if not config.sentinels:
        return None
    out = []
    for i, spec in enumerate(config.sentinels):
        spec = dict(spec)
        spec.setdefault("name", f"E{i + 1}")
        if "address" not in spec:
            addresses = transport.resolve(spec["hostname"])
            if not addresses:
                raise ConfigInvalid(f"cannot resolve sentinel {spec['hostname']}")
            spec["address"] = addresses[0]
        out.append(SentinelConfig(**spec))
    return tuple(out)


def run_real_session(config: SessionConfig, transport: Transport | None = None) -> Report:
    if transport is None:
        context = make_ssl_context(config.trust_anchor)
        transport = SocketTransport(config.host_table, config.port_map, context)
    baseline = load_baseline(config.baseline_vantage) if config.baseline_vantage else None
    cooldown = config.cache_cooldown_seconds or REAL_COOLDOWN_S
    run = _Run(config, transport, baseline, _real_sentinels(config, transport),
               lambda: secrets.token_hex(16), cooldown)
    return run.run()


def _merge_scenario(config: SessionConfig, scenario) -> SessionConfig:
    """Scenario ``session`` values fill fields the caller left at default."""
    defaults = SessionConfig(mode=Mode.SIM, scenario=config.scenario)
    merged = dataclasses.asdict(config)
    merged["mode"] = config.mode
    for key, value in scenario.session.items():
        if key not in _FIELDS:
            raise ConfigInvalid(f"scenario {scenario.name}: unknown session key {key!r}")
        if getattr(config, key) == getattr(defaults, key):
            merged[key] = value
    return config_from_dict(merged)


def run_scenario(scenario, seed: int = 0, config: SessionConfig | None = None) -> Report:
    """Run one session on a freshly built simulated network."""
    from .simnet.clock import ClockMode

    base = config or SessionConfig(mode=Mode.SIM, scenario=scenario.source or scenario.name)
    base = dataclasses.replace(base, mode=Mode.SIM, seed=seed,
                               scenario=base.scenario or scenario.source or scenario.name)
    config = _merge_scenario(base, scenario)
    if not config.destinations:
        config.destinations = scenario.origin_hostnames()
    config.validate()

    net = scenario.build(seed, ClockMode.VIRTUAL)
    net.connect_timeout_ms = config.connect_timeout_seconds * 1000.0
    net.fetch_timeout_ms = config.fetch_timeout_seconds * 1000.0
    transport = net.transport(scenario.client)
    baseline = None
    if (config.baseline_vantage or "direct") == "direct":
        baseline = net.transport(scenario.client, bypass_proxy=True)
    sentinels = None
    if config.sentinels:
        names = [s["name"] if isinstance(s, dict) else s for s in config.sentinels]
        try:
            sentinels = tuple(scenario.sentinel(n) for n in names)
        except KeyError as exc:
            raise ConfigInvalid(f"scenario has no sentinel {exc}") from None
    rng = random.Random(f"tokens:{seed}")
    cooldown = config.cache_cooldown_seconds or scenario.proxy.cache.ttl_seconds + 1.0
    run = _Run(config, transport, baseline, sentinels,
               lambda: f"{rng.getrandbits(128):032x}", cooldown)
    report = run.run()
    report.metadata = dataclasses.replace(report.metadata, scenario=scenario.name)
    return report


def run_session(config: SessionConfig, transport: Transport | None = None) -> Report:
    config.validate()
    if config.mode is Mode.SIM:
        from .simnet.scenario import load_scenario
        return run_scenario(load_scenario(config.scenario), config.seed, config)
    return run_real_session(config, transport)


def capture_baseline(config: SessionConfig, transport: Transport | None = None
                     ) -> list[ContentObservation]:
    """Fetch every configured object on both ports, for use as the
    ``baseline_vantage`` of a later session on the network under test."""
    if transport is None:
        transport = SocketTransport(config.host_table, config.port_map,
                                    make_ssl_context(config.trust_anchor))
    run = _Run(dataclasses.replace(config, suites=["rewrite"]), transport, None, None,
               lambda: secrets.token_hex(16), 0.0)
    out = []
    for obj in run.discover():
        for port in (80, 443):
            obs = run._fetch(run.prober, obj, port)
            if obs is not None:
                out.append(obs)
    return out


__all__ = [
    "Mode", "SessionConfig", "SUITES", "config_from_dict", "env_overrides",
    "load_session_config", "run_session", "run_scenario", "run_real_session",
    "capture_baseline", "save_baseline", "load_baseline", "ProxySleuthError",
]
