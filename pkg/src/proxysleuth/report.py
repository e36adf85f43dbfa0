"""Session reports: JSON (full, self-contained) and flat CSV tables."""
from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any

from pydantic import TypeAdapter

from . import inference
from .inference import (
    CacheVerdict,
    FilterResult,
    NetworkVerdict,
    PerfDelta,
)
from .prober import PinnedEndpoint, ProbePair, RttSample
from .redirect import DirectionResult, RedirectVerdict
from .rewrite import (
    ContentObservation,
    IMAGE_CLASSES,
    ObjectRef,
    RewriteVerdict,
    TranscodingProfile,
    classify_rewrite,
    transcoding_profile,
)
from .errors import InsufficientSweep

SCHEMA_VERSION = "1"


class ExportFormat(str, enum.Enum):
    JSON = "json"
    CSV = "csv"


@dataclass(frozen=True)
class ObservationSet:
    """The four fetches behind one rewrite verdict; absent entries failed."""
    object: ObjectRef
    cell80: ContentObservation | None = None
    cell443: ContentObservation | None = None
    base80: ContentObservation | None = None
    base443: ContentObservation | None = None


@dataclass(frozen=True)
class SessionMetadata:
    mode: str
    seed: int | None
    scenario: str | None
    started_at: float
    finished_at: float
    config: dict[str, Any] = field(default_factory=dict)


@dataclass
class Report:
    metadata: SessionMetadata
    schema_version: str = SCHEMA_VERSION
    pins: list[PinnedEndpoint] = field(default_factory=list)
    rtt_survey: list[RttSample] = field(default_factory=list)
    probe_pairs: dict[str, list[ProbePair]] = field(default_factory=dict)
    filter: FilterResult | None = None
    network_verdict: NetworkVerdict | None = None
    unfiltered_verdict: NetworkVerdict | None = None
    objects: list[ObjectRef] = field(default_factory=list)
    cache_verdicts: list[CacheVerdict] = field(default_factory=list)
    observations: list[ObservationSet] = field(default_factory=list)
    rewrite_verdicts: list[RewriteVerdict] = field(default_factory=list)
    transcoding_profile: TranscodingProfile | None = None
    redirect: RedirectVerdict | None = None
    perf_deltas: list[PerfDelta] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def proxy_present(self) -> bool | None:
        return None if self.network_verdict is None else self.network_verdict.proxy_present

    def cache_verdict_for(self, url: str) -> CacheVerdict | None:
        return next((v for v in self.cache_verdicts if v.object == url), None)

    def rewrite_verdict_for(self, url: str) -> RewriteVerdict | None:
        return next((v for v in self.rewrite_verdicts if v.object.url == url), None)

    def to_dict(self) -> dict[str, Any]:
        return _ADAPTER.dump_python(self, mode="json")

    def to_json(self) -> bytes:
        return (json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n").encode()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Report":
        return _ADAPTER.validate_python(data)

    @classmethod
    def from_json(cls, data: bytes | str) -> "Report":
        return cls.from_dict(json.loads(data))


_ADAPTER = TypeAdapter(Report)


# CSV tables

def _csv(header: list[str], rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode()


def site_diffs_table(report: Report) -> bytes:
    kept = set(report.filter.kept) if report.filter else set(report.probe_pairs)
    rows = []
    for site, pairs in report.probe_pairs.items():
        for i, pair in enumerate(pairs):
            rows.append([site, i, repr(pair.rtt80), repr(pair.rtt443), repr(pair.diff),
                         site in kept])
    return _csv(["site", "pair_index", "rtt80", "rtt443", "diff", "kept"], rows)


def cache_diffs_table(report: Report) -> bytes:
    rows = []
    for verdict in report.cache_verdicts:
        for i, pair in enumerate(verdict.pairs):
            rows.append([verdict.object, i, repr(pair.first_fetch), repr(pair.second_fetch),
                         repr(pair.diff), verdict.cached])
    return _csv(["object", "pair_index", "first_fetch", "second_fetch", "diff", "cached"], rows)


def transcoding_table(report: Report) -> bytes:
    mapping = report.transcoding_profile.mapping if report.transcoding_profile else ()
    return _csv(["original_size", "observed_size"], mapping)


def perf_deltas_table(report: Report) -> bytes:
    rows = [[d.kind, d.subject, repr(d.baseline), repr(d.alternative),
             repr(d.relative_improvement)] for d in report.perf_deltas]
    return _csv(["kind", "subject", "baseline", "alternative", "relative_improvement"], rows)


CSV_TABLES = {
    "site_diffs": site_diffs_table,
    "cache_diffs": cache_diffs_table,
    "transcoding": transcoding_table,
    "perf_deltas": perf_deltas_table,
}


def export_report(report: Report, fmt: ExportFormat | str = ExportFormat.JSON,
                  table: str = "site_diffs") -> bytes:
    """JSON is the whole report; CSV is one flat table (see ``CSV_TABLES``)."""
    fmt = ExportFormat(fmt)
    if fmt is ExportFormat.JSON:
        return report.to_json()
    try:
        return CSV_TABLES[table](report)
    except KeyError:
        raise ValueError(f"unknown CSV table {table!r}; choose from {sorted(CSV_TABLES)}") from None


def export_csv_tables(report: Report) -> dict[str, bytes]:
    return {name: build(report) for name, build in CSV_TABLES.items()}


# self-containment

def profile_from_observations(sets: list[ObservationSet]) -> TranscodingProfile | None:
    originals, observed = [], []
    for obs in sets:
        if obs.object.content_class not in IMAGE_CLASSES or obs.cell80 is None:
            continue
        original = obs.base443 or obs.cell443
        if original is None:
            continue
        originals.append((original.body_length, original))
        observed.append((original.body_length, obs.cell80))
    if not originals:
        return None
    try:
        return transcoding_profile(originals, observed)
    except InsufficientSweep:
        return None


def _close(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-12)


def verify_report(report: Report) -> list[str]:
    """Recompute every verdict from the raw samples stored in the report and
    list any disagreement.  An empty list means the report is consistent."""
    problems = []
    if report.filter is not None:
        again = inference.refilter(report.filter)
        if (again.kept, again.excluded) != (report.filter.kept, report.filter.excluded) \
                or again.threshold != report.filter.threshold:
            problems.append("far-site filter")
        survey: dict[str, list[float]] = {}
        for s in report.rtt_survey:
            if s.port == 443 and s.rtt is not None:
                survey.setdefault(s.endpoint.hostname, []).append(s.rtt)
        inputs = report.filter.per_site_samples or {
            site: (rtt,) for site, rtt in report.filter.per_site_rtt443.items()}
        for site, samples in inputs.items():
            if tuple(survey.get(site, ())) != tuple(samples):
                problems.append(f"filter input for {site} not in survey")

    if report.network_verdict is not None:
        verdicts = [inference.site_proxy_verdict(report.probe_pairs[v.hostname], v.hostname)
                    for v in report.network_verdict.site_verdicts]
        again = inference.network_proxy_verdict(verdicts, report.network_verdict.threshold_fraction)
        if again.proxy_present != report.network_verdict.proxy_present \
                or not _close(again.fraction_positive, report.network_verdict.fraction_positive):
            problems.append("network verdict")
        for mine, theirs in zip(verdicts, report.network_verdict.site_verdicts):
            if mine.proxy_inferred != theirs.proxy_inferred or mine.stats.diffs != theirs.stats.diffs:
                problems.append(f"site verdict {theirs.hostname}")

    for verdict in report.cache_verdicts:
        again = inference.cache_verdict(list(verdict.pairs), verdict.min_effect_floor)
        if again.cached != verdict.cached or again.content_stable != verdict.content_stable:
            problems.append(f"cache verdict {verdict.object}")

    by_url = {obs.object.url: obs for obs in report.observations}
    for verdict in report.rewrite_verdicts:
        obs = by_url.get(verdict.object.url)
        if obs is None:
            problems.append(f"no observations for {verdict.object.url}")
            continue
        again = classify_rewrite(obs.cell80, obs.cell443, obs.base80, obs.base443, obj=obs.object)
        if again.classification != verdict.classification:
            problems.append(f"rewrite verdict {verdict.object.url}")

    if report.observations:
        profile = profile_from_observations(report.observations)
        if profile != report.transcoding_profile:
            problems.append("transcoding profile")

    if report.redirect is not None:
        detected = any(r is DirectionResult.HOST_OWNER
                       for r in report.redirect.direction_results.values())
        if detected != report.redirect.redirection_detected:
            problems.append("redirect verdict")

    for delta in report.perf_deltas:
        again = inference.relative_improvement(delta.baseline, delta.alternative)
        if not _close(again.relative_improvement, delta.relative_improvement):
            problems.append(f"perf delta {delta.kind} {delta.subject}")
    return problems
