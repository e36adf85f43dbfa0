"""Run scenario directories and compare reports with declared ground truth."""
from __future__ import annotations

import csv
import enum
import io
import os
from dataclasses import dataclass, field
from typing import Any, Iterable

from .report import Report
from .session import run_scenario
from .simnet.scenario import Scenario, list_scenarios, load_scenario



class SuiteStatus(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    UNVERIFIABLE = "Unverifiable"


@dataclass(frozen=True)
class SuiteRow:
    scenario: str
    seed: int | None
    status: SuiteStatus
    mismatches: tuple[str, ...] = ()


@dataclass
class SuiteSummary:
    rows: list[SuiteRow] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def counts(self) -> dict[str, int]:
        out = {s.value: 0 for s in SuiteStatus}
        for row in self.rows:
            out[row.status.value] += 1
        return out

    @property
    def ok(self) -> bool:
        return all(r.status is not SuiteStatus.FAIL for r in self.rows)

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["scenario", "seed", "status", "mismatches"])
        for r in self.rows:
            writer.writerow([r.scenario, "" if r.seed is None else r.seed, r.status.value,
                             "; ".join(r.mismatches)])
        return buf.getvalue().encode()


def check_expectations(report: Report, expect: dict[str, Any]) -> list[str]:
    """Every ground-truth key the report disagrees with, as readable strings."""
    out = []
    if "proxy_present" in expect:
        if report.proxy_present != expect["proxy_present"]:
            out.append(f"proxy_present={report.proxy_present}, expected {expect['proxy_present']}")
    if "unfiltered_fraction_below" in expect:
        unf = report.unfiltered_verdict
        bound = expect["unfiltered_fraction_below"]
        if unf is None or not unf.fraction_positive < bound:
            got = None if unf is None else unf.fraction_positive
            out.append(f"unfiltered fraction {got}, expected < {bound}")
    if "kept_sites" in expect:
        kept = sorted(report.filter.kept) if report.filter else None
        if kept != sorted(expect["kept_sites"]):
            out.append(f"kept sites {kept}")
    for url, want in (expect.get("cached") or {}).items():
        verdict = report.cache_verdict_for(url)
        got = None if verdict is None else verdict.cached
        if got != want:
            out.append(f"cached[{url}]={got}, expected {want}")
    eligible = {o.url for o in report.objects}
    for url in expect.get("excluded_objects") or []:
        if url in eligible:
            out.append(f"{url} should have been excluded")
    for url, want in (expect.get("rewrite") or {}).items():
        verdict = report.rewrite_verdict_for(url)
        got = None if verdict is None else verdict.classification.value
        if got != want:
            out.append(f"rewrite[{url}]={got}, expected {want}")
    if "transcoding_threshold" in expect:
        lo, hi = expect["transcoding_threshold"]
        profile = report.transcoding_profile
        if profile is None or profile.lower_bound != lo or profile.threshold != hi:
            got = None if profile is None else (profile.lower_bound, profile.threshold)
            out.append(f"transcoding bracket {got}, expected ({lo}, {hi}]")
    if "redirection_detected" in expect:
        got = None if report.redirect is None else report.redirect.redirection_detected
        if got != expect["redirection_detected"]:
            out.append(f"redirection_detected={got}, expected {expect['redirection_detected']}")
    if "direction_results" in expect:
        want = expect["direction_results"]
        results = {} if report.redirect is None else report.redirect.direction_results
        if len(results) != 2 or any(r.value != want for r in results.values()):
            out.append(f"direction results {[r.value for r in results.values()]}, expected {want}")
    return out


def run_one(scenario: Scenario, seed: int) -> SuiteRow:
    if scenario.expect is None:
        return SuiteRow(scenario.name, seed, SuiteStatus.UNVERIFIABLE, ("no ground truth",))
    report = run_scenario(scenario, seed)
    mismatches = tuple(check_expectations(report, scenario.expect))
    return SuiteRow(scenario.name, seed, SuiteStatus.FAIL if mismatches else SuiteStatus.PASS,
                    mismatches)


def run_scenario_suite(directory: str | os.PathLike,
                       seeds: Iterable[int] | None = None) -> SuiteSummary:
    """Each scenario runs over ``seeds`` (default: its own ``seeds`` count,
    i.e. 0..n-1).  A scenario without an ``expect`` block yields a single
    Unverifiable row and is not run."""
    summary = SuiteSummary()
    paths = list_scenarios(directory)
    if not paths:
        summary.warnings.append(f"no scenario files in {directory}")
        return summary
    for path in paths:
        scenario = load_scenario(path)
        if scenario.expect is None:
            summary.rows.append(SuiteRow(scenario.name, None, SuiteStatus.UNVERIFIABLE,
                                         ("no ground truth",)))
            continue
        for seed in (range(scenario.seeds) if seeds is None else seeds):
            summary.rows.append(run_one(scenario, seed))
    return summary
