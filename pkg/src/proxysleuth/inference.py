"""Statistical verdicts built from raw probe and fetch samples.

Everything here is a pure function of its inputs.  The three estimator
classes at the bottom wrap the same rules in the scikit-learn
fit/predict protocol so they can be dropped into pipelines, grid
searches over thresholds, and so on.
"""
from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import (
    EmptyInput,
    InsufficientSamples,
    InsufficientSites,
    MixedUrls,
    NonPositiveBaseline,
)
from .prober import ProbePair

DEFAULT_PROBE_COUNT = 4
DEFAULT_FAR_MULTIPLIER = 2.0
DEFAULT_NETWORK_FRACTION = 0.8
DEFAULT_CACHE_FLOOR_MS = 10.0


def sample_sd(values: Sequence[float]) -> float:
    """Sample standard deviation (n - 1 denominator)."""
    if len(values) < 2:
        raise InsufficientSamples(f"need at least 2 values, got {len(values)}")
    return statistics.stdev(values)


def mean(values: Sequence[float]) -> float:
    if not values:
        raise InsufficientSamples("mean of empty sequence")
    return statistics.fmean(values)


@dataclass(frozen=True)
class FilterResult:
    kept: tuple[str, ...]
    excluded: tuple[str, ...]
    # None in per-site mode, where each site has its own threshold
    threshold: float | None
    per_site_rtt443: dict[str, float]
    multiplier: float = DEFAULT_FAR_MULTIPLIER
    mode: str = "across-site"
    per_site_samples: dict[str, tuple[float, ...]] | None = None

    @property
    def all_excluded(self) -> bool:
        return not self.kept


def far_site_filter(rtt443_by_site: Mapping[str, float],
                    multiplier: float = DEFAULT_FAR_MULTIPLIER) -> FilterResult:
    """Keep sites whose port-443 RTT is at least ``multiplier`` times the
    across-site SD.  An empty ``kept`` tuple is a legal (warning) outcome."""
    if len(rtt443_by_site) < 2:
        raise InsufficientSites(f"need at least 2 sites, got {len(rtt443_by_site)}")
    threshold = multiplier * sample_sd(list(rtt443_by_site.values()))
    kept = tuple(site for site, rtt in rtt443_by_site.items() if rtt >= threshold)
    excluded = tuple(site for site, rtt in rtt443_by_site.items() if rtt < threshold)
    return FilterResult(kept, excluded, threshold, dict(rtt443_by_site), multiplier)


def per_site_far_filter(samples_by_site: Mapping[str, Sequence[float]],
                        multiplier: float = DEFAULT_FAR_MULTIPLIER) -> FilterResult:
    """Alternate reading of the far-site rule: a site is kept when the mean
    of its own repeated RTT_443 samples is at least ``multiplier`` times
    their SD."""
    if not samples_by_site:
        raise InsufficientSites("need at least 1 site")
    means, kept, excluded = {}, [], []
    for site, samples in samples_by_site.items():
        means[site] = mean(samples)
        (kept if means[site] >= multiplier * sample_sd(samples) else excluded).append(site)
    return FilterResult(tuple(kept), tuple(excluded), None, means, multiplier, "per-site",
                        {site: tuple(float(x) for x in s) for site, s in samples_by_site.items()})


def refilter(result: FilterResult) -> FilterResult:
    """Recompute a filter result from the inputs it records."""
    if result.mode == "per-site":
        return per_site_far_filter(result.per_site_samples or {}, result.multiplier)
    return far_site_filter(result.per_site_rtt443, result.multiplier)


@dataclass(frozen=True)
class SiteDiffStats:
    diffs: tuple[float, ...]
    mean_diff: float
    sd_diff: float

    @classmethod
    def of(cls, diffs: Sequence[float]) -> "SiteDiffStats":
        diffs = tuple(float(d) for d in diffs)
        return cls(diffs, mean(diffs), sample_sd(diffs))


def exceeds_noise(mean_diff: float, sd_diff: float) -> bool:
    """Strict ``mean > 0 and mean > sd``; ties are negative."""
    return mean_diff > 0 and mean_diff > sd_diff


@dataclass(frozen=True)
class SiteVerdict:
    hostname: str
    stats: SiteDiffStats
    proxy_inferred: bool


def site_proxy_verdict(pairs: Sequence[ProbePair] | Sequence[float],
                       hostname: str = "") -> SiteVerdict:
    """Accepts probe pairs or bare diffs (``rtt443 - rtt80``)."""
    diffs = [p.diff if isinstance(p, ProbePair) else p for p in pairs]
    stats = SiteDiffStats.of(diffs)
    return SiteVerdict(hostname, stats, exceeds_noise(stats.mean_diff, stats.sd_diff))


@dataclass(frozen=True)
class NetworkVerdict:
    site_verdicts: tuple[SiteVerdict, ...]
    fraction_positive: float
    proxy_present: bool
    threshold_fraction: float = DEFAULT_NETWORK_FRACTION


def network_proxy_verdict(verdicts: Sequence[SiteVerdict],
                          threshold_fraction: float = DEFAULT_NETWORK_FRACTION) -> NetworkVerdict:
    if not verdicts:
        raise EmptyInput("no site verdicts")
    fraction = sum(v.proxy_inferred for v in verdicts) / len(verdicts)
    return NetworkVerdict(tuple(verdicts), fraction, fraction >= threshold_fraction,
                          threshold_fraction)


@dataclass(frozen=True)
class CachePairSample:
    object: str
    first_fetch: float
    second_fetch: float
    diff: float
    body_digest_first: str
    body_digest_second: str

    @classmethod
    def of(cls, url: str, first_fetch: float, second_fetch: float,
           digest_first: str = "", digest_second: str = "") -> "CachePairSample":
        return cls(url, first_fetch, second_fetch, first_fetch - second_fetch,
                   digest_first, digest_second)


@dataclass(frozen=True)
class CacheVerdict:
    object: str
    pairs: tuple[CachePairSample, ...]
    mean_diff: float
    sd_diff: float
    cached: bool
    content_stable: bool
    min_effect_floor: float = DEFAULT_CACHE_FLOOR_MS

    @property
    def needs_rewrite_analysis(self) -> bool:
        return not self.content_stable


def cache_verdict(pairs: Sequence[CachePairSample],
                  min_effect_floor: float = DEFAULT_CACHE_FLOOR_MS) -> CacheVerdict:
    if len(pairs) < 2:
        raise InsufficientSamples(f"need at least 2 cache pairs, got {len(pairs)}")
    urls = {p.object for p in pairs}
    if len(urls) != 1:
        raise MixedUrls(sorted(urls))
    diffs = [p.diff for p in pairs]
    mean_diff, sd_diff = mean(diffs), sample_sd(diffs)
    digests = {d for p in pairs for d in (p.body_digest_first, p.body_digest_second)}
    return CacheVerdict(
        object=pairs[0].object,
        pairs=tuple(pairs),
        mean_diff=mean_diff,
        sd_diff=sd_diff,
        cached=mean_diff > sd_diff and mean_diff > min_effect_floor,
        content_stable=len(digests) == 1,
        min_effect_floor=min_effect_floor,
    )


@dataclass(frozen=True)
class PerfDelta:
    baseline: float
    alternative: float
    relative_improvement: float
    kind: str = ""
    subject: str = ""


def relative_improvement(baseline: float, alternative: float,
                         kind: str = "", subject: str = "") -> PerfDelta:
    if not baseline > 0:
        raise NonPositiveBaseline(baseline)
    return PerfDelta(baseline, alternative, (baseline - alternative) / baseline, kind, subject)


# scikit-learn style wrappers

class FarSiteFilter(BaseEstimator):
    """Learns the far-site threshold from one RTT_443 per site.

    ``fit(X)`` takes an array of shape (n_sites,) or (n_sites, 1);
    ``predict(X)`` returns True for sites far enough to keep.
    """

    def __init__(self, multiplier=DEFAULT_FAR_MULTIPLIER):
        self.multiplier = multiplier

    def fit(self, X, y=None):
        X = _column(X)
        if X.shape[0] < 2:
            raise InsufficientSites(f"need at least 2 sites, got {X.shape[0]}")
        self.threshold_ = self.multiplier * sample_sd(X.tolist())
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "threshold_")
        return _column(X) >= self.threshold_

    def fit_predict(self, X, y=None):
        return self.fit(X).predict(X)


class ProxyExistenceDetector(ClassifierMixin, BaseEstimator):
    """Per-site proxy classifier over a (n_sites, n_probes) matrix of
    ``rtt443 - rtt80`` differences.

    There is nothing to learn for the per-site rule; ``fit`` records the
    network-level verdict for the training sites.
    """

    def __init__(self, threshold_fraction=DEFAULT_NETWORK_FRACTION):
        self.threshold_fraction = threshold_fraction

    def fit(self, X, y=None):
        X = self._validate(X)
        self.classes_ = np.array([False, True])
        self.n_features_in_ = X.shape[1]
        positive = self.predict(X)
        self.fraction_positive_ = float(positive.mean())
        self.proxy_present_ = self.fraction_positive_ >= self.threshold_fraction
        return self

    def decision_function(self, X):
        """``mean - sd`` per row; positive exactly when the site is flagged."""
        X = self._validate(X)
        return np.array([_margin(row) for row in X.tolist()])

    def predict(self, X):
        X = self._validate(X)
        return np.array([exceeds_noise(mean(row), sample_sd(row)) for row in X.tolist()])

    @staticmethod
    def _validate(X):
        X = check_array(X, dtype=float)
        if X.shape[1] < 2:
            raise InsufficientSamples("each site needs at least 2 probe pairs")
        return X


class CacheDetector(ClassifierMixin, BaseEstimator):
    """Per-object cache classifier over a (n_objects, n_pairs) matrix of
    ``first_fetch - second_fetch`` differences."""

    def __init__(self, min_effect_floor=DEFAULT_CACHE_FLOOR_MS):
        self.min_effect_floor = min_effect_floor

    def fit(self, X, y=None):
        X = ProxyExistenceDetector._validate(X)
        self.classes_ = np.array([False, True])
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        X = ProxyExistenceDetector._validate(X)
        out = []
        for row in X.tolist():
            m, sd = mean(row), sample_sd(row)
            out.append(m > sd and m > self.min_effect_floor)
        return np.array(out)


def _margin(row):
    return mean(row) - sample_sd(row)


def _column(X):
    X = check_array(X, ensure_2d=False, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError("expected a single column of RTT values")
        X = X[:, 0]
    return X
