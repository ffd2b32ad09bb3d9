"""Per-pod metric ingestion, sliding windows and feature extraction.

Telemetry arrives as timestamped (pod, metric, value) records aligned to a
fixed scrape interval. The store keeps one time-ordered series per
(pod, metric). Detection consumes fixed-duration windows cut at a fixed
stride; each window is summarised into a feature vector (z-scored per-metric
summary statistics plus a pod one-hot) that the reconstruction model scores.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

DEFAULT_SCRAPE_INTERVAL_S = 30

FEATURE_MODES = ("stats", "raw")


@dataclass(frozen=True)
class MetricSample:
    """One scraped value: (pod, metric) at an interval-aligned timestamp."""

    pod: str
    metric: str
    timestamp: int
    value: float


@dataclass
class MetricSeries:
    """Time-ordered samples for one (pod, metric); gaps stay gaps."""

    pod: str
    metric: str
    timestamps: list[int] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.timestamps)

    def slice(self, t_start: int, t_end: int) -> tuple[np.ndarray, np.ndarray]:
        """Samples with t_start <= ts < t_end, as (timestamps, values) arrays."""
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        mask = (ts >= t_start) & (ts < t_end)
        return ts[mask], vals[mask]


@dataclass
class IngestReport:
    accepted: int = 0
    duplicates: int = 0
    rejected: list[tuple[dict, str]] = field(default_factory=list)


@dataclass
class Window:
    """One pod's telemetry over [start, start + duration_s), all metrics."""

    pod: str
    start: int
    duration_s: int
    stride_s: int
    samples_by_metric: dict[str, np.ndarray]

    @property
    def end(self) -> int:
        return self.start + self.duration_s


@dataclass
class FeatureVector:
    """Model input for one window: per-metric z-score stats + pod one-hot.

    `stats` holds (mean, std, min, max) per metric in sorted metric order
    ("stats" mode) or the flattened z-scored series ("raw" mode); the one-hot
    is appended after the stats when the full vector is assembled.
    """

    pod: str
    window_start: int
    stats: np.ndarray
    pod_onehot: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.stats, self.pod_onehot])


class MetricStore:
    """Holds one MetricSeries per (pod, metric).

    Single writer, many readers: `ingest` is the only mutator; windowing and
    featurisation are pure reads.
    """

    def __init__(self, scrape_interval_s: int = DEFAULT_SCRAPE_INTERVAL_S):
        if scrape_interval_s <= 0:
            raise ConfigError("scrape interval must be positive")
        self.scrape_interval_s = int(scrape_interval_s)
        self._series: dict[tuple[str, str], dict[int, float]] = {}

    # -- writes ------------------------------------------------------------

    def ingest(self, records: Iterable[MetricSample | Mapping]) -> IngestReport:
        """Insert records; out-of-order timestamps are reordered, duplicates
        keep the last value, non-finite or misaligned records are rejected."""
        report = IngestReport()
        for rec in records:
            if isinstance(rec, MetricSample):
                pod, metric, ts, value = rec.pod, rec.metric, rec.timestamp, rec.value
            else:
                try:
                    pod, metric = rec["pod"], rec["metric"]
                    ts, value = int(rec["ts"]), float(rec["value"])
                except (KeyError, TypeError, ValueError) as exc:
                    report.rejected.append((dict(rec), f"malformed record: {exc}"))
                    continue
            if not math.isfinite(value):
                report.rejected.append(
                    ({"pod": pod, "metric": metric, "ts": ts, "value": value},
                     "non-finite value"))
                continue
            if ts % self.scrape_interval_s != 0:
                report.rejected.append(
                    ({"pod": pod, "metric": metric, "ts": ts, "value": value},
                     f"timestamp not aligned to {self.scrape_interval_s}s scrape interval"))
                continue
            bucket = self._series.setdefault((pod, metric), {})
            if ts in bucket:
                logger.warning("duplicate sample for (%s, %s) at t=%d: keeping last value",
                               pod, metric, ts)
                report.duplicates += 1
            bucket[ts] = value
            report.accepted += 1
        return report

    # -- reads -------------------------------------------------------------

    def pods(self) -> list[str]:
        return sorted({pod for pod, _ in self._series})

    def metrics(self, pod: str | None = None) -> list[str]:
        if pod is None:
            return sorted({m for _, m in self._series})
        return sorted({m for p, m in self._series if p == pod})

    def series(self, pod: str, metric: str) -> MetricSeries:
        bucket = self._series.get((pod, metric))
        if bucket is None:
            raise DataError(f"no series for pod={pod!r} metric={metric!r}")
        ts = sorted(bucket)
        return MetricSeries(pod, metric, ts, [bucket[t] for t in ts])

    def has_series(self, pod: str, metric: str) -> bool:
        return (pod, metric) in self._series

    def time_range(self) -> tuple[int, int]:
        """(earliest, latest) sample timestamp across all series."""
        if not self._series:
            raise DataError("store is empty")
        lo = min(min(bucket) for bucket in self._series.values())
        hi = max(max(bucket) for bucket in self._series.values())
        return lo, hi


def load_metrics(path: str | Path,
                 scrape_interval_s: int = DEFAULT_SCRAPE_INTERVAL_S) -> MetricStore:
    """Read the line-delimited metrics format (keys pod/metric/ts/value)."""
    store = MetricStore(scrape_interval_s)
    with open(path) as fh:
        records = (json.loads(line) for line in fh if line.strip())
        report = store.ingest(records)
    if report.rejected:
        raise DataError(f"{len(report.rejected)} invalid records in {path}; "
                        f"first: {report.rejected[0][1]}")
    return store


def write_metrics(path: str | Path, samples: Iterable[MetricSample]) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps({"pod": s.pod, "metric": s.metric,
                                 "ts": s.timestamp, "value": s.value},
                                sort_keys=True, separators=(",", ":")) + "\n")


def make_windows(store: MetricStore, pod: str, duration_s: int, stride_s: int,
                 t_start: int, t_end: int,
                 diagnostics: dict | None = None) -> list[Window]:
    """Cut sliding windows for one pod over [t_start, t_end).

    Window k starts at t_start + k*stride_s and must fit entirely before
    t_end. A window missing any sample of any metric is dropped and tallied
    in `diagnostics` (key: (pod, "dropped_windows")) instead of being
    imputed, so the healthy-behaviour model never trains on invented data.
    """
    interval = store.scrape_interval_s
    if duration_s <= 0 or duration_s % interval != 0:
        raise ConfigError(f"window duration {duration_s}s is not a positive "
                          f"multiple of the {interval}s scrape interval")
    if stride_s <= 0 or stride_s % interval != 0:
        raise ConfigError(f"window stride {stride_s}s is not a positive "
                          f"multiple of the {interval}s scrape interval")

    span = t_end - t_start
    if span < duration_s:
        return []

    metrics = store.metrics(pod)
    if not metrics:
        raise DataError(f"no telemetry for pod {pod!r}")
    per_window = duration_s // interval

    # Dense value-by-timestamp lookup once per metric, windows sliced from it.
    grids = {}
    for metric in metrics:
        series = store.series(pod, metric)
        grids[metric] = dict(zip(series.timestamps, series.values))

    windows: list[Window] = []
    n_starts = (span - duration_s) // stride_s + 1
    for k in range(n_starts):
        start = t_start + k * stride_s
        samples_by_metric: dict[str, np.ndarray] = {}
        complete = True
        for metric in metrics:
            grid = grids[metric]
            vals = np.empty(per_window, dtype=np.float64)
            for i in range(per_window):
                v = grid.get(start + i * interval)
                if v is None:
                    complete = False
                    break
                vals[i] = v
            if not complete:
                break
            samples_by_metric[metric] = vals
        if not complete:
            if diagnostics is not None:
                key = (pod, "dropped_windows")
                diagnostics[key] = diagnostics.get(key, 0) + 1
            continue
        windows.append(Window(pod, start, duration_s, stride_s, samples_by_metric))
    return windows


def training_norm_stats(store: MetricStore, t_start: int, t_end: int) -> dict[str, tuple[float, float]]:
    """Per-metric (mean, population std) over [t_start, t_end) across all pods.

    Computed from the training span only; scoring-time featurisation must
    reuse these, never statistics of the data being scored.
    """
    stats: dict[str, tuple[float, float]] = {}
    for metric in store.metrics():
        chunks = []
        for pod in store.pods():
            if store.has_series(pod, metric):
                _, vals = store.series(pod, metric).slice(t_start, t_end)
                if len(vals):
                    chunks.append(vals)
        if not chunks:
            raise DataError(f"metric {metric!r} has no samples in the training span")
        all_vals = np.concatenate(chunks)
        stats[metric] = (float(all_vals.mean()), float(all_vals.std()))
    return stats


def featurize(window: Window, norm_stats: Mapping[str, tuple[float, float]],
              pod_index: Mapping[str, int], mode: str = "stats") -> FeatureVector:
    """Summarise one window into a feature vector.

    Each metric series is z-scored with the training-set (mean, std) — a zero
    training std falls back to a divisor of 1 — then reduced to
    (mean, population std, min, max) in "stats" mode or kept whole in "raw"
    mode; metrics in sorted name order, pod one-hot appended.
    """
    if mode not in FEATURE_MODES:
        raise ConfigError(f"unknown feature mode {mode!r}")
    if window.pod not in pod_index:
        raise DataError(f"pod {window.pod!r} was not present at training time")

    parts = []
    for metric in sorted(window.samples_by_metric):
        if metric not in norm_stats:
            raise DataError(f"metric {metric!r} has no training normalization stats")
        mean, std = norm_stats[metric]
        z = (window.samples_by_metric[metric] - mean) / (std if std > 0 else 1.0)
        if mode == "stats":
            parts.append(np.array([z.mean(), z.std(), z.min(), z.max()]))
        else:
            parts.append(z)
    stats = np.concatenate(parts)

    onehot = np.zeros(len(pod_index), dtype=np.float64)
    onehot[pod_index[window.pod]] = 1.0
    return FeatureVector(window.pod, window.start, stats, onehot)


def pod_index_for(pods: Sequence[str]) -> dict[str, int]:
    return {pod: i for i, pod in enumerate(sorted(pods))}


def feature_matrix(features: Sequence[FeatureVector]) -> np.ndarray:
    """Stack feature vectors row-wise for batch scoring."""
    if not features:
        return np.empty((0, 0))
    return np.stack([f.vector for f in features])
