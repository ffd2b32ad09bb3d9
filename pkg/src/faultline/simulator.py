"""Deterministic microservice telemetry generator with fault injection.

Produces, for a service topology under synthetic background load, the three
interchange files the pipeline consumes (metrics, spans, install log) plus
ground-truth labels. Per-pod baselines are a pod-specific mean, a diurnal
sinusoid, and seeded Gaussian noise, so healthy telemetry is non-zero and
non-constant. Four injection kinds perturb their resource metric on the
target pod, and every injection inflates request latency on downstream
pods, attenuated per hop.

Baseline parameters (mean, sinusoid amplitude/phase, noise level) derive
from a stable hash of (pod, metric), not the run seed: two runs with
different seeds describe the same fleet under different noise, which is
what lets a model trained on one run score another.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .installog import InstallEvent, InstallLog, PackageSet, apply_delta
from .telemetry import DEFAULT_SCRAPE_INTERVAL_S, MetricSample, write_metrics
from .tracegraph import Span, write_spans

CPU_CAPACITY = 1.0          # cores
MEMORY_CAPACITY = 4.0       # GiB
DISK_CAPACITY = 100.0       # GiB
MEMORY_FILL_S = 1800.0      # full leak ramp at magnitude 1
DISK_FILL_S = 1200.0        # full disk ramp at magnitude 1
NETWORK_SPIKE_GAIN = 4.0    # bytes-rate spike in units of the pod's mean
LATENCY_INJECTION_GAIN = 5.0   # own-pod span inflation per unit magnitude
PROPAGATION_GAIN = 2.0         # downstream latency inflation at hop 1
HOP_ATTENUATION = 0.5
# Downstream inflation below this relative level is dropped from both the
# emitted series and the labels: it is beneath the telemetry noise floor, so
# keeping it would label windows no detector could distinguish from healthy.
MIN_PROPAGATED_INFLATION = 0.08

DIURNAL_PERIOD_S = 21600  # 6 h, so an 18 h training span sees every phase

INJECTION_KINDS = ("cpu_spike", "disk_saturation", "memory_leak", "network_latency")

METRICS = ("cpu_usage", "memory_usage", "disk_usage",
           "network_bytes_rate", "request_latency_seconds")

# Per metric: (mean low, mean high, amplitude fraction, noise fraction).
# Ranges are deliberately tight across pods so that injections move a metric
# by several global standard deviations even at low magnitude.  Noise sits
# well below the diurnal amplitude, which keeps reconstruction errors on
# healthy traffic dominated by repeatable structure rather than sampling
# noise and makes percentile thresholds stable between runs.
_BASELINE_RANGES = {
    "cpu_usage": (0.12, 0.22, 0.15, 0.01),
    "memory_usage": (1.0, 1.2, 0.05, 0.004),
    "disk_usage": (38.0, 42.0, 0.05, 0.004),
    "network_bytes_rate": (0.9, 1.1, 0.15, 0.01),
    "request_latency_seconds": (0.045, 0.055, 0.02, 0.004),
}

_BASE_PACKAGES = ("service-core@1.0.0", "runtime@3.11.0")


@dataclass(frozen=True)
class Topology:
    services: tuple[str, ...]
    call_edges: tuple[tuple[str, str], ...]
    pods_per_service: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.services)) != len(self.services):
            raise ConfigError("duplicate service names in topology")
        known = set(self.services)
        for caller, callee in self.call_edges:
            if caller not in known or callee not in known:
                raise ConfigError(f"edge ({caller}, {callee}) references an "
                                  "unknown service")
        if self._has_cycle():
            raise ConfigError("topology call edges must form a DAG")
        for service, n in self.pods_per_service.items():
            if service not in known:
                raise ConfigError(f"pod count given for unknown service {service!r}")
            if n < 1:
                raise ConfigError(f"service {service!r} needs >= 1 pod")

    def _has_cycle(self) -> bool:
        out = {s: [] for s in self.services}
        indeg = {s: 0 for s in self.services}
        for caller, callee in self.call_edges:
            out[caller].append(callee)
            indeg[callee] += 1
        ready = [s for s in self.services if indeg[s] == 0]
        seen = 0
        while ready:
            node = ready.pop()
            seen += 1
            for nxt in out[node]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    ready.append(nxt)
        return seen != len(self.services)

    def pods(self) -> list[str]:
        """All pod names, sorted. A single-pod service's pod shares its name."""
        out = []
        for service in self.services:
            n = self.pods_per_service.get(service, 1)
            if n == 1:
                out.append(service)
            else:
                out.extend(f"{service}.{i}" for i in range(n))
        return sorted(out)

    def service_of_pod(self, pod: str) -> str:
        if pod in self.services:
            return pod
        base = pod.rsplit(".", 1)[0]
        if base in self.services:
            return base
        raise DataError(f"pod {pod!r} does not belong to any topology service")

    def pods_of_service(self, service: str) -> list[str]:
        if service not in self.services:
            raise DataError(f"unknown service {service!r}")
        n = self.pods_per_service.get(service, 1)
        return [service] if n == 1 else [f"{service}.{i}" for i in range(n)]

    def roots(self) -> list[str]:
        called = {callee for _, callee in self.call_edges}
        return [s for s in self.services if s not in called]

    def callees(self, service: str) -> list[str]:
        return [b for a, b in self.call_edges if a == service]

    def descendants_with_hops(self, service: str) -> dict[str, int]:
        """Minimum hop count to every service reachable downstream."""
        hops: dict[str, int] = {}
        frontier = [(service, 0)]
        while frontier:
            node, h = frontier.pop(0)
            for nxt in self.callees(node):
                if nxt not in hops or h + 1 < hops[nxt]:
                    hops[nxt] = h + 1
                    frontier.append((nxt, h + 1))
        return hops


def composepost_topology() -> Topology:
    """The 12-service social-network compose-post dependency graph."""
    return Topology(
        services=(
            "nginx-web-server", "compose-post-service", "text-service",
            "media-service", "user-service", "unique-id-service",
            "user-timeline-service", "post-storage-service",
            "home-timeline-service", "url-shorten-service",
            "user-mention-service", "social-graph-service",
        ),
        call_edges=(
            ("nginx-web-server", "compose-post-service"),
            ("compose-post-service", "text-service"),
            ("compose-post-service", "media-service"),
            ("compose-post-service", "user-service"),
            ("compose-post-service", "unique-id-service"),
            ("compose-post-service", "user-timeline-service"),
            ("compose-post-service", "post-storage-service"),
            ("compose-post-service", "home-timeline-service"),
            ("text-service", "url-shorten-service"),
            ("text-service", "user-mention-service"),
            ("home-timeline-service", "social-graph-service"),
        ),
    )


@dataclass(frozen=True)
class InjectionSpec:
    kind: str
    pod: str
    start_ts: int
    end_ts: int
    magnitude: float

    def __post_init__(self):
        if self.kind not in INJECTION_KINDS:
            raise ConfigError(f"unknown injection kind {self.kind!r}")
        if not self.start_ts < self.end_ts:
            raise ConfigError("injection start must precede its end")
        if not 0 < self.magnitude <= 1:
            raise ConfigError("injection magnitude must be in (0, 1]")


@dataclass(frozen=True)
class PropagationInterval:
    """Derived latency inflation on a downstream pod."""

    pod: str
    start_ts: int
    end_ts: int
    factor: float
    hops: int
    source_pod: str


@dataclass
class GroundTruth:
    """Anomalous intervals per pod, plus the causal install timestamp."""

    pods: tuple[str, ...]
    intervals: dict[str, list[tuple[int, int]]]
    duration_s: int
    scrape_interval_s: int
    causal_install_ts: int | None = None

    def window_labels(self, duration_s: int, stride_s: int,
                      t_start: int = 0, t_end: int | None = None
                      ) -> dict[tuple[str, int], bool]:
        """True for every (pod, window start) whose window overlaps an
        anomalous interval; windows enumerated like the telemetry module."""
        if t_end is None:
            t_end = self.duration_s
        labels: dict[tuple[str, int], bool] = {}
        span = t_end - t_start
        if span < duration_s:
            return labels
        n_starts = (span - duration_s) // stride_s + 1
        for pod in self.pods:
            spans = self.intervals.get(pod, [])
            for k in range(n_starts):
                start = t_start + k * stride_s
                end = start + duration_s
                labels[(pod, start)] = any(a < end and start < b
                                           for a, b in spans)
        return labels

    def to_json(self, label_w_s: int, label_s_s: int) -> str:
        labels = self.window_labels(label_w_s, label_s_s)
        doc = {
            "pods": list(self.pods),
            "intervals": {p: [list(iv) for iv in ivs]
                          for p, ivs in sorted(self.intervals.items())},
            "duration_s": self.duration_s,
            "scrape_interval_s": self.scrape_interval_s,
            "causal_install_ts": self.causal_install_ts,
            "label_config": {"W": label_w_s, "S": label_s_s},
            "window_labels": [[pod, start, flag]
                              for (pod, start), flag in sorted(labels.items())],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        doc = json.loads(text)
        return cls(pods=tuple(doc["pods"]),
                   intervals={p: [tuple(iv) for iv in ivs]
                              for p, ivs in doc["intervals"].items()},
                   duration_s=doc["duration_s"],
                   scrape_interval_s=doc["scrape_interval_s"],
                   causal_install_ts=doc["causal_install_ts"])


@dataclass
class LoadConfig:
    scrape_interval_s: int = DEFAULT_SCRAPE_INTERVAL_S
    request_interval_s: int = 60
    label_w_s: int = 600
    label_s_s: int = 300


@dataclass
class SimulationOutput:
    metrics_path: Path
    spans_path: Path
    installs_path: Path
    ground_truth_path: Path
    ground_truth: GroundTruth


def baseline_params(pod: str, metric: str) -> tuple[float, float, float, float]:
    """(mean, amplitude, noise std, phase) for one series.

    Keyed by a stable hash of the names alone so every run, whatever its
    seed, agrees on what this pod looks like when healthy.
    """
    if metric not in _BASELINE_RANGES:
        raise ConfigError(f"unknown metric {metric!r}")
    lo, hi, amp_frac, noise_frac = _BASELINE_RANGES[metric]
    digest = hashlib.sha256(f"{pod}|{metric}".encode()).digest()
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(int.from_bytes(digest[:8], "big"))))
    mean = rng.uniform(lo, hi)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    return mean, amp_frac * mean, noise_frac * mean, phase


def inject(kind: str, magnitude: float) -> Callable[[str, np.ndarray, np.ndarray, float], np.ndarray]:
    """Perturbation for one injection: f(metric, seconds since injection
    start, baseline values, pod's baseline mean) -> perturbed values."""
    if kind not in INJECTION_KINDS:
        raise ConfigError(f"unknown injection kind {kind!r}")
    if not 0 < magnitude <= 1:
        raise ConfigError("injection magnitude must be in (0, 1]")

    def perturb(metric: str, rel_t: np.ndarray, values: np.ndarray,
                pod_mean: float) -> np.ndarray:
        if kind == "cpu_spike" and metric == "cpu_usage":
            return np.minimum(values + magnitude * CPU_CAPACITY, CPU_CAPACITY)
        if kind == "memory_leak" and metric == "memory_usage":
            ramp = magnitude * MEMORY_CAPACITY * rel_t / MEMORY_FILL_S
            grown = np.minimum(values + ramp, MEMORY_CAPACITY)
            return np.maximum.accumulate(grown)
        if kind == "disk_saturation" and metric == "disk_usage":
            ramp = magnitude * DISK_CAPACITY * rel_t / DISK_FILL_S
            return np.minimum(values + ramp, DISK_CAPACITY)
        if kind == "network_latency":
            if metric == "network_bytes_rate":
                return values + magnitude * NETWORK_SPIKE_GAIN * pod_mean
            if metric == "request_latency_seconds":
                return values * (1.0 + LATENCY_INJECTION_GAIN * magnitude)
        return values

    return perturb


def propagate(topology: Topology, injections: Sequence[InjectionSpec],
              min_inflation: float = 0.0) -> list[PropagationInterval]:
    """Latency-inflation intervals induced downstream of each injection.

    The inflation factor at hop h is 1 + PROPAGATION_GAIN * magnitude *
    HOP_ATTENUATION**(h-1); intervals whose inflation falls below
    `min_inflation` are omitted.
    """
    out: list[PropagationInterval] = []
    for spec in injections:
        source_service = topology.service_of_pod(spec.pod)
        for service, hops in sorted(topology.descendants_with_hops(source_service).items()):
            inflation = (PROPAGATION_GAIN * spec.magnitude
                         * HOP_ATTENUATION ** (hops - 1))
            if inflation < min_inflation - 1e-12:
                continue
            for pod in topology.pods_of_service(service):
                out.append(PropagationInterval(
                    pod=pod, start_ts=spec.start_ts, end_ts=spec.end_ts,
                    factor=1.0 + inflation, hops=hops, source_pod=spec.pod))
    out.sort(key=lambda p: (p.pod, p.start_ts, p.source_pod))
    return out


def _check_injections(topology: Topology, injections: Sequence[InjectionSpec],
                      duration_s: int) -> None:
    pods = set(topology.pods())
    for spec in injections:
        if spec.pod not in pods:
            raise ConfigError(f"injection targets unknown pod {spec.pod!r}")
        if spec.start_ts < 0 or spec.end_ts > duration_s:
            raise ConfigError("injection interval must lie within the run")
    by_pod_kind: dict[tuple[str, str], list[InjectionSpec]] = {}
    for spec in injections:
        by_pod_kind.setdefault((spec.pod, spec.kind), []).append(spec)
    for (pod, kind), specs in by_pod_kind.items():
        specs = sorted(specs, key=lambda s: s.start_ts)
        for a, b in zip(specs, specs[1:]):
            if b.start_ts < a.end_ts:
                raise ConfigError(f"overlapping {kind} injections on {pod!r}; "
                                  "scenarios must be unambiguous")


def _series_values(pod: str, metric: str, ts: np.ndarray,
                   noise: np.ndarray) -> np.ndarray:
    mean, amp, noise_sd, phase = baseline_params(pod, metric)
    values = (mean
              + amp * np.sin(2.0 * math.pi * ts / DIURNAL_PERIOD_S + phase)
              + noise_sd * noise)
    return np.maximum(values, 1e-9)


def _latency_factor_at(pod: str, service: str, t: int,
                       injections: Sequence[InjectionSpec],
                       propagated: Sequence[PropagationInterval]) -> float:
    factor = 1.0
    for spec in injections:
        if (spec.kind == "network_latency" and spec.pod == pod
                and spec.start_ts <= t < spec.end_ts):
            factor *= 1.0 + LATENCY_INJECTION_GAIN * spec.magnitude
    for p in propagated:
        if p.pod == pod and p.start_ts <= t < p.end_ts:
            factor *= p.factor
    return factor


def _emit_spans(topology: Topology, load: LoadConfig, duration_s: int,
                injections: Sequence[InjectionSpec],
                propagated: Sequence[PropagationInterval],
                rng: np.random.Generator) -> list[Span]:
    spans: list[Span] = []
    roots = topology.roots()
    counter = 0
    for batch_ts in range(0, duration_s, load.request_interval_s):
        trace_id = f"t{batch_ts:08d}"

        def walk(service: str, parent_id: str | None) -> None:
            nonlocal counter
            span_id = f"s{counter:08d}"
            counter += 1
            mean, _, _, _ = baseline_params(service, "request_latency_seconds")
            # Lognormal with the baseline mean; sigma is cosmetic, only the
            # parent links matter to the graph builder.
            z = rng.standard_normal()
            duration = mean * math.exp(0.25 * z - 0.25 ** 2 / 2.0)
            pod = topology.pods_of_service(service)[0]
            duration *= _latency_factor_at(pod, service, batch_ts,
                                           injections, propagated)
            spans.append(Span(trace_id=trace_id, span_id=span_id,
                              parent_span_id=parent_id, service=service,
                              start=float(batch_ts), duration=duration))
            for callee in topology.callees(service):
                walk(callee, span_id)

        for root in roots:
            walk(root, None)
    return spans


def _build_install_log(path: Path,
                       installs: Sequence[tuple[str, int, Sequence[str]]],
                       duration_s: int) -> None:
    for service, ts, specs in installs:
        if not 0 <= ts <= duration_s:
            raise ConfigError(f"install on {service!r} at {ts} is outside the run")
    path.touch()  # an install-less scenario still needs a (empty) log file
    log = InstallLog(path)
    state: dict[str, PackageSet] = {}
    for service, ts, specs in sorted(installs, key=lambda e: (e[1], e[0])):
        delta = PackageSet.of(*specs)
        if service not in state:
            base = PackageSet.of(*_BASE_PACKAGES)
            snapshot = apply_delta(base, delta)
            state[service] = snapshot
            log.record([InstallEvent(service, ts, delta, full_snapshot=snapshot)])
        else:
            state[service] = apply_delta(state[service], delta)
            log.record([InstallEvent(service, ts, delta)])


def run(topology: Topology, load: LoadConfig,
        injections: Sequence[InjectionSpec],
        installs: Sequence[tuple[str, int, Sequence[str]]],
        duration_s: int, seed: int, out_dir: str | Path,
        causal_install_ts: int | None = None) -> SimulationOutput:
    """Generate one scenario into out_dir; byte-identical for a fixed seed."""
    if duration_s <= 0 or duration_s % load.scrape_interval_s != 0:
        raise ConfigError("duration must be a positive multiple of the scrape interval")
    _check_injections(topology, injections, duration_s)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed,))))

    propagated = propagate(topology, injections,
                           min_inflation=MIN_PROPAGATED_INFLATION)
    ts = np.arange(0, duration_s, load.scrape_interval_s, dtype=np.int64)

    samples: list[MetricSample] = []
    for pod in topology.pods():
        service = topology.service_of_pod(pod)
        for metric in METRICS:
            noise = rng.standard_normal(len(ts))
            values = _series_values(pod, metric, ts, noise)
            mean = baseline_params(pod, metric)[0]
            for spec in injections:
                if spec.pod != pod:
                    continue
                fn = inject(spec.kind, spec.magnitude)
                mask = (ts >= spec.start_ts) & (ts < spec.end_ts)
                if mask.any():
                    values[mask] = fn(metric, (ts[mask] - spec.start_ts).astype(float),
                                      values[mask], mean)
            if metric == "request_latency_seconds":
                for p in propagated:
                    if p.pod != pod:
                        continue
                    mask = (ts >= p.start_ts) & (ts < p.end_ts)
                    values[mask] *= p.factor
            samples.extend(MetricSample(pod, metric, int(t), float(v))
                           for t, v in zip(ts, values))

    metrics_path = out_dir / "metrics.jsonl"
    write_metrics(metrics_path, samples)

    spans = _emit_spans(topology, load, duration_s, injections, propagated, rng)
    spans_path = out_dir / "spans.jsonl"
    write_spans(spans_path, spans)

    installs_path = out_dir / "installs.jsonl"
    if installs_path.exists():
        installs_path.unlink()
    _build_install_log(installs_path, installs, duration_s)

    intervals: dict[str, list[tuple[int, int]]] = {}
    for spec in injections:
        intervals.setdefault(spec.pod, []).append((spec.start_ts, spec.end_ts))
    for p in propagated:
        intervals.setdefault(p.pod, []).append((p.start_ts, p.end_ts))
    for pod in intervals:
        intervals[pod] = sorted(set(intervals[pod]))

    truth = GroundTruth(pods=tuple(topology.pods()), intervals=intervals,
                        duration_s=duration_s,
                        scrape_interval_s=load.scrape_interval_s,
                        causal_install_ts=causal_install_ts)
    ground_truth_path = out_dir / "ground_truth.json"
    ground_truth_path.write_text(truth.to_json(load.label_w_s, load.label_s_s))

    return SimulationOutput(metrics_path=metrics_path, spans_path=spans_path,
                            installs_path=installs_path,
                            ground_truth_path=ground_truth_path,
                            ground_truth=truth)
