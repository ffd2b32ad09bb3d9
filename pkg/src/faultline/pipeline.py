"""End-to-end orchestration: detect, localize, attribute.

Windows stream through the detector in timestamp order and every alert the
trigger emits is triaged in firing order. For each alert, spans from a
lookback before its t* build the service call graph, the alerting pod's
service is expanded to its critical path (itself plus all transitive callers
and callees), and install events on critical-path services inside the
lookback become candidate root causes. Each candidate gets a counterfactual
fit of the target metric; the significant candidate with the largest
standardized effect is the diagnosis. An alert with no candidate installs on
its critical path is not actionable, so triage moves on to the next alert;
the report comes from the first alert that yields a root cause, falling back
to the first alert whose candidates were at least analyzed.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable

import numpy as np

from .config import PipelineConfig
from .detector import (DetectorModel, TrainingConfig, TriggerState, flag_windows,
                       train, update_trigger)
from .errors import DataError
from .impact import Diagnosis, ImpactQuery, analyze, select_root_cause
from .installog import InstallLog
from .telemetry import (MetricStore, featurize, load_metrics, make_windows,
                        pod_index_for, training_norm_stats)
from .tracegraph import build_graph, critical_path, filter_installs, load_spans

logger = logging.getLogger(__name__)

MIN_PRE_LEN_SAMPLES = 10


def service_of_pod(pod: str, services: Iterable[str]) -> str:
    """Map a pod name to its service: exact match, else strip a .N suffix."""
    known = set(services)
    if pod in known:
        return pod
    base = pod.rsplit(".", 1)[0]
    return base if base in known else pod


def train_model(store: MetricStore, t_start: int, t_end: int,
                config: PipelineConfig,
                hyper: TrainingConfig | None = None) -> DetectorModel:
    """Fit the detector on the healthy span [t_start, t_end) of a store."""
    hyper = hyper or TrainingConfig()
    norm_stats = training_norm_stats(store, t_start, t_end)
    pods = store.pods()
    pod_index = pod_index_for(pods)
    features = {}
    for pod in pods:
        windows = make_windows(store, pod, config.w_s, config.s_s, t_start, t_end)
        features[pod] = [featurize(w, norm_stats, pod_index, mode=config.feature_mode)
                         for w in windows]
    return train(features, hyper, config.seed, norm_stats=norm_stats,
                 metrics=tuple(store.metrics()),
                 config_fingerprint=config.fingerprint)


def iter_alerts(flags: dict[str, list[tuple[int, float, bool]]],
                config: PipelineConfig) -> list:
    """Drive the per-pod trigger counters in global timestamp order and
    return every alert emitted, in firing order."""
    events = sorted((start, pod, anomalous)
                    for pod, triples in flags.items()
                    for start, _, anomalous in triples)
    state = TriggerState(tau=config.tau, window_s=config.w_s,
                         stride_s=config.s_s)
    alerts = []
    for start, pod, anomalous in events:
        alert = update_trigger(state, pod, anomalous, start)
        if alert is not None:
            alerts.append(alert)
    alerts.sort(key=lambda a: (a.fired_at, a.pod))
    return alerts


def first_alert(flags: dict[str, list[tuple[int, float, bool]]],
                config: PipelineConfig):
    """The earliest alert, or None."""
    alerts = iter_alerts(flags, config)
    return alerts[0] if alerts else None


def select_target_metric(store: MetricStore, pod: str,
                         norm_stats: dict[str, tuple[float, float]],
                         t_star: int, w_s: int) -> str:
    """The metric with the largest standardized mean shift in the window
    ending at t*; this is what the injectioned change moved hardest."""
    best_metric, best_shift = None, -1.0
    for metric in sorted(store.metrics(pod)):
        if metric not in norm_stats:
            continue
        mean, std = norm_stats[metric]
        _, vals = store.series(pod, metric).slice(t_star - w_s, t_star)
        if len(vals) == 0:
            continue
        shift = abs(float(vals.mean()) - mean) / (std if std > 0 else 1.0)
        if shift > best_shift:
            best_metric, best_shift = metric, shift
    if best_metric is None:
        raise DataError(f"pod {pod!r} has no scored metrics before the alert")
    return best_metric


def _candidate_seed(seed: int, ts: int) -> int:
    return int(np.random.SeedSequence((seed, ts)).generate_state(1, np.uint64)[0])


def run_pipeline(config: PipelineConfig, metrics_path: str | Path,
                 spans_path: str | Path, installs_path: str | Path,
                 model: DetectorModel, t_start: int | None = None,
                 t_end: int | None = None,
                 report_path: str | Path | None = None) -> dict:
    """Run detection and, on an alert, diagnosis; returns the report dict."""
    model.check_fingerprint(*config.fingerprint)
    for path in (metrics_path, spans_path, installs_path):
        if not Path(path).exists():
            raise DataError(f"missing input file {path}")
    store = load_metrics(metrics_path, config.scrape_interval_s)
    if t_start is None or t_end is None:
        lo, hi = store.time_range()
        t_start = lo if t_start is None else t_start
        t_end = hi + config.scrape_interval_s if t_end is None else t_end

    flags = flag_windows(model, store, t_start, t_end)
    alerts = iter_alerts(flags, config)
    if not alerts:
        report = {"status": "healthy", "config": _config_echo(config)}
        return _finish(report, report_path)

    log = InstallLog(installs_path)
    passed_over: list[dict] = []
    first_scored: dict | None = None
    first_any: dict | None = None
    for alert in alerts:
        report = _diagnose_alert(alert, config, store, log, spans_path, model)
        if report is None:
            passed_over.append({"pod": alert.pod, "fired_at": alert.fired_at,
                                "reason": "no candidate installs on the "
                                          "critical path"})
            continue
        if report["chosen"] is not None:
            break
        if report["candidates"] and first_scored is None:
            first_scored = report
        if first_any is None:
            first_any = report
        report = None
    else:
        report = first_scored or first_any
        if report is None:
            # Alerts fired, but none had an install to blame.
            first = alerts[0]
            report = {"status": "no_actionable_alert",
                      "alert": {"pod": first.pod, "fired_at": first.fired_at,
                                "window_trace": list(first.window_trace)},
                      "config": _config_echo(config)}
    report["passed_over_alerts"] = passed_over
    return _finish(report, report_path)


def _diagnose_alert(alert, config: PipelineConfig, store: MetricStore,
                    log: InstallLog, spans_path: str | Path,
                    model: DetectorModel) -> dict | None:
    """Attribution for one alert; None when it has no candidate installs."""
    t_star = alert.fired_at
    spans = load_spans(spans_path, t_start=t_star - config.graph_lookback_s,
                       t_end=t_star)
    graph = build_graph(spans)
    alert_service = service_of_pod(alert.pod, graph.nodes)
    critical = critical_path(graph, alert_service)

    in_window = log.query_window(log.services(),
                                 t_star - config.lookback_s, t_star)
    candidates = filter_installs(in_window, critical)
    if not candidates:
        return None

    target_metric = select_target_metric(store, alert.pod, model.norm_stats,
                                         t_star, config.w_s)
    control_pods = sorted(
        pod for pod in store.pods()
        if service_of_pod(pod, graph.nodes) not in critical
    )[:config.max_controls]
    controls = [store.series(pod, target_metric) for pod in control_pods
                if store.has_series(pod, target_metric)]
    target = store.series(alert.pod, target_metric)

    scored: list[tuple[int, object]] = []
    skipped: list[dict] = []
    rows: list[dict] = []
    prev_ts: int | None = None
    for ts, event in candidates:
        pre_len = config.pre_len_s
        if prev_ts is not None:
            # Never let a pre-period reach into the previous candidate's
            # post-period, but keep the minimum the model needs to fit.
            pre_len = min(pre_len, ts - prev_ts)
        pre_len = max(pre_len, MIN_PRE_LEN_SAMPLES * config.scrape_interval_s)
        prev_ts = ts
        query = ImpactQuery(target=target, controls=controls,
                            intervention_ts=ts, pre_len_s=pre_len,
                            post_end_ts=t_star, scale_len_s=config.pre_len_s)
        try:
            result = analyze(query, n_draws=config.n_draws,
                             seed=_candidate_seed(config.seed, ts))
        except DataError as exc:
            logger.warning("skipping candidate %s@%d: %s", event.service, ts, exc)
            skipped.append({"ts": ts, "service": event.service,
                            "reason": str(exc)})
            continue
        scored.append((ts, result))
        ci = result.credible_interval
        rows.append({
            "ts": ts,
            "service": event.service,
            "delta": event.delta.specs(),
            "avg_effect": result.avg_effect,
            "p_value": result.p_value,
            "ci_lower_mean": float(ci[:, 0].mean()),
            "ci_upper_mean": float(ci[:, 1].mean()),
        })

    chosen_ts = select_root_cause(scored, alpha=config.alpha)
    chosen_row = None
    diagnosis_chosen = None
    if chosen_ts is not None:
        event = next(e for ts, e in candidates if ts == chosen_ts)
        chosen_row = {"ts": chosen_ts, "service": event.service,
                      "delta": event.delta.specs()}
        diagnosis_chosen = (chosen_ts, event)

    diagnosis = Diagnosis(pod=alert.pod, alert=alert, chosen=diagnosis_chosen,
                          candidates=scored)
    report = {
        "status": "diagnosed",
        "alert": {"pod": alert.pod, "fired_at": alert.fired_at,
                  "window_trace": list(alert.window_trace)},
        "critical_path": sorted(critical),
        "target_metric": target_metric,
        "control_pods": control_pods,
        "candidates": rows,
        "skipped_candidates": skipped,
        "chosen": chosen_row,
        "config": _config_echo(config),
    }
    report["_diagnosis"] = diagnosis
    return report


def _config_echo(config: PipelineConfig) -> dict:
    return {"W": config.w_s, "S": config.s_s, "tau": config.tau,
            "alpha": config.alpha, "seed": config.seed}


def _finish(report: dict, report_path: str | Path | None) -> dict:
    if report_path is not None:
        serializable = {k: v for k, v in report.items() if not k.startswith("_")}
        Path(report_path).write_text(
            json.dumps(serializable, sort_keys=True, separators=(",", ":")) + "\n")
    return report
