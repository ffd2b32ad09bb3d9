"""Experiment harnesses: detection metrics, grid search, attribution trials.

Window-level predictions are compared against ground-truth labels with
two-class (anomalous/healthy) precision, recall, F1, and accuracy, reported
macro-averaged (headline) and support-weighted. "T = tau" thresholded
predictions keep a raw window flag only when it sits inside a consecutive
run of at least tau raw flags, mirroring what the alerting trigger would
have confirmed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import PipelineConfig
from .detector import DetectorModel, flag_windows
from .errors import DataError
from .pipeline import run_pipeline
from .simulator import (GroundTruth, InjectionSpec, LoadConfig, Topology,
                        composepost_topology, run)
from .telemetry import load_metrics

logger = logging.getLogger(__name__)

KINDS = ("cpu_spike", "disk_saturation", "memory_leak", "network_latency")

GRID_W = (600, 450, 300)
GRID_S = (300, 60, 30)
GRID_T = (1, 2)


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class DetectionMetrics:
    f1: float
    precision: float
    recall: float
    accuracy: float
    anomalous: ClassScores
    healthy: ClassScores
    weighted_f1: float
    weighted_precision: float
    weighted_recall: float
    tp: int
    fp: int
    fn: int
    tn: int

    @classmethod
    def from_confusion(cls, tp: int, fp: int, fn: int, tn: int) -> "DetectionMetrics":
        anomalous = _class_scores(tp, fp, fn, tp + fn)
        healthy = _class_scores(tn, fn, fp, tn + fp)
        total = tp + fp + fn + tn
        if total == 0:
            raise DataError("empty confusion matrix")
        support = anomalous.support + healthy.support

        def wavg(a: float, h: float) -> float:
            return (a * anomalous.support + h * healthy.support) / support

        return cls(
            f1=(anomalous.f1 + healthy.f1) / 2.0,
            precision=(anomalous.precision + healthy.precision) / 2.0,
            recall=(anomalous.recall + healthy.recall) / 2.0,
            accuracy=(tp + tn) / total,
            anomalous=anomalous,
            healthy=healthy,
            weighted_f1=wavg(anomalous.f1, healthy.f1),
            weighted_precision=wavg(anomalous.precision, healthy.precision),
            weighted_recall=wavg(anomalous.recall, healthy.recall),
            tp=tp, fp=fp, fn=fn, tn=tn,
        )


def _class_scores(tp: int, fp: int, fn: int, support: int) -> ClassScores:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return ClassScores(precision, recall, f1, support)


def evaluate(predicted: Mapping[tuple[str, int], bool],
             labels: Mapping[tuple[str, int], bool]) -> DetectionMetrics:
    """Two-class window metrics; predictions and labels must share keys."""
    if set(predicted) != set(labels):
        raise DataError("prediction and label window sets differ")
    tp = fp = fn = tn = 0
    for key, truth in labels.items():
        guess = predicted[key]
        if truth and guess:
            tp += 1
        elif truth:
            fn += 1
        elif guess:
            fp += 1
        else:
            tn += 1
    return DetectionMetrics.from_confusion(tp, fp, fn, tn)


def confirm_flags(flags: dict[str, list[tuple[int, float, bool]]],
                  tau: int, stride_s: int) -> dict[tuple[str, int], bool]:
    """Thresholded (T = tau) predictions from raw window flags.

    A window stays positive only if its maximal run of stride-consecutive
    raw positives reaches tau; with tau = 1 this is the raw flags.
    """
    out: dict[tuple[str, int], bool] = {}
    for pod, triples in flags.items():
        triples = sorted(triples)
        run: list[int] = []

        def commit():
            keep = len(run) >= tau
            for s in run:
                out[(pod, s)] = keep
            run.clear()

        prev_start = None
        for start, _, raw in triples:
            if raw and run and prev_start is not None and start != prev_start + stride_s:
                commit()
            if raw:
                run.append(start)
            else:
                commit()
                out[(pod, start)] = False
            prev_start = start
        commit()
    return out


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(parts).generate_state(1, np.uint64)[0])


def injection_scenario(kind: str, seed: int, out_dir: str | Path,
                       topology: Topology | None = None,
                       duration_s: int = 3600,
                       interval: tuple[int, int] = (1800, 2400),
                       magnitude_range: tuple[float, float] = (0.1, 1.0),
                       ):
    """One randomized injection run: the pod and magnitude come from the
    seed, the interval is fixed so labels are predictable."""
    topology = topology or composepost_topology()
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed,))))
    pods = topology.pods()
    pod = pods[int(rng.integers(len(pods)))]
    magnitude = float(rng.uniform(*magnitude_range))
    spec = InjectionSpec(kind=kind, pod=pod, start_ts=interval[0],
                         end_ts=interval[1], magnitude=magnitude)
    sim = run(topology, LoadConfig(), [spec], installs=[],
              duration_s=duration_s, seed=seed, out_dir=out_dir)
    return sim, spec


def detection_experiment(model: DetectorModel, config: PipelineConfig,
                         kind: str, n_runs: int, seed: int,
                         workdir: str | Path) -> dict:
    """Pool n_runs randomized injections of one kind and score them at
    T=1 (raw flags) and T=tau (run-confirmed)."""
    workdir = Path(workdir)
    conf = {1: [0, 0, 0, 0], config.tau: [0, 0, 0, 0]}
    runs = []
    for i in range(n_runs):
        run_seed = _derived_seed(seed, KINDS.index(kind), i)
        out_dir = workdir / f"{kind}-{i:02d}"
        sim, spec = injection_scenario(kind, run_seed, out_dir)
        store = load_metrics(sim.metrics_path, config.scrape_interval_s)
        flags = flag_windows(model, store, 0, sim.ground_truth.duration_s)
        labels = sim.ground_truth.window_labels(config.w_s, config.s_s)
        raw = {(pod, start): flag
               for pod, triples in flags.items()
               for start, _, flag in triples}
        confirmed = confirm_flags(flags, config.tau, config.s_s)
        for tau, predicted in ((1, raw), (config.tau, confirmed)):
            m = evaluate(predicted, labels)
            counts = conf[tau]
            counts[0] += m.tp
            counts[1] += m.fp
            counts[2] += m.fn
            counts[3] += m.tn
        runs.append({"seed": run_seed, "pod": spec.pod,
                     "magnitude": spec.magnitude})
    return {
        "kind": kind,
        "runs": runs,
        "metrics_t1": DetectionMetrics.from_confusion(*conf[1]),
        "metrics_t2": DetectionMetrics.from_confusion(*conf[config.tau]),
    }


def grid_search(rows: Sequence[Mapping], w_list: Sequence[int] = GRID_W,
                s_list: Sequence[int] = GRID_S,
                kinds: Sequence[str] = KINDS) -> dict[str, dict]:
    """Select, per anomaly kind, the (W, S) with the highest F1 after
    thresholding, ties broken by the F1 before thresholding.

    `rows` carry keys W, S, kind, f1_t1, f1_t2; every (W, S, kind) cell must
    be present.
    """
    table = {(r["W"], r["S"], r["kind"]): r for r in rows}
    missing = [(w, s, k) for w in w_list for s in s_list for k in kinds
               if (w, s, k) not in table]
    if missing:
        raise DataError(f"grid results missing cells: {missing}")
    best: dict[str, dict] = {}
    for kind in kinds:
        cells = [table[(w, s, kind)] for w in w_list for s in s_list]
        best[kind] = max(cells, key=lambda r: (r["f1_t2"], r["f1_t1"]))
    return best


def run_grid(train_store, train_span: tuple[int, int], base_config: PipelineConfig,
             hyper, n_runs: int, seed: int, workdir: str | Path,
             w_list: Sequence[int] = GRID_W, s_list: Sequence[int] = GRID_S,
             kinds: Sequence[str] = KINDS) -> list[dict]:
    """Train one model per (W, S) cell and fill the full result table."""
    from .pipeline import train_model

    workdir = Path(workdir)
    rows = []
    for w in w_list:
        for s in s_list:
            cell_config = PipelineConfig(
                w_s=w, s_s=s, tau=base_config.tau, alpha=base_config.alpha,
                scrape_interval_s=base_config.scrape_interval_s,
                feature_mode=base_config.feature_mode, seed=base_config.seed)
            model = train_model(train_store, *train_span, cell_config, hyper)
            for kind in kinds:
                res = detection_experiment(model, cell_config, kind, n_runs,
                                           _derived_seed(seed, w, s),
                                           workdir / f"w{w}-s{s}")
                rows.append({
                    "W": w, "S": s, "kind": kind,
                    "f1_t1": res["metrics_t1"].f1,
                    "f1_t2": res["metrics_t2"].f1,
                    "precision_t1": res["metrics_t1"].precision,
                    "precision_t2": res["metrics_t2"].precision,
                    "recall_t1": res["metrics_t1"].recall,
                    "recall_t2": res["metrics_t2"].recall,
                })
    return rows


def format_table(rows: Sequence[Mapping]) -> str:
    """Aligned text table; also parseable as tab-separated rows."""
    if not rows:
        return ""
    cols = list(rows[0])
    rendered = [[_fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in rendered))
              for i, c in enumerate(cols)]
    lines = ["\t".join(c.ljust(w) for c, w in zip(cols, widths))]
    for row in rendered:
        lines.append("\t".join(v.ljust(w) for v, w in zip(row, widths)))
    return "\n".join(lines)


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def attribution_trial(model: DetectorModel, config: PipelineConfig,
                      spacing_s: int, seed: int, workdir: str | Path,
                      adversarial: bool = False) -> dict:
    """One five-install trial: a uniformly chosen install also starts an
    anomaly; success means the diagnosis picks exactly that timestamp.

    With adversarial=True the culprit is never the most recent install, so
    a picks-the-latest baseline cannot be right.
    """
    topology = composepost_topology()
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed,))))
    pods = topology.pods()
    pod = pods[int(rng.integers(len(pods)))]
    culprit_idx = int(rng.integers(4 if adversarial else 5))
    magnitude = float(rng.uniform(0.6, 1.0))

    first_ts = 1200
    duration_s = 7200
    install_ts = [first_ts + i * spacing_s for i in range(5)]
    culprit_ts = install_ts[culprit_idx]
    service = topology.service_of_pod(pod)
    installs = [(service, ts, [f"pkg-rev@{1 + i}.0.0"])
                for i, ts in enumerate(install_ts)]
    spec = InjectionSpec(kind="cpu_spike", pod=pod, start_ts=culprit_ts,
                         end_ts=duration_s, magnitude=magnitude)
    sim = run(topology, LoadConfig(), [spec], installs, duration_s, seed,
              workdir, causal_install_ts=culprit_ts)
    report = run_pipeline(config, sim.metrics_path, sim.spans_path,
                          sim.installs_path, model, 0, duration_s)

    chosen = report.get("chosen")
    chosen_ts = chosen["ts"] if chosen else None
    all_ts = ([c["ts"] for c in report.get("candidates", [])]
              + [c["ts"] for c in report.get("skipped_candidates", [])])
    naive_ts = max(all_ts) if all_ts else None
    return {
        "pod": pod,
        "spacing_s": spacing_s,
        "culprit_ts": culprit_ts,
        "culprit_idx": culprit_idx,
        "chosen_ts": chosen_ts,
        "naive_ts": naive_ts,
        "success": chosen_ts == culprit_ts,
        "naive_success": naive_ts == culprit_ts,
        "status": report["status"],
    }


def attribution_trials(model: DetectorModel, config: PipelineConfig,
                       spacings: Sequence[int] = (600, 300, 120),
                       trials_per_spacing: int = 3, seed: int = 0,
                       workdir: str | Path = ".",
                       adversarial: bool = False) -> dict:
    workdir = Path(workdir)
    rows = []
    for spacing in spacings:
        for i in range(trials_per_spacing):
            trial_seed = _derived_seed(seed, spacing, i, int(adversarial))
            out = workdir / f"trial-{spacing}-{i}{'-adv' if adversarial else ''}"
            rows.append(attribution_trial(model, config, spacing, trial_seed,
                                          out, adversarial=adversarial))
    per_spacing = {
        spacing: sum(r["success"] for r in rows if r["spacing_s"] == spacing)
        for spacing in spacings
    }
    return {
        "rows": rows,
        "per_spacing": per_spacing,
        "successes": sum(r["success"] for r in rows),
        "naive_successes": sum(r["naive_success"] for r in rows),
        "total": len(rows),
    }


def staged_rollout_scenario(model: DetectorModel, config: PipelineConfig,
                            seed: int, workdir: str | Path) -> dict:
    """Latency anomaly at home-timeline with installs on home-timeline,
    social-graph, and text services.

    text-service is neither upstream nor downstream of home-timeline, so the
    critical path must exclude its install from the candidate set; the
    chosen diagnosis should be the home-timeline rollout that started the
    anomaly.
    """
    topology = composepost_topology()
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed,))))
    injection_ts = 3600
    duration_s = 7200
    magnitude = float(rng.uniform(0.5, 0.9))
    text_ts = injection_ts - int(rng.integers(600, 1200))
    social_ts = injection_ts - int(rng.integers(1200, 1800))
    installs = [
        ("home-timeline-service", injection_ts, ["timeline-cache@2.0.0"]),
        ("social-graph-service", social_ts, ["graph-client@1.4.2"]),
        ("text-service", text_ts, ["tokenizer@0.9.1"]),
    ]
    spec = InjectionSpec(kind="network_latency", pod="home-timeline-service",
                         start_ts=injection_ts, end_ts=duration_s,
                         magnitude=magnitude)
    sim = run(topology, LoadConfig(), [spec], installs, duration_s, seed,
              workdir, causal_install_ts=injection_ts)
    report = run_pipeline(config, sim.metrics_path, sim.spans_path,
                          sim.installs_path, model, 0, duration_s)
    candidate_services = sorted({c["service"] for c in report.get("candidates", [])}
                                | {c["service"] for c in report.get("skipped_candidates", [])})
    chosen = report.get("chosen")
    return {
        "status": report["status"],
        "alert_pod": report.get("alert", {}).get("pod"),
        "critical_path": report.get("critical_path", []),
        "candidate_services": candidate_services,
        "chosen_ts": chosen["ts"] if chosen else None,
        "true_ts": injection_ts,
        "report": report,
    }
