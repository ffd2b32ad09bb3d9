"""Acceptance gate: the six headline requirements, one verdict line each.

Each test computes its result, records a PASS/FAIL summary line (printed
after the run), and then asserts. Everything is seeded, so the verdicts are
reproducible run to run.
"""

import time

import numpy as np
import pytest

from faultline.config import PipelineConfig
from faultline.detector import TrainingConfig, flag_windows
from faultline.evaluation import (KINDS, attribution_trials,
                                  detection_experiment,
                                  staged_rollout_scenario)
from faultline.installog import InstallEvent, InstallLog, PackageSet, diff
from faultline.pipeline import train_model
from faultline.simulator import InjectionSpec, LoadConfig, Topology, run
from faultline.telemetry import MetricSample, MetricStore, make_windows
from faultline.tracegraph import CausalGraph, critical_path

from conftest import ACCEPTANCE_LINES, SIM_END, TRAIN_END
from test_detector import brute_force_alerts, run_trigger
from test_impact import make_query
from test_tracegraph import brute_force_reach

from faultline.impact import analyze


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE_LINES.append(
        f"criterion {criterion} {'PASS' if ok else 'FAIL'}: {detail}")
    return ok


@pytest.fixture(scope="module")
def detection_results(healthy_store, base_config, tmp_path_factory):
    """Timed end to end: train the detector, then 10 randomized injections
    of each kind at W=600, S=300, scored at T=1 and T=2."""
    workdir = tmp_path_factory.mktemp("acceptance-detection")
    t0 = time.time()
    model = train_model(healthy_store, 0, TRAIN_END, base_config,
                        TrainingConfig())
    results = {kind: detection_experiment(model, base_config, kind, 10,
                                          base_config.seed, workdir)
               for kind in KINDS}
    return results, time.time() - t0


class TestCriterion1DetectionQuality:
    def test_macro_f1_at_tau_and_budget(self, detection_results):
        results, elapsed = detection_results
        f1s = {kind: res["metrics_t2"].f1 for kind, res in results.items()}
        ok = all(v >= 0.95 for v in f1s.values()) and elapsed <= 600
        detail = ("macro-F1@T=2 "
                  + ", ".join(f"{k}={v:.4f}" for k, v in f1s.items())
                  + f" (threshold 0.95); train+40 runs in {elapsed:.1f}s"
                  " (budget 600s)")
        assert record(1, ok, detail)


class TestCriterion2ConfirmationPrecision:
    def test_precision_does_not_drop_with_confirmation(self, detection_results):
        results, _ = detection_results
        pairs = {kind: (res["metrics_t1"].anomalous.precision,
                        res["metrics_t2"].anomalous.precision)
                 for kind, res in results.items()}
        ok = all(p2 >= p1 for p1, p2 in pairs.values())
        detail = ("anomalous precision T=1 -> T=2 "
                  + ", ".join(f"{k}: {p1:.4f} -> {p2:.4f}"
                              for k, (p1, p2) in pairs.items()))
        assert record(2, ok, detail)


class TestCriterion3Attribution:
    def test_standard_and_adversarial_suites(self, trained_model, base_config,
                                             tmp_path_factory):
        workdir = tmp_path_factory.mktemp("acceptance-attribution")
        std = attribution_trials(trained_model, base_config, seed=42,
                                 workdir=workdir / "std")
        adv = attribution_trials(trained_model, base_config, seed=42,
                                 workdir=workdir / "adv", adversarial=True)
        ok = (std["successes"] >= 8
              and adv["naive_successes"] < adv["successes"])
        detail = (f"install spacings 600/300/120s: {std['successes']}/"
                  f"{std['total']} correct (need >= 8); adversarial suite: "
                  f"pipeline {adv['successes']}/{adv['total']} vs "
                  f"most-recent baseline {adv['naive_successes']}/"
                  f"{adv['total']}")
        assert record(3, ok, detail)


class TestCriterion4StagedRollout:
    def test_three_variants(self, trained_model, base_config,
                            tmp_path_factory):
        workdir = tmp_path_factory.mktemp("acceptance-rollout")
        outcomes = []
        for seed in (0, 1, 2):
            out = staged_rollout_scenario(trained_model, base_config, seed,
                                          workdir / f"v{seed}")
            outcomes.append(out)
        ok = all("text-service" not in o["candidate_services"]
                 and o["chosen_ts"] == o["true_ts"] for o in outcomes)
        detail = ("3/3 variants chose the rollout at the injection start "
                  "with text-service filtered out"
                  if ok else "variants: " + "; ".join(
                      f"seed={i} chosen={o['chosen_ts']} true={o['true_ts']} "
                      f"cands={o['candidate_services']}"
                      for i, o in enumerate(outcomes)))
        assert record(4, ok, detail)


def _trigger_equivalence(n_sequences=1000) -> bool:
    rng = np.random.default_rng(99)
    for _ in range(n_sequences):
        tau = int(rng.integers(1, 5))
        start, flags = 0, []
        for _ in range(int(rng.integers(0, 40))):
            if rng.random() < 0.1:
                start += 300 * int(rng.integers(2, 4))
            flags.append((start, bool(rng.random() < 0.6)))
            start += 300
        if run_trigger(flags, tau=tau, window_s=600, stride_s=300) \
                != brute_force_alerts(flags, tau, window_s=600, stride_s=300):
            return False
    return True


def _window_count_formula(n_cases=200) -> bool:
    rng = np.random.default_rng(17)
    for _ in range(n_cases):
        w = 30 * int(rng.integers(1, 30))
        s = 30 * int(rng.integers(1, 30))
        span = 30 * int(rng.integers(0, 200))
        store = MetricStore(scrape_interval_s=30)
        store.ingest([MetricSample("p", "m", t, 1.0)
                      for t in range(0, span, 30)])
        got = len(make_windows(store, "p", w, s, 0, span))
        want = 0 if span < w else (span - w) // s + 1
        if got != want:
            return False
    return True


def _reachability_symmetry(n_graphs=100) -> bool:
    rng = np.random.default_rng(23)
    for _ in range(n_graphs):
        n = int(rng.integers(2, 9))
        nodes = [f"n{i}" for i in range(n)]
        edges = {(nodes[i], nodes[j])
                 for i in range(n) for j in range(i + 1, n)
                 if rng.random() < 0.35}
        graph = CausalGraph(set(nodes), edges)
        paths = {s: critical_path(graph, s) for s in nodes}
        for x in nodes:
            if paths[x] != brute_force_reach(graph, x):
                return False
            for y in nodes:
                if (x in paths[y]) != (y in paths[x]):
                    return False
    return True


def _sbom_replay(n_chains=100) -> bool:
    rng = np.random.default_rng(31)
    names = ["alpha", "beta", "gamma", "delta"]
    for _ in range(n_chains):
        log = InstallLog()
        state = PackageSet.of("seed@1")
        log.record([InstallEvent("svc", 0, state, state)])
        for i in range(1, int(rng.integers(2, 10))):
            target = PackageSet(frozenset(
                (n, str(rng.integers(1, 4))) for n in names
                if rng.random() < 0.6))
            delta = diff(target, state)
            if not delta:
                continue
            log.record([InstallEvent("svc", i, delta)])
            state = target
        if log.replay_state("svc") != state:
            return False
    return True


def _null_calibration(n_trials=200, alpha=0.01):
    rng = np.random.default_rng(123)
    rejections = 0
    for trial in range(n_trials):
        q = make_query(rng, n_pre=80, n_post=20, delta=0.0, noise=0.15)
        if analyze(q, n_draws=199, seed=trial).p_value < alpha:
            rejections += 1
    return rejections


def _p_monotonicity() -> bool:
    p_values = []
    for delta in (0.0, 0.1, 0.2, 0.4, 0.8):
        rng = np.random.default_rng(7)
        q = make_query(rng, n_pre=120, n_post=25, delta=delta, noise=0.1)
        p_values.append(analyze(q, n_draws=499, seed=0).p_value)
    return (all(b <= a + 1e-12 for a, b in zip(p_values, p_values[1:]))
            and p_values[-1] < p_values[0])


def _byte_determinism(tmp_dir) -> bool:
    topo = Topology(services=("a", "b", "c"),
                    call_edges=(("a", "b"), ("b", "c")))
    spec = InjectionSpec("cpu_spike", "b", 600, 1200, 0.5)
    installs = [("a", 300, ["libx@2.0"])]
    outs = [run(topo, LoadConfig(), [spec], installs, 3600, 5, tmp_dir / d)
            for d in ("one", "two")]
    paths = ("metrics_path", "spans_path", "installs_path",
             "ground_truth_path")
    return all(getattr(outs[0], p).read_bytes()
               == getattr(outs[1], p).read_bytes() for p in paths)


class TestCriterion5Properties:
    def test_property_suite_representatives(self, tmp_path):
        checks = {
            "trigger==brute-force(1000 seqs)": _trigger_equivalence(),
            "window-count formula(200 cases)": _window_count_formula(),
            "reachability symmetry(100 DAGs)": _reachability_symmetry(),
            "install-log replay(100 chains)": _sbom_replay(),
            "p-value monotone in effect": _p_monotonicity(),
            "simulator byte-determinism": _byte_determinism(tmp_path),
        }
        rejections = _null_calibration()
        checks[f"null calibration {rejections}/200 at alpha=0.01"] = (
            rejections / 200 <= 0.05)
        ok = all(checks.values())
        detail = "; ".join(f"{name} {'ok' if good else 'FAILED'}"
                           for name, good in checks.items())
        assert record(5, ok, detail)


class TestCriterion6HoldoutCalibration:
    def test_per_pod_false_positive_rate(self, trained_model, healthy_store):
        flags = flag_windows(trained_model, healthy_store, TRAIN_END, SIM_END)
        rates = {pod: sum(f for _, _, f in triples) / len(triples)
                 for pod, triples in flags.items()}
        worst_pod = max(rates, key=rates.get)
        ok = all(r <= 0.025 for r in rates.values())
        detail = (f"24h healthy hold-out at 99.5th-pct thresholds: worst "
                  f"per-pod FP rate {rates[worst_pod]:.4f} ({worst_pod}), "
                  "limit 0.025")
        assert record(6, ok, detail)
