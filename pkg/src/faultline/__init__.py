"""Windowed anomaly detection over microservice telemetry, with causal
root-cause attribution of package installations.

The pipeline: ingest per-pod metrics, score sliding windows with a shared
reconstruction model, alert after tau consecutive anomalous windows, narrow
suspect services with a trace-derived call graph, and test each recent
install timestamp with a Bayesian counterfactual on the target metric.
"""

from .config import PipelineConfig, load_config
from .detector import (AnomalyAlert, DetectorModel, TrainingConfig, TriggerState,
                       compute_threshold, detect, load_model, save_model, score,
                       train, update_trigger)
from .errors import (ConfigError, DataError, FaultlineError, FingerprintMismatch,
                     GraphCycleError, TrainingError)
from .evaluation import DetectionMetrics, evaluate, grid_search
from .impact import (Diagnosis, ImpactQuery, ImpactResult, fit_counterfactual,
                     impact_summary, select_root_cause)
from .installog import InstallEvent, InstallLog, PackageSet, diff, scan
from .pipeline import run_pipeline, train_model
from .simulator import (GroundTruth, InjectionSpec, LoadConfig, Topology,
                        composepost_topology, inject, propagate)
from .telemetry import (FeatureVector, MetricSample, MetricSeries, MetricStore,
                        Window, featurize, load_metrics, make_windows)
from .tracegraph import CausalGraph, Span, build_graph, critical_path

__version__ = "0.1.0"
