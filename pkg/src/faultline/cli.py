"""Command-line entry points for the pipeline and its experiments."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .config import PipelineConfig, load_config
from .detector import TrainingConfig, load_model, save_model
from .errors import FaultlineError
from .evaluation import (KINDS, attribution_trials, detection_experiment,
                         confirm_flags, evaluate, format_table, grid_search,
                         run_grid, staged_rollout_scenario)
from .pipeline import first_alert, run_pipeline, train_model
from .simulator import (GroundTruth, InjectionSpec, LoadConfig,
                        composepost_topology, run)
from .telemetry import load_metrics
from .detector import flag_windows


def _config(config_path, **overrides) -> PipelineConfig:
    return load_config(config_path, **overrides)


config_option = click.option("--config", "config_path", type=click.Path(exists=True),
                             default=None, help="key=value config file")
seed_option = click.option("--seed", type=int, default=None,
                           help="seed governing all randomness")


@click.group()
def main():
    """Telemetry anomaly detection with install-level root-cause analysis."""


@main.command()
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--duration", "duration_s", type=int, default=86400, show_default=True)
@click.option("--kind", type=click.Choice(KINDS), default=None,
              help="inject one anomaly of this kind")
@click.option("--pod", default=None, help="injection target pod")
@click.option("--magnitude", type=float, default=0.8, show_default=True)
@click.option("--start", "inj_start", type=int, default=None)
@click.option("--end", "inj_end", type=int, default=None)
@click.option("--install", "installs", multiple=True,
              help="service:ts:name@version install event (repeatable)")
@click.option("--seed", type=int, default=0, show_default=True)
def simulate(out_dir, duration_s, kind, pod, magnitude, inj_start, inj_end,
             installs, seed):
    """Generate a scenario: metrics, spans, install log, ground truth."""
    topology = composepost_topology()
    specs = []
    if kind is not None:
        if pod is None or inj_start is None or inj_end is None:
            raise click.UsageError("--kind needs --pod, --start and --end")
        specs.append(InjectionSpec(kind=kind, pod=pod, start_ts=inj_start,
                                   end_ts=inj_end, magnitude=magnitude))
    events = []
    for item in installs:
        service, ts, spec = item.split(":", 2)
        events.append((service, int(ts), [spec]))
    sim = run(topology, LoadConfig(), specs, events, duration_s, seed, out_dir)
    click.echo(f"wrote {sim.metrics_path}")
    click.echo(f"wrote {sim.spans_path}")
    click.echo(f"wrote {sim.installs_path}")
    click.echo(f"wrote {sim.ground_truth_path}")


@main.command()
@config_option
@seed_option
@click.option("--metrics", "metrics_path", type=click.Path(exists=True), required=True)
@click.option("--train-start", type=int, default=0, show_default=True)
@click.option("--train-end", type=int, required=True)
@click.option("--model-out", type=click.Path(), required=True)
@click.option("--epochs", type=int, default=None)
def train(config_path, seed, metrics_path, train_start, train_end, model_out,
          epochs):
    """Fit the detector on a healthy span and save the model artifact."""
    config = _config(config_path, seed=seed)
    hyper = TrainingConfig()
    if epochs is not None:
        hyper.epochs = epochs
    store = load_metrics(metrics_path, config.scrape_interval_s)
    model = train_model(store, train_start, train_end, config, hyper)
    save_model(model, model_out)
    click.echo(f"trained on pods: {', '.join(model.pods)}")
    click.echo(f"saved model to {model_out}")


@main.command()
@config_option
@seed_option
@click.option("--metrics", "metrics_path", type=click.Path(exists=True), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--start", "t_start", type=int, default=None)
@click.option("--end", "t_end", type=int, default=None)
def detect(config_path, seed, metrics_path, model_path, t_start, t_end):
    """Stream windows through the detector and report the first alert."""
    config = _config(config_path, seed=seed)
    model = load_model(model_path)
    model.check_fingerprint(*config.fingerprint)
    store = load_metrics(metrics_path, config.scrape_interval_s)
    if t_start is None or t_end is None:
        lo, hi = store.time_range()
        t_start = lo if t_start is None else t_start
        t_end = hi + config.scrape_interval_s if t_end is None else t_end
    flags = flag_windows(model, store, t_start, t_end)
    alert = first_alert(flags, config)
    n_flagged = sum(f for triples in flags.values() for _, _, f in triples)
    click.echo(f"windows flagged: {n_flagged}")
    if alert is None:
        click.echo("healthy")
    else:
        click.echo(f"alert: pod={alert.pod} fired_at={alert.fired_at} "
                   f"trace={list(alert.window_trace)}")


@main.command()
@config_option
@seed_option
@click.option("--metrics", "metrics_path", type=click.Path(exists=True), required=True)
@click.option("--spans", "spans_path", type=click.Path(exists=True), required=True)
@click.option("--installs", "installs_path", type=click.Path(exists=True), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--report", "report_path", type=click.Path(), default=None)
def diagnose(config_path, seed, metrics_path, spans_path, installs_path,
             model_path, report_path):
    """Full pipeline: detect, build the graph, attribute the root cause."""
    config = _config(config_path, seed=seed)
    model = load_model(model_path)
    report = run_pipeline(config, metrics_path, spans_path, installs_path,
                          model, report_path=report_path)
    printable = {k: v for k, v in report.items() if not k.startswith("_")}
    click.echo(json.dumps(printable, sort_keys=True, indent=2))


@main.command("evaluate")
@config_option
@seed_option
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--workdir", type=click.Path(), required=True)
@click.option("--runs-per-kind", type=int, default=10, show_default=True)
def evaluate_cmd(config_path, seed, model_path, workdir, runs_per_kind):
    """Randomized injection runs per anomaly kind, scored at T=1 and T=tau."""
    config = _config(config_path, seed=seed)
    model = load_model(model_path)
    rows = []
    for kind in KINDS:
        res = detection_experiment(model, config, kind, runs_per_kind,
                                   config.seed, Path(workdir) / kind)
        for tau, metrics in ((1, res["metrics_t1"]), (config.tau, res["metrics_t2"])):
            rows.append({"kind": kind, "T": tau, "f1": metrics.f1,
                         "precision": metrics.precision, "recall": metrics.recall,
                         "accuracy": metrics.accuracy,
                         "weighted_f1": metrics.weighted_f1})
    click.echo(format_table(rows))


@main.command()
@config_option
@seed_option
@click.option("--metrics", "metrics_path", type=click.Path(exists=True), required=True,
              help="healthy training telemetry")
@click.option("--train-start", type=int, default=0, show_default=True)
@click.option("--train-end", type=int, required=True)
@click.option("--workdir", type=click.Path(), required=True)
@click.option("--runs-per-kind", type=int, default=3, show_default=True)
def grid(config_path, seed, metrics_path, train_start, train_end, workdir,
         runs_per_kind):
    """Sweep (W, S, T), then pick the best cell per anomaly kind."""
    config = _config(config_path, seed=seed)
    store = load_metrics(metrics_path, config.scrape_interval_s)
    rows = run_grid(store, (train_start, train_end), config, TrainingConfig(),
                    runs_per_kind, config.seed, workdir)
    click.echo(format_table(rows))
    click.echo("")
    best = grid_search(rows)
    best_rows = [{"kind": kind, "W": cell["W"], "S": cell["S"],
                  "f1_t1": cell["f1_t1"], "f1_t2": cell["f1_t2"]}
                 for kind, cell in best.items()]
    click.echo(format_table(best_rows))


@main.command()
@config_option
@seed_option
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--workdir", type=click.Path(), required=True)
@click.option("--trials-per-spacing", type=int, default=3, show_default=True)
@click.option("--adversarial", is_flag=True,
              help="culprit is never the most recent install")
def trials(config_path, seed, model_path, workdir, trials_per_spacing,
           adversarial):
    """Five-install attribution trials at 10/5/2 minute spacings."""
    config = _config(config_path, seed=seed)
    model = load_model(model_path)
    res = attribution_trials(model, config, trials_per_spacing=trials_per_spacing,
                             seed=config.seed, workdir=workdir,
                             adversarial=adversarial)
    click.echo(format_table(res["rows"]))
    click.echo(f"\nsuccesses: {res['successes']}/{res['total']} "
               f"(naive most-recent: {res['naive_successes']}/{res['total']})")


def entrypoint():
    try:
        main(standalone_mode=True)
    except FaultlineError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    entrypoint()
