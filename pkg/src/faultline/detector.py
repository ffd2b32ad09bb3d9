"""Reconstruction-based anomaly detection over windowed features.

One variational autoencoder is trained on healthy feature vectors from all
pods at once (the pod one-hot in the feature vector tells the model which
pod it is looking at). Reconstruction error per window, scored with the
deterministic posterior mean, is compared against a per-pod threshold taken
from the tail of that pod's training-error distribution. A pod alerts only
after tau consecutive anomalous windows.

The network is small enough that hand-rolled numpy training is faster than
pulling in a deep-learning framework, and it keeps scoring bit-reproducible
across machines.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FingerprintMismatch, TrainingError
from .telemetry import FeatureVector, MetricStore, featurize, make_windows, pod_index_for

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD_PERCENTILE = 99.5


@dataclass
class TrainingConfig:
    hidden_dim: int = 64
    latent_dim: int = 8
    beta: float = 0.1
    learning_rate: float = 0.003
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 64
    min_train_windows: int = 50
    threshold_percentile: float = DEFAULT_THRESHOLD_PERCENTILE


@dataclass
class DetectorModel:
    encoder_weights: dict[str, np.ndarray]
    decoder_weights: dict[str, np.ndarray]
    latent_dim: int
    norm_stats: dict[str, tuple[float, float]]
    thresholds: dict[str, float]
    config_fingerprint: tuple[int, int, str]  # (W, S, feature mode)
    pods: tuple[str, ...]
    metrics: tuple[str, ...]

    @property
    def input_dim(self) -> int:
        return self.encoder_weights["w1"].shape[0]

    def check_fingerprint(self, w_s: int, s_s: int, feature_mode: str) -> None:
        got = (w_s, s_s, feature_mode)
        if got != self.config_fingerprint:
            raise FingerprintMismatch(
                f"model was trained with (W, S, mode)={self.config_fingerprint}, "
                f"scoring requested {got}")


@dataclass
class TriggerState:
    """Per-pod consecutive-anomalous-window counters (Alg. 1 state)."""

    tau: int
    window_s: int
    stride_s: int
    counters: dict[str, int] = field(default_factory=dict)
    _runs: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.tau < 1:
            raise DataError("tau must be >= 1")


@dataclass(frozen=True)
class AnomalyAlert:
    pod: str
    fired_at: int  # end of the window whose detection reached tau
    window_trace: tuple[int, ...]


def _init_layer(rng: np.random.Generator, fan_in: int, fan_out: int
                ) -> tuple[np.ndarray, np.ndarray]:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    return w, np.zeros(fan_out)


def _as_matrix(vectors) -> np.ndarray:
    rows = []
    for v in vectors:
        rows.append(v.vector if isinstance(v, FeatureVector) else np.asarray(v, float))
    return np.stack(rows)


def _encode_mean(enc: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    h = np.maximum(x @ enc["w1"] + enc["b1"], 0.0)
    return h @ enc["wm"] + enc["bm"]


def _decode(dec: dict[str, np.ndarray], z: np.ndarray) -> np.ndarray:
    h = np.maximum(z @ dec["w1"] + dec["b1"], 0.0)
    return h @ dec["w2"] + dec["b2"]


def _reconstruct_mean(model: DetectorModel, x: np.ndarray) -> np.ndarray:
    return _decode(model.decoder_weights,
                   _encode_mean(model.encoder_weights, x))


def score_matrix(model: DetectorModel, x: np.ndarray) -> np.ndarray:
    """Per-row mean-squared reconstruction error at the posterior mean."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.input_dim:
        raise DataError(f"feature dimension {x.shape[1]} does not match the "
                        f"model's {model.input_dim}")
    xhat = _reconstruct_mean(model, x)
    return ((x - xhat) ** 2).mean(axis=1)


def score(model: DetectorModel, feature: FeatureVector | np.ndarray) -> float:
    vec = feature.vector if isinstance(feature, FeatureVector) else feature
    return float(score_matrix(model, vec)[0])


def detect(model: DetectorModel, feature: FeatureVector | np.ndarray,
           pod: str) -> bool:
    if pod not in model.thresholds:
        raise DataError(f"pod {pod!r} has no threshold in the model")
    return score(model, feature) > model.thresholds[pod]


def compute_threshold(train_errors_for_pod, percentile: float = DEFAULT_THRESHOLD_PERCENTILE
                      ) -> float:
    """The given percentile of the empirical errors, linearly interpolated."""
    errors = np.asarray(train_errors_for_pod, dtype=np.float64)
    if errors.size == 0:
        raise DataError("cannot compute a threshold from an empty error list")
    if not 0 < percentile <= 100:
        raise DataError("percentile must be in (0, 100]")
    return float(np.percentile(errors, percentile))


def train(features_by_pod: dict[str, list[FeatureVector]] | dict[str, np.ndarray],
          hyper: TrainingConfig, seed: int,
          norm_stats: dict[str, tuple[float, float]] | None = None,
          metrics: tuple[str, ...] = (),
          config_fingerprint: tuple[int, int, str] = (0, 0, "stats"),
          ) -> DetectorModel:
    """Train the shared VAE and derive per-pod thresholds.

    Loss is the batch mean of (sum of squared feature errors + beta * KL of
    the latent posterior from the standard normal). Optimized with SGD plus
    momentum; deterministic for a fixed seed.
    """
    pods = tuple(sorted(features_by_pod))
    if not pods:
        raise TrainingError("no training pods given")
    mats = {}
    dim = None
    for pod in pods:
        m = _as_matrix(features_by_pod[pod])
        if m.shape[0] < hyper.min_train_windows:
            raise TrainingError(f"pod {pod!r} has {m.shape[0]} training windows, "
                                f"need >= {hyper.min_train_windows}")
        if dim is None:
            dim = m.shape[1]
        elif m.shape[1] != dim:
            raise TrainingError(f"pod {pod!r} features have dimension "
                                f"{m.shape[1]}, expected {dim}")
        mats[pod] = m
    x_all = np.concatenate([mats[p] for p in pods])
    n, d = x_all.shape
    k, hdim = hyper.latent_dim, hyper.hidden_dim

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed,))))
    enc_w1, enc_b1 = _init_layer(rng, d, hdim)
    enc_wm, enc_bm = _init_layer(rng, hdim, k)
    enc_wv, enc_bv = _init_layer(rng, hdim, k)
    dec_w1, dec_b1 = _init_layer(rng, k, hdim)
    dec_w2, dec_b2 = _init_layer(rng, hdim, d)
    params = [enc_w1, enc_b1, enc_wm, enc_bm, enc_wv, enc_bv,
              dec_w1, dec_b1, dec_w2, dec_b2]
    velocity = [np.zeros_like(p) for p in params]
    lr, mom, beta = hyper.learning_rate, hyper.momentum, hyper.beta

    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, hyper.batch_size):
            idx = order[lo:lo + hyper.batch_size]
            x = x_all[idx]
            b = len(idx)

            a1 = x @ enc_w1 + enc_b1
            h1 = np.maximum(a1, 0.0)
            mu = h1 @ enc_wm + enc_bm
            lv = np.clip(h1 @ enc_wv + enc_bv, -8.0, 8.0)
            std = np.exp(0.5 * lv)
            eps = rng.standard_normal((b, k))
            z = mu + std * eps
            a2 = z @ dec_w1 + dec_b1
            h2 = np.maximum(a2, 0.0)
            xhat = h2 @ dec_w2 + dec_b2

            recon = ((xhat - x) ** 2).sum() / b
            kl = -0.5 * (1.0 + lv - mu ** 2 - np.exp(lv)).sum() / b
            loss = recon + beta * kl
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            epoch_loss += loss * b

            g_xhat = 2.0 * (xhat - x) / b
            g_dw2 = h2.T @ g_xhat
            g_db2 = g_xhat.sum(axis=0)
            g_h2 = g_xhat @ dec_w2.T
            g_a2 = np.where(a2 > 0, g_h2, 0.0)
            g_dw1 = z.T @ g_a2
            g_db1 = g_a2.sum(axis=0)
            g_z = g_a2 @ dec_w1.T
            g_mu = g_z + beta * mu / b
            g_lv = g_z * eps * std * 0.5 + beta * 0.5 * (np.exp(lv) - 1.0) / b
            g_wm = h1.T @ g_mu
            g_bm = g_mu.sum(axis=0)
            g_wv = h1.T @ g_lv
            g_bv = g_lv.sum(axis=0)
            g_h1 = g_mu @ enc_wm.T + g_lv @ enc_wv.T
            g_a1 = np.where(a1 > 0, g_h1, 0.0)
            g_w1 = x.T @ g_a1
            g_b1 = g_a1.sum(axis=0)

            grads = [g_w1, g_b1, g_wm, g_bm, g_wv, g_bv,
                     g_dw1, g_db1, g_dw2, g_db2]
            for p, v, g in zip(params, velocity, grads):
                v *= mom
                v -= lr * g
                p += v
        logger.debug("epoch %d loss %.6f", epoch, epoch_loss / n)

    model = DetectorModel(
        encoder_weights={"w1": enc_w1, "b1": enc_b1, "wm": enc_wm,
                         "bm": enc_bm, "wv": enc_wv, "bv": enc_bv},
        decoder_weights={"w1": dec_w1, "b1": dec_b1, "w2": dec_w2, "b2": dec_b2},
        latent_dim=k,
        norm_stats=dict(norm_stats or {}),
        thresholds={},
        config_fingerprint=config_fingerprint,
        pods=pods,
        metrics=tuple(metrics),
    )
    all_errors = []
    for pod in pods:
        errors = score_matrix(model, mats[pod])
        model.thresholds[pod] = compute_threshold(errors, hyper.threshold_percentile)
        all_errors.append(errors)
    mean_error = float(np.concatenate(all_errors).mean())
    floor = min(model.thresholds.values())
    if mean_error >= floor:
        logger.warning("mean training error %.6g is not below the smallest "
                       "pod threshold %.6g; thresholds may be uncalibrated",
                       mean_error, floor)
    return model


def update_trigger(state: TriggerState, pod: str, anomalous: bool,
                   window_start: int) -> AnomalyAlert | None:
    """Advance the consecutive-window counter; alert when it reaches tau.

    The counter re-arms (resets to zero) after emitting, so a persisting
    anomaly re-alerts every tau windows. A gap in the window stream breaks
    the run the same way a healthy window does.
    """
    run = state._runs.setdefault(pod, [])
    if not anomalous:
        state.counters[pod] = 0
        run.clear()
        return None
    if run and window_start != run[-1] + state.stride_s:
        run.clear()
        state.counters[pod] = 0
    run.append(window_start)
    state.counters[pod] = state.counters.get(pod, 0) + 1
    if state.counters[pod] < state.tau:
        return None
    trace = tuple(run[-state.tau:])
    state.counters[pod] = 0
    run.clear()
    return AnomalyAlert(pod=pod, fired_at=window_start + state.window_s,
                        window_trace=trace)


def flag_windows(model: DetectorModel, store: MetricStore, t0: int, t1: int,
                 ) -> dict[str, list[tuple[int, float, bool]]]:
    """Score every complete window of every pod in [t0, t1).

    Returns, per pod, time-ordered (window start, score, anomalous) triples
    using the model's own (W, S, feature mode) fingerprint.
    """
    w_s, s_s, mode = model.config_fingerprint
    pod_index = pod_index_for(model.pods)
    out: dict[str, list[tuple[int, float, bool]]] = {}
    for pod in store.pods():
        if pod not in model.thresholds:
            raise DataError(f"pod {pod!r} was not in the training set")
        windows = make_windows(store, pod, w_s, s_s, t0, t1)
        feats = [featurize(w, model.norm_stats, pod_index, mode=mode)
                 for w in windows]
        if feats:
            scores = score_matrix(model, _as_matrix(feats))
        else:
            scores = np.empty(0)
        threshold = model.thresholds[pod]
        out[pod] = [(w.start, float(s), bool(s > threshold))
                    for w, s in zip(windows, scores)]
    return out


def save_model(model: DetectorModel, path) -> None:
    """One self-describing artifact; load + score must match bit for bit."""
    arrays = {}
    for prefix, weights in (("enc", model.encoder_weights),
                            ("dec", model.decoder_weights)):
        for key, arr in weights.items():
            arrays[f"{prefix}_{key}"] = arr
    metric_names = tuple(model.norm_stats)
    arrays["norm_metric_names"] = np.asarray(metric_names, dtype=np.str_)
    arrays["norm_values"] = np.asarray(
        [model.norm_stats[m] for m in metric_names], dtype=np.float64
    ).reshape(len(metric_names), 2)
    arrays["pods"] = np.asarray(model.pods, dtype=np.str_)
    arrays["metrics"] = np.asarray(model.metrics, dtype=np.str_)
    arrays["thresholds"] = np.asarray([model.thresholds[p] for p in model.pods])
    arrays["latent_dim"] = np.asarray(model.latent_dim)
    arrays["fingerprint_ws"] = np.asarray(model.config_fingerprint[:2])
    arrays["fingerprint_mode"] = np.asarray(model.config_fingerprint[2], dtype=np.str_)
    np.savez(path, **arrays)


def load_model(path) -> DetectorModel:
    with np.load(path, allow_pickle=False) as data:
        enc = {key[4:]: data[key] for key in data.files if key.startswith("enc_")}
        dec = {key[4:]: data[key] for key in data.files if key.startswith("dec_")}
        norm_names = [str(s) for s in data["norm_metric_names"]]
        norm_values = data["norm_values"]
        pods = tuple(str(s) for s in data["pods"])
        thresholds = {p: float(t) for p, t in zip(pods, data["thresholds"])}
        return DetectorModel(
            encoder_weights=enc,
            decoder_weights=dec,
            latent_dim=int(data["latent_dim"]),
            norm_stats={m: (float(v[0]), float(v[1]))
                        for m, v in zip(norm_names, norm_values)},
            thresholds=thresholds,
            config_fingerprint=(int(data["fingerprint_ws"][0]),
                                int(data["fingerprint_ws"][1]),
                                str(data["fingerprint_mode"])),
            pods=pods,
            metrics=tuple(str(s) for s in data["metrics"]),
        )
