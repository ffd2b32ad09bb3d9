"""Pipeline configuration: defaults, key=value config files, validation."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .telemetry import DEFAULT_SCRAPE_INTERVAL_S, FEATURE_MODES


@dataclass
class PipelineConfig:
    w_s: int = 600
    s_s: int = 300
    tau: int = 2
    alpha: float = 0.01
    scrape_interval_s: int = DEFAULT_SCRAPE_INTERVAL_S
    pre_len_s: int = 0          # 0 means the 10*W default
    lookback_s: int = 0         # 0 means the max(6*W, 1 h) default
    graph_lookback_s: int = 1800
    n_draws: int = 1000
    max_controls: int = 5
    feature_mode: str = "stats"
    seed: int = 0

    def __post_init__(self):
        if self.w_s <= 0 or self.w_s % self.scrape_interval_s != 0:
            raise ConfigError("W must be a positive multiple of the scrape interval")
        if self.s_s <= 0 or self.s_s % self.scrape_interval_s != 0:
            raise ConfigError("S must be a positive multiple of the scrape interval")
        if self.tau < 1:
            raise ConfigError("tau must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must be in (0, 1)")
        if self.feature_mode not in FEATURE_MODES:
            raise ConfigError(f"feature_mode must be one of {FEATURE_MODES}")
        if self.pre_len_s == 0:
            self.pre_len_s = 10 * self.w_s
        if self.lookback_s == 0:
            self.lookback_s = max(6 * self.w_s, 3600)

    @property
    def fingerprint(self) -> tuple[int, int, str]:
        return (self.w_s, self.s_s, self.feature_mode)


_INT_KEYS = {"w_s", "s_s", "tau", "scrape_interval_s", "pre_len_s",
             "lookback_s", "graph_lookback_s", "n_draws", "max_controls", "seed"}
_FLOAT_KEYS = {"alpha"}
_STR_KEYS = {"feature_mode"}


def parse_config(text: str) -> dict:
    """Parse key=value lines; '#' starts a comment, blank lines are skipped."""
    known = {f.name for f in fields(PipelineConfig)}
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        try:
            if key in _INT_KEYS:
                out[key] = int(value)
            elif key in _FLOAT_KEYS:
                out[key] = float(value)
            else:
                out[key] = value
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key!r}")
    return out


def load_config(path: str | Path | None, **overrides) -> PipelineConfig:
    """Config file values, with keyword overrides (CLI flags) on top."""
    values: dict = {}
    if path is not None:
        values.update(parse_config(Path(path).read_text()))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**values)
