"""Run configuration: defaults, YAML/JSON config files, and flag overrides."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import FleetingError
from .null_model import DEFAULT_EDGE_C, window_length

OUTPUT_DIR_ENV = "FLEETING_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "fleeting-out"


class ConfigError(FleetingError, ValueError):
    pass


@dataclass
class RunConfig:
    # data
    data: Optional[str] = None
    universe: Optional[list] = None
    output_dir: Optional[str] = None
    # windows: explicit lengths win over ratios
    t_in: Optional[int] = None
    t_out: Optional[int] = None
    q_in: float = 0.25
    q_out: float = 4.0
    # numerics
    vol_floor: float = 1e-4
    return_kind: str = "simple"
    eig_floor: float = 1e-12
    edge_c: float = DEFAULT_EDGE_C
    threshold: Optional[float] = None
    # reporting
    top_fraction: float = 0.10
    bottom_fraction: float = 0.90
    top_k_modes: int = 2
    hist_bins: int = 50
    grid_size: int = 1000
    # factor
    halflife: float = 100.0
    lag: int = 1
    burn_in: float = 5.0
    n_max: int = 30
    # Monte Carlo
    seed: int = 0
    n_rep: int = 20
    null_dates: int = 20
    calib_rep: int = 200
    calib_quantile: float = 0.95
    workers: int = 1
    # simulation
    n_assets: int = 100
    t_total: int = 2000
    scenario: str = "identity"
    condition: float = 100.0
    shift_start: Optional[int] = None
    shift_stop: Optional[int] = None
    shift_boost: float = 25.0
    ohlc: bool = False

    def validate(self) -> "RunConfig":
        positive = ["q_in", "q_out", "vol_floor", "edge_c", "halflife", "burn_in", "grid_size",
                    "hist_bins", "n_rep", "null_dates", "calib_rep", "n_assets", "t_total", "n_max",
                    "workers", "top_k_modes", "shift_boost", "condition"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.eig_floor < 0:
            raise ConfigError("eig_floor must be non-negative")
        if not self.q_in < 1:
            raise ConfigError("q_in must be < 1 (T_in > N)")
        for name in ("top_fraction", "bottom_fraction", "calib_quantile"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.lag < 0:
            raise ConfigError("lag must be non-negative")
        if self.return_kind not in ("simple", "log"):
            raise ConfigError("return_kind must be 'simple' or 'log'")
        if self.scenario not in ("identity", "one-factor", "random"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        return self

    def windows(self, n_assets: int) -> tuple[int, int]:
        """Resolve ``(T_in, T_out)`` for a universe of ``n_assets``; requires ``T_in > N``."""
        t_in = self.t_in if self.t_in is not None else window_length(n_assets, self.q_in)
        t_out = self.t_out if self.t_out is not None else window_length(n_assets, self.q_out)
        if t_in <= n_assets:
            raise ConfigError(f"T_in = {t_in} must exceed N = {n_assets}")
        if t_out < 1:
            raise ConfigError("T_out must be positive")
        return int(t_in), int(t_out)

    def resolved_output_dir(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["output_dir"] = str(self.resolved_output_dir())
        return d


FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}
_CASTS = {
    f.name: type(f.default)
    for f in dataclasses.fields(RunConfig)
    if type(f.default) in (int, float)
}
_CASTS.update(t_in=int, t_out=int, shift_start=int, shift_stop=int, threshold=float)


def load_config_file(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping")
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve_config(file_values: Optional[dict] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Merge with precedence flags > file > defaults, then validate."""
    merged: dict[str, Any] = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key not in FIELD_NAMES:
                raise ConfigError(f"unknown config key {key!r}")
            if key in _CASTS:
                try:
                    value = _CASTS[key](value)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{key}: {exc}") from exc
            merged[key] = value
    try:
        cfg = RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()
