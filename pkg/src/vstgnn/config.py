"""Experiment configuration: one YAML file, validated section by section.

Example (every key optional; shown with defaults)::

    seed: 42
    events: [Michael, Ian, Idalia]
    held_out: Michael
    paths:
      data_root: data          # overridden by $VSTGNN_DATA_ROOT
      output_root: runs
    ingest:
      source: synthetic        # synthetic | directory | blackmarble
      source_root: null        # tree to copy from when source = directory
      product: VNP46A2
      resolution: [128, 128]
      input_steps: 8
      horizon: 1
      fill_value: 65535.0
      counties: null           # GeoJSON with a county_id property per feature
      event_dates: {Michael: [2018-09-10, 2018-11-09], ...}
      synthetic: {node_count: 8, grid_size: 32, ...}
      landfall_days: null      # one per event, defaults to synthetic.landfall_day
    graph: {rule: border, k: 1, geometries: null}
    codec: {depth: 4, base_channels: 32, embedding_size: 256}
    temporal: {size: 64}
    stgnn: {dilations: [1, 2, 1, 2, 1, 2, 1, 2], residual_channels: 32, ...}
    trainer: {batch_size: 16, learning_rate: 0.001, epochs: 100, val_fraction: 0.3, ...}
    eval: {mape_eps: 0.01, raw: false, cmap: RdYlGn}

Unknown keys raise :class:`~vstgnn.errors.ConfigError` naming the full key
path (for example ``trainer.lerning_rate``).
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from vstgnn.codec import CodecConfig
from vstgnn.errors import ConfigError, ValidationError
from vstgnn.ingest.synthetic import SyntheticEventConfig
from vstgnn.model import ModelConfig
from vstgnn.stgnn import StgnnConfig
from vstgnn.trainer import CASE_NAMES, TrainConfig

DATA_ROOT_ENV = "VSTGNN_DATA_ROOT"

# Landfall +/- 30 days for the three Florida hurricanes.
KNOWN_EVENT_DATES = {
    "Michael": (dt.date(2018, 9, 10), dt.date(2018, 11, 9)),
    "Ian": (dt.date(2022, 8, 29), dt.date(2022, 10, 28)),
    "Idalia": (dt.date(2023, 7, 31), dt.date(2023, 9, 29)),
}


@dataclass(frozen=True)
class PathsConfig:
    data_root: Path = Path("data")
    output_root: Path = Path("runs")


@dataclass(frozen=True)
class IngestConfig:
    source: str = "synthetic"
    source_root: Path | None = None
    product: str = "VNP46A2"
    resolution: tuple[int, int] = (128, 128)
    input_steps: int = 8
    horizon: int = 1
    fill_value: float = 65535.0
    counties: Path | None = None
    event_dates: dict[str, tuple[dt.date, dt.date]] = field(
        default_factory=lambda: dict(KNOWN_EVENT_DATES))
    synthetic: SyntheticEventConfig = SyntheticEventConfig()
    landfall_days: tuple[int, ...] | None = None


@dataclass(frozen=True)
class GraphConfig:
    rule: str = "border"
    k: int = 1
    geometries: Path | None = None


@dataclass(frozen=True)
class TemporalConfig:
    size: int = 64


@dataclass(frozen=True)
class TrainerSection:
    train: TrainConfig = TrainConfig()
    val_fraction: float = 0.3


@dataclass(frozen=True)
class EvalConfig:
    mape_eps: float = 0.01
    raw: bool = False
    cmap: str = "RdYlGn"


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 42
    events: tuple[str, ...] = CASE_NAMES
    held_out: str = "Michael"
    paths: PathsConfig = PathsConfig()
    ingest: IngestConfig = IngestConfig()
    graph: GraphConfig = GraphConfig()
    codec: Mapping[str, Any] = field(default_factory=dict)
    temporal: TemporalConfig = TemporalConfig()
    stgnn: Mapping[str, Any] = field(default_factory=dict)
    trainer: TrainerSection = TrainerSection()
    eval: EvalConfig = EvalConfig()

    def sub_seed(self, name: str) -> int:
        return derive_seed(self.seed, name)

    @property
    def data_root(self) -> Path:
        env = os.environ.get(DATA_ROOT_ENV)
        return Path(env) if env else self.paths.data_root

    def case_dir(self, case: str | None = None) -> Path:
        return self.paths.output_root / (case or self.held_out)

    def train_config(self) -> TrainConfig:
        return self.trainer.train

    def model_config(self, num_nodes: int) -> ModelConfig:
        codec = CodecConfig(input_resolution=self.ingest.resolution, **dict(self.codec))
        return ModelConfig.create(num_nodes, codec=codec, stgnn=dict(self.stgnn),
                                  time_embedding_size=self.temporal.size,
                                  horizon=self.ingest.horizon)


def derive_seed(seed: int, name: str) -> int:
    """Named sub-seed fanned out from the single experiment seed."""
    return (int(seed) * 1_000_003 + zlib.crc32(name.encode())) % 2 ** 31


# --------------------------------------------------------------------------- parsing

_TOP_KEYS = {"seed", "events", "held_out", "paths", "ingest", "graph", "codec", "temporal",
             "stgnn", "trainer", "eval"}
_CODEC_KEYS = {"depth", "base_channels", "embedding_size", "channels"}
_STGNN_KEYS = {f.name for f in dataclasses.fields(StgnnConfig)} - {
    "num_nodes", "input_width", "output_width", "horizon"}


def _section(raw: Any, path: str) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, Mapping):
        raise ConfigError(f"config key {path!r} must be a mapping, got {type(raw).__name__}")
    return dict(raw)


def _check_keys(raw: Mapping, allowed: set[str], path: str) -> None:
    for key in raw:
        if key not in allowed:
            full = f"{path}.{key}" if path else str(key)
            raise ConfigError(f"unknown config key {full!r}")


def _date(value: Any, path: str) -> dt.date:
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError as exc:
        raise ConfigError(f"config key {path!r}: {exc}") from exc


def _build(cls, raw: Mapping, path: str, **converters):
    names = {f.name for f in dataclasses.fields(cls)}
    _check_keys(raw, names, path)
    values = {}
    for k, v in raw.items():
        conv = converters.get(k)
        try:
            values[k] = conv(v, f"{path}.{k}") if conv else v
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"config key {path}.{k!s}: {exc}") from exc
    try:
        return cls(**values)
    except (TypeError, ValidationError) as exc:
        raise ConfigError(f"config section {path!r}: {exc}") from exc


def _path(v, _):
    return None if v is None else Path(v)


def _event_dates(v, path):
    out = dict(KNOWN_EVENT_DATES)
    for name, span in _section(v, path).items():
        if not isinstance(span, (list, tuple)) or len(span) != 2:
            raise ConfigError(f"config key {path}.{name} must be [start, end]")
        out[str(name)] = (_date(span[0], f"{path}.{name}"), _date(span[1], f"{path}.{name}"))
    return out


def _synthetic(v, path, seed):
    raw = _section(v, path)
    _check_keys(raw, {f.name for f in dataclasses.fields(SyntheticEventConfig)}, path)
    raw.setdefault("seed", derive_seed(seed, "synth"))
    cfg = SyntheticEventConfig.from_mapping(raw)
    try:
        cfg.validate()
    except ValidationError as exc:
        raise ConfigError(f"config section {path!r}: {exc}") from exc
    return cfg


def parse_config(raw: Mapping | None) -> ExperimentConfig:
    """Validate a nested mapping (as loaded from YAML) into an :class:`ExperimentConfig`."""
    raw = _section(raw, "<root>")
    _check_keys(raw, _TOP_KEYS, "")
    seed = int(raw.get("seed", 42))
    values: dict[str, Any] = {"seed": seed}
    if "events" in raw:
        values["events"] = tuple(str(e) for e in raw["events"])
    if "held_out" in raw:
        values["held_out"] = str(raw["held_out"])
    values["paths"] = _build(PathsConfig, _section(raw.get("paths"), "paths"), "paths",
                             data_root=_path, output_root=_path)
    ingest_raw = _section(raw.get("ingest"), "ingest")
    ingest_raw.setdefault("synthetic", {})
    values["ingest"] = _build(
        IngestConfig, ingest_raw, "ingest",
        source_root=_path, counties=_path, event_dates=_event_dates,
        synthetic=lambda v, p: _synthetic(v, p, seed),
        resolution=lambda v, p: tuple(int(x) for x in v),
        landfall_days=lambda v, p: None if v is None else tuple(int(x) for x in v))
    values["graph"] = _build(GraphConfig, _section(raw.get("graph"), "graph"), "graph",
                             geometries=_path)
    codec = _section(raw.get("codec"), "codec")
    _check_keys(codec, _CODEC_KEYS, "codec")
    values["codec"] = codec
    values["temporal"] = _build(TemporalConfig, _section(raw.get("temporal"), "temporal"),
                                "temporal")
    stgnn = _section(raw.get("stgnn"), "stgnn")
    _check_keys(stgnn, _STGNN_KEYS, "stgnn")
    if "dilations" in stgnn:
        stgnn["dilations"] = tuple(int(d) for d in stgnn["dilations"])
    values["stgnn"] = stgnn
    trainer = _section(raw.get("trainer"), "trainer")
    val_fraction = trainer.pop("val_fraction", 0.3)
    trainer.setdefault("seed", derive_seed(seed, "trainer"))
    values["trainer"] = TrainerSection(_build(TrainConfig, trainer, "trainer"), float(val_fraction))
    values["eval"] = _build(EvalConfig, _section(raw.get("eval"), "eval"), "eval")

    cfg = ExperimentConfig(**values)
    if cfg.held_out not in cfg.events:
        raise ConfigError(f"config key 'held_out': {cfg.held_out!r} is not in events {list(cfg.events)}")
    if cfg.ingest.source not in ("synthetic", "directory", "blackmarble"):
        raise ConfigError(f"config key 'ingest.source': unknown source {cfg.ingest.source!r}")
    if cfg.ingest.landfall_days is not None and len(cfg.ingest.landfall_days) != len(cfg.events):
        raise ConfigError("config key 'ingest.landfall_days' needs one entry per event")
    try:
        cfg.model_config(1)
    except (TypeError, ValidationError) as exc:
        raise ConfigError(f"config sections codec/stgnn/temporal: {exc}") from exc
    return cfg


def load_config(path: Path | None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Read YAML (or defaults when ``path`` is None) and apply dotted-key overrides."""
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file {path} does not exist")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    for dotted, value in (overrides or {}).items():
        set_dotted(raw, dotted, value)
    return parse_config(raw)


def set_dotted(raw: dict, dotted: str, value: Any) -> None:
    """``set_dotted(d, "trainer.epochs", 5)`` creates intermediate sections as needed."""
    parts = dotted.split(".")
    node = raw
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"config key {dotted!r}: {part!r} is not a section")
        node = nxt
    node[parts[-1]] = value
