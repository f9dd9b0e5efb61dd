from __future__ import annotations

import hashlib
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from src.errors import ConfigError

HeadMode = Literal["gaussian", "point"]
RefreshSchedule = Literal["per-epoch", "per-step", "once"]

ENV_PREFIX = "GLUE_"
# GLUE_* variables that are not config keys
ENV_RESERVED = {"GLUE_LOG_LEVEL"}
ALL_MODELS = ("pca", "knn", "ae", "var", "gdn", "glue")

SECTIONS = {
    "DATA": "data",
    "MODEL": "model",
    "TRAIN": "train",
    "SCORING": "scoring",
    "BASELINE": "baseline",
    "RUN": "run",
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Section):
    manifest: Optional[Path] = None
    dataset_dir: Optional[Path] = None


class ModelSection(_Section):
    d: int = Field(64, ge=1)
    # None picks the per-dataset default (15 for wadi, 5 otherwise)
    k: Optional[int] = Field(None, ge=1)
    head_mode: HeadMode = "gaussian"
    refresh: RefreshSchedule = "per-epoch"
    leaky_slope: float = Field(0.2, ge=0.0)
    sigma_floor: float = Field(1e-6, gt=0.0)
    hidden_layers: int = Field(1, ge=0)
    per_node_attention: bool = False


class TrainSection(_Section):
    epochs: int = Field(25, ge=1)
    lr: float = Field(1e-3, gt=0.0)
    beta1: float = Field(0.9, gt=0.0, lt=1.0)
    beta2: float = Field(0.99, gt=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    batch_size: int = Field(128, ge=1)
    shuffle: bool = True
    clip_norm: Optional[float] = Field(5.0, gt=0.0)


class ScoringSection(_Section):
    anomaly_rate: Optional[float] = Field(None, gt=0.0, lt=1.0)
    iqr_floor: float = Field(1e-6, gt=0.0)


class BaselineSection(_Section):
    models: List[str] = Field(default_factory=lambda: list(ALL_MODELS))
    pca_components: Optional[int] = Field(None, ge=1)
    pca_variance: float = Field(0.95, gt=0.0, le=1.0)
    knn_k: int = Field(5, ge=1)
    ae_bottleneck: Optional[int] = Field(None, ge=1)
    ae_epochs: int = Field(25, ge=1)
    ae_lr: float = Field(1e-3, gt=0.0)
    ae_batch_size: int = Field(128, ge=1)
    var_order: Optional[int] = Field(None, ge=1)

    @field_validator("models", mode="before")
    @classmethod
    def _split_models(cls, value: Any) -> Any:
        if isinstance(value, str):
            value = [v.strip().lower() for v in value.split(",") if v.strip()]
        unknown = [v for v in value if v not in ALL_MODELS]
        if unknown:
            raise ValueError(f"unknown model(s) {unknown}; choose from {list(ALL_MODELS)}")
        if not value:
            raise ValueError("select at least one model")
        return value


class RunSection(_Section):
    out_dir: Path = Path("runs")
    seed: int = 0
    threads: int = Field(1, ge=1)


class RunConfig(_Section):
    data: DataSection = Field(default_factory=DataSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    scoring: ScoringSection = Field(default_factory=ScoringSection)
    baseline: BaselineSection = Field(default_factory=BaselineSection)
    run: RunSection = Field(default_factory=RunSection)

    def config_hash(self) -> str:
        """sha256 of every setting that shapes results; the output directory is left out."""
        payload = self.model_dump_json(exclude={"run": {"out_dir"}})
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_flat(self) -> Dict[str, str]:
        flat: Dict[str, str] = {}
        for prefix, section in SECTIONS.items():
            for name, value in getattr(self, section).model_dump().items():
                if value is None:
                    text = "none"
                elif isinstance(value, list):
                    text = ",".join(str(v) for v in value)
                elif isinstance(value, bool):
                    text = "true" if value else "false"
                else:
                    text = str(value)
                flat[f"{prefix}_{name.upper()}"] = text
        return flat


def read_key_values(path: Path) -> Dict[str, Optional[str]]:
    """Read a flat KEY=value file (dotenv syntax, `#` comments allowed)."""
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return dict(dotenv_values(path))


def _clean(value: Any) -> Any:
    if isinstance(value, str) and value.strip().lower() in ("", "none", "null"):
        return None
    return value


def _nest(flat: Mapping[str, Any]) -> Dict[str, Dict[str, Any]]:
    nested: Dict[str, Dict[str, Any]] = {}
    for key, value in flat.items():
        prefix, _, name = key.partition("_")
        section = SECTIONS.get(prefix.upper())
        if section is None or not name:
            raise ConfigError("unknown config section", key=key)
        nested.setdefault(section, {})[name.lower()] = _clean(value)
    return nested


def load_run_config(
    path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Build a RunConfig from file, GLUE_* environment variables and explicit overrides.

    Overrides use dotted keys (``"run.seed"``) and win over the environment, which
    wins over the file.
    """
    flat: Dict[str, Any] = {}
    if path is not None:
        flat.update(read_key_values(Path(path)))
    env = os.environ if environ is None else environ
    for key, value in env.items():
        if key.startswith(ENV_PREFIX) and key not in ENV_RESERVED:
            flat[key[len(ENV_PREFIX):]] = value
    nested = _nest(flat)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, name = dotted.partition(".")
        nested.setdefault(section, {})[name] = value

    try:
        config = RunConfig.model_validate(nested)
    except ValidationError as e:
        first = e.errors()[0]
        key = "_".join(str(p) for p in first["loc"]).upper()
        raise ConfigError(first["msg"], key=key) from e

    # manifest paths in a config file are relative to that file
    base = Path(path).parent if path is not None else Path.cwd()
    for name in ("manifest", "dataset_dir"):
        value = getattr(config.data, name)
        if value is not None and not value.is_absolute():
            setattr(config.data, name, (base / value).resolve())
    return config


def write_run_config(config: RunConfig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={v}" for k, v in config.to_flat().items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
