from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.errors import ConfigError, CsvParseError
from src.utils.config import read_key_values

DatasetKind = Literal["wadi", "nasa", "generic"]

# cells holding one of these tokens count as missing, like blanks
MISSING_TOKENS = {"", "nan", "na", "null"}
DEFAULT_TIME_COLUMN = "timestamp"
DEFAULT_LABEL_COLUMN = "label"


@dataclass
class CsvSchema:
    time_column: Optional[str] = None
    label_column: Optional[str] = None
    trajectory_column: Optional[str] = None
    # None means every column that is not time/label/trajectory
    sensor_columns: Optional[List[str]] = None


@dataclass
class RawTable:
    """Sensor readings as read from disk; NaN marks a missing cell."""

    frame: pd.DataFrame
    time: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    trajectory: Optional[np.ndarray] = None
    source: Optional[Path] = None

    @property
    def sensor_names(self) -> List[str]:
        return [str(c) for c in self.frame.columns]

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    @property
    def n_missing(self) -> int:
        return int(self.frame.isna().to_numpy().sum())

    def replace_frame(self, frame: pd.DataFrame, **changes) -> "RawTable":
        values = dict(time=self.time, labels=self.labels, trajectory=self.trajectory, source=self.source)
        values.update(changes)
        return RawTable(frame=frame, **values)


def _optional_concat(parts: List[Optional[np.ndarray]]) -> Optional[np.ndarray]:
    if any(p is None for p in parts):
        return None
    return np.concatenate(parts)


def concat_tables(tables: List[RawTable]) -> RawTable:
    frame = pd.concat([t.frame for t in tables], ignore_index=True)
    return RawTable(
        frame=frame,
        time=_optional_concat([t.time for t in tables]),
        labels=_optional_concat([t.labels for t in tables]),
        trajectory=_optional_concat([t.trajectory for t in tables]),
    )


def load_csv(path: Path, schema: Optional[CsvSchema] = None) -> RawTable:
    """Read a comma-separated sensor file with a header row.

    Args:
        path: CSV file.
        schema: which columns hold time, labels, trajectory ids and sensors.
    Returns:
        RawTable with column order preserved and missing cells as NaN.
    Raises:
        CsvParseError: unreadable file, undeclared columns, or a non-numeric
            sensor cell (with its 1-based file line number).
    """
    schema = schema or CsvSchema()
    path = Path(path)
    if not path.exists():
        raise CsvParseError(path, "file not found")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise CsvParseError(path, f"unreadable CSV ({e})") from e
    raw.columns = [str(c).strip() for c in raw.columns]

    declared = [c for c in (schema.time_column, schema.label_column, schema.trajectory_column) if c]
    declared += list(schema.sensor_columns or [])
    missing = [c for c in declared if c not in raw.columns]
    if missing:
        raise CsvParseError(path, f"missing declared column(s): {missing}")

    special = {schema.time_column, schema.label_column, schema.trajectory_column} - {None}
    sensors = schema.sensor_columns or [c for c in raw.columns if c not in special]

    columns = {}
    for name in sensors:
        text = raw[name].str.strip()
        blank = text.str.lower().isin(MISSING_TOKENS)
        numbers = pd.to_numeric(text.where(~blank), errors="coerce")
        bad = numbers.isna() & ~blank
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            # +2: header line plus 1-based numbering
            raise CsvParseError(path, f"non-numeric value '{raw[name].iloc[row]}'", row=row + 2, column=name)
        columns[name] = numbers.astype(np.float64)
    frame = pd.DataFrame(columns, columns=sensors, dtype=np.float64)

    labels = None
    if schema.label_column:
        label_num = pd.to_numeric(raw[schema.label_column].str.strip(), errors="coerce")
        if label_num.isna().any():
            row = int(np.flatnonzero(label_num.isna().to_numpy())[0])
            raise CsvParseError(path, "label must be numeric", row=row + 2, column=schema.label_column)
        # any non-zero label (every failure mode) is an anomaly
        labels = (label_num.to_numpy() != 0).astype(np.int8)

    time = raw[schema.time_column].to_numpy() if schema.time_column else None
    trajectory = raw[schema.trajectory_column].to_numpy() if schema.trajectory_column else None
    return RawTable(frame=frame, time=time, labels=labels, trajectory=trajectory, source=path)


class DatasetManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train_path: Path
    test_path: Path
    kind: DatasetKind = "generic"
    window: int = Field(5, ge=1)
    anomaly_rate: Optional[float] = Field(None, gt=0.0, lt=1.0)
    time_column: Optional[str] = None
    label_column: Optional[str] = None
    trajectory_column: Optional[str] = None
    candidates_path: Optional[Path] = None
    downsample_seconds: int = Field(10, ge=1)
    name: Optional[str] = None

    def schema_for(self, path: Path) -> CsvSchema:
        """Resolve the column roles, picking up conventional names when not declared."""
        header = pd.read_csv(path, nrows=0).columns if path.exists() else []
        header = [str(c).strip() for c in header]
        time_column = self.time_column or (DEFAULT_TIME_COLUMN if DEFAULT_TIME_COLUMN in header else None)
        label_column = self.label_column or (DEFAULT_LABEL_COLUMN if DEFAULT_LABEL_COLUMN in header else None)
        return CsvSchema(time_column=time_column, label_column=label_column, trajectory_column=self.trajectory_column)

    @property
    def dataset_name(self) -> str:
        return self.name or self.train_path.stem


def load_manifest(path: Path) -> DatasetManifest:
    path = Path(path)
    values = {k.lower(): (None if v is None or v.strip() == "" else v) for k, v in read_key_values(path).items()}
    try:
        manifest = DatasetManifest.model_validate(values)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(first["msg"], key=".".join(str(p) for p in first["loc"]).upper()) from e
    base = path.parent
    for name in ("train_path", "test_path", "candidates_path"):
        value = getattr(manifest, name)
        if value is not None and not value.is_absolute():
            setattr(manifest, name, (base / value).resolve())
    return manifest


def manifest_fingerprint(path: Path) -> str:
    """sha256 over the manifest file and every data file it names."""
    path = Path(path)
    manifest = load_manifest(path)
    digest = hashlib.sha256(path.read_bytes())
    for source in (manifest.train_path, manifest.test_path, manifest.candidates_path):
        if source is not None and source.exists():
            digest.update(source.read_bytes())
    return digest.hexdigest()
