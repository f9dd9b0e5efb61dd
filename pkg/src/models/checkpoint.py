"""Versioned single-file checkpoints.

Layout: ``GLUECKPT`` magic, little-endian u32 format version, u64 header
length, a canonical JSON header, then every array's raw little-endian bytes
in the order the header lists them. Saving the same model twice produces the
same bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from src.data.dataset import NormStats
from src.errors import CheckpointError, SensorMismatchError
from src.models.glue import GlueHyper, GlueParams
from src.models.graph import SensorGraph, similarity_matrix

MAGIC = b"GLUECKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    params: GlueParams
    graph: SensorGraph
    sensor_names: List[str]
    seed: int = 0
    norm_stats: Optional[NormStats] = None
    train_config: Dict[str, Any] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def head_mode(self) -> str:
        return self.params.head_mode


def _le(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))


def save_checkpoint(ckpt: Checkpoint, path: Path) -> Path:
    arrays: Dict[str, np.ndarray] = {f"param.{k}": np.asarray(v, dtype=np.float64) for k, v in ckpt.params.arrays.items()}
    arrays["graph.adjacency"] = np.asarray(ckpt.graph.adjacency, dtype=np.int8)
    if ckpt.norm_stats is not None:
        arrays["norm.mean"] = ckpt.norm_stats.mean
        arrays["norm.std"] = ckpt.norm_stats.std

    table = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        data = _le(arr).tobytes()
        table.append({"name": name, "dtype": _le(arr).dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)

    header = {
        "hyper": ckpt.params.hyper.to_dict(),
        "seed": ckpt.seed,
        "sensor_names": list(ckpt.sensor_names),
        "k": ckpt.graph.k,
        "candidates": [[int(j) for j in c] for c in ckpt.graph.candidates],
        "norm_convention": None if ckpt.norm_stats is None else ckpt.norm_stats.convention,
        "train_config": ckpt.train_config,
        "meta": ckpt.meta,
        "arrays": table,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for data in blobs:
            f.write(data)
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(raw[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from e

    body = memoryview(raw)[start + header_len:]
    arrays: Dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(body):
            raise CheckpointError(f"{path}: truncated array '{entry['name']}'")
        arr = np.frombuffer(body[lo:hi], dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)

    hyper = GlueHyper(**header["hyper"])
    params = GlueParams(hyper, {k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")})
    V = params.V
    graph = SensorGraph(
        embeddings=V.copy(),
        adjacency=arrays["graph.adjacency"],
        k=int(header["k"]),
        candidates=tuple(np.asarray(c, dtype=np.int64) for c in header["candidates"]),
        similarity=similarity_matrix(V),
    )
    norm_stats = None
    if "norm.mean" in arrays:
        norm_stats = NormStats(arrays["norm.mean"], arrays["norm.std"], header.get("norm_convention") or "population")
    return Checkpoint(
        params=params,
        graph=graph,
        sensor_names=list(header["sensor_names"]),
        seed=int(header["seed"]),
        norm_stats=norm_stats,
        train_config=header.get("train_config", {}),
        meta=header.get("meta", {}),
    )


def check_sensors(expected: Sequence[str], actual: Sequence[str]) -> None:
    """Raise SensorMismatchError unless both lists name the same sensors in the same order."""
    if list(expected) == list(actual):
        return
    missing = [s for s in expected if s not in set(actual)]
    extra = [s for s in actual if s not in set(expected)]
    if not missing and not extra:
        # same names, different order
        missing = list(expected)
        extra = list(actual)
    raise SensorMismatchError(missing, extra)
