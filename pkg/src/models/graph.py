from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.errors import GraphError

Candidates = List[np.ndarray]


def cosine_similarity(v_i: np.ndarray, v_j: np.ndarray) -> float:
    n_i = float(np.linalg.norm(v_i))
    n_j = float(np.linalg.norm(v_j))
    if n_i == 0.0 or n_j == 0.0:
        raise GraphError("cosine similarity is undefined for a zero-norm embedding")
    return float(np.clip(np.dot(v_i, v_j) / (n_i * n_j), -1.0, 1.0))


def similarity_matrix(V: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities; entry [j, i] is e_ji."""
    n = V.shape[0]
    norms = np.linalg.norm(V, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise GraphError(f"zero-norm embedding for sensor index {int(zero[0])}")
    sims = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            sims[i, j] = sims[j, i] = cosine_similarity(V[i], V[j])
    return sims


def default_candidates(n: int) -> Candidates:
    return [np.array([j for j in range(n) if j != i], dtype=np.int64) for i in range(n)]


def candidate_indices(mapping: Optional[Dict[str, List[str]]], names: Sequence[str]) -> Candidates:
    """Turn a sensor -> allowed-neighbour-names mapping into index arrays; unlisted sensors keep every candidate."""
    n = len(names)
    full = default_candidates(n)
    if not mapping:
        return full
    index = {name: i for i, name in enumerate(names)}
    out: Candidates = []
    for i, name in enumerate(names):
        if name not in mapping:
            out.append(full[i])
            continue
        allowed = sorted({index[c] for c in mapping[name] if c in index and index[c] != i})
        out.append(np.array(allowed, dtype=np.int64))
    return out


def read_candidates(path: Path, names: Sequence[str]) -> Dict[str, List[str]]:
    """Read a `sensor,candidate` CSV; rows naming dropped or unknown sensors are ignored."""
    if not Path(path).exists():
        raise FileNotFoundError(f"candidates file not found: {path}")
    frame = pd.read_csv(path, dtype=str)
    missing = {"sensor", "candidate"} - set(frame.columns)
    if missing:
        raise GraphError(f"{path}: candidates file needs columns 'sensor' and 'candidate'")
    known = set(names)
    mapping: Dict[str, List[str]] = {}
    for sensor, cand in zip(frame["sensor"].str.strip(), frame["candidate"].str.strip()):
        if sensor in known and cand in known:
            mapping.setdefault(sensor, []).append(cand)
    return {k: sorted(set(v)) for k, v in mapping.items()}


def build_adjacency(V: np.ndarray, k: int, candidates: Optional[Candidates] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Top-k inbound neighbours per sensor by cosine similarity.

    Returns (A, sims) with A[j, i] = 1 iff j is kept for i. Ties go to the
    lower sensor index.
    """
    if k < 1:
        raise GraphError(f"k must be >= 1, got {k}")
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[1] < 1:
        raise GraphError(f"embeddings must be (N, d) with d >= 1, got {V.shape}")
    n = V.shape[0]
    candidates = default_candidates(n) if candidates is None else candidates
    if len(candidates) != n:
        raise GraphError(f"expected candidate sets for {n} sensors, got {len(candidates)}")

    sims = similarity_matrix(V)
    A = np.zeros((n, n), dtype=np.int8)
    for i in range(n):
        cand = np.asarray(candidates[i], dtype=np.int64)
        if cand.size == 0:
            if n == 1:
                continue
            raise GraphError(f"sensor index {i} has an empty candidate set")
        if np.any(cand == i) or np.any((cand < 0) | (cand >= n)):
            raise GraphError(f"invalid candidate indices for sensor {i}")
        # primary key: similarity descending; secondary: index ascending
        order = np.lexsort((cand, -sims[cand, i]))
        A[cand[order[:k]], i] = 1
    return A, sims


def neighbors(A: np.ndarray, i: int) -> List[int]:
    return [int(j) for j in np.flatnonzero(A[:, i])]


@dataclass(frozen=True)
class SensorGraph:
    embeddings: np.ndarray
    adjacency: np.ndarray
    k: int
    candidates: Tuple[np.ndarray, ...]
    similarity: np.ndarray

    @property
    def n_sensors(self) -> int:
        return int(self.adjacency.shape[0])

    def neighbors(self, i: int) -> List[int]:
        return neighbors(self.adjacency, i)

    def attention_mask(self) -> np.ndarray:
        """Boolean (N, N) with row i marking N(i) plus i itself."""
        return (self.adjacency.T == 1) | np.eye(self.n_sensors, dtype=bool)

    def edges(self) -> List[Tuple[int, int, float]]:
        src, dst = np.nonzero(self.adjacency)
        order = np.lexsort((src, dst))
        return [(int(src[o]), int(dst[o]), float(self.similarity[src[o], dst[o]])) for o in order]


def build_graph(V: np.ndarray, k: int, candidates: Optional[Candidates] = None) -> SensorGraph:
    candidates = default_candidates(len(V)) if candidates is None else candidates
    A, sims = build_adjacency(V, k, candidates)
    return SensorGraph(
        embeddings=np.array(V, dtype=np.float64),
        adjacency=A,
        k=k,
        candidates=tuple(np.asarray(c, dtype=np.int64) for c in candidates),
        similarity=sims,
    )

def sensor_group(name: str) -> str:
    """Group label used to colour exported embeddings: the name prefix before the first '_'."""
    head, sep, _ = name.partition("_")
    return head if sep else "all"


def export_embeddings(graph: SensorGraph, names: Sequence[str], out_dir: Path) -> Tuple[Path, Path]:
    """Write embeddings.csv (raw coordinates) and embeddings_pca2d.csv."""
    from src.models.baselines import pca_fit, pca_transform

    out_dir.mkdir(parents=True, exist_ok=True)
    V = graph.embeddings
    d = V.shape[1]
    raw = pd.DataFrame(V, columns=[f"dim_{c}" for c in range(d)])
    raw.insert(0, "sensor_name", list(names))
    raw_path = out_dir / "embeddings.csv"
    raw.to_csv(raw_path, index=False, float_format="%.17g")

    n_comp = min(2, d, len(names))
    coords = np.zeros((len(names), 2))
    if len(names) > 1:
        model = pca_fit(V, n_components=n_comp)
        coords[:, :n_comp] = pca_transform(model, V)
    proj = pd.DataFrame({
        "sensor_name": list(names),
        "group": [sensor_group(n) for n in names],
        "pc1": coords[:, 0],
        "pc2": coords[:, 1],
    })
    proj_path = out_dir / "embeddings_pca2d.csv"
    proj.to_csv(proj_path, index=False, float_format="%.17g")
    return raw_path, proj_path


def export_graph(graph: SensorGraph, names: Sequence[str], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [(names[s], names[t], score) for s, t, score in graph.edges()]
    pd.DataFrame(rows, columns=["src", "dst", "score"]).to_csv(path, index=False, float_format="%.17g")
    return path
