from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from src.errors import GraphError
from src.models.baselines import pca_fit, pca_transform
from src.models.graph import (
    build_adjacency,
    build_graph,
    candidate_indices,
    cosine_similarity,
    export_embeddings,
    export_graph,
    neighbors,
    read_candidates,
    sensor_group,
)


def _oracle(V, k, candidates=None):
    n = len(V)
    A = np.zeros((n, n), dtype=np.int8)
    for i in range(n):
        cand = [j for j in range(n) if j != i] if candidates is None else list(candidates[i])
        sims = {j: float(np.dot(V[j], V[i]) / (np.linalg.norm(V[j]) * np.linalg.norm(V[i]))) for j in cand}
        for j in sorted(cand, key=lambda j: (-sims[j], j))[:k]:
            A[j, i] = 1
    return A


def test_cosine_examples():
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 1.0
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([-2.0, 0.0])) == -1.0


def test_cosine_zero_norm_rejected():
    with pytest.raises(GraphError):
        cosine_similarity(np.zeros(2), np.ones(2))


def test_nearest_neighbour_example():
    V = np.array([[1.0, 0.0], [1.0, 0.01], [0.0, 1.0]])
    A, _ = build_adjacency(V, k=1)
    assert neighbors(A, 0) == [1]
    assert neighbors(A, 1) == [0]
    assert neighbors(A, 2) == [1]


def test_large_k_gives_complete_graph(rng):
    V = rng.normal(size=(5, 3))
    A, _ = build_adjacency(V, k=10)
    np.testing.assert_array_equal(A, 1 - np.eye(5, dtype=np.int8))


def test_ties_go_to_lower_index():
    V = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    A, _ = build_adjacency(V, k=1)
    assert neighbors(A, 0) == [1]


def test_matches_brute_force(rng):
    for _ in range(200):
        n = int(rng.integers(2, 21))
        d = int(rng.integers(1, 6))
        k = int(rng.integers(1, n + 1))
        V = rng.normal(size=(n, d))
        A, _ = build_adjacency(V, k)
        np.testing.assert_array_equal(A, _oracle(V, k))
        assert np.all(np.diag(A) == 0)
        np.testing.assert_array_equal(A.sum(axis=0), np.full(n, min(k, n - 1)))


def test_restricted_candidates(rng):
    V = rng.normal(size=(6, 3))
    cands = [np.array([1, 2]), np.array([0]), np.array([0, 1, 3, 4]), np.array([5]), np.array([0, 1, 2, 3]), np.array([4])]
    A, _ = build_adjacency(V, 3, cands)
    np.testing.assert_array_equal(A, _oracle(V, 3, cands))
    for i, c in enumerate(cands):
        assert set(neighbors(A, i)) <= set(c.tolist())
        assert len(neighbors(A, i)) == min(3, len(c))


def test_scale_invariance(rng):
    V = rng.normal(size=(8, 4))
    A, _ = build_adjacency(V, 3)
    A2, _ = build_adjacency(2.0 * V, 3)
    A3, _ = build_adjacency(3.7 * V, 3)
    np.testing.assert_array_equal(A, A2)
    np.testing.assert_array_equal(A, A3)
    again, _ = build_adjacency(V, 3)
    np.testing.assert_array_equal(A, again)


def test_empty_candidates_rejected(rng):
    with pytest.raises(GraphError):
        build_adjacency(rng.normal(size=(3, 2)), 1, [np.array([1]), np.array([], dtype=np.int64), np.array([0])])


def test_single_sensor_has_no_neighbours():
    A, _ = build_adjacency(np.ones((1, 3)), 5)
    assert neighbors(A, 0) == []


def test_zero_norm_embedding_rejected():
    with pytest.raises(GraphError):
        build_adjacency(np.array([[0.0, 0.0], [1.0, 0.0]]), 1)


def test_attention_mask_includes_self():
    graph = build_graph(np.array([[1.0, 0.0], [1.0, 0.01], [0.0, 1.0]]), 1)
    expected = np.array([[1, 1, 0], [1, 1, 0], [0, 1, 1]], dtype=bool)
    np.testing.assert_array_equal(graph.attention_mask(), expected)
    assert [(s, t) for s, t, _ in graph.edges()] == [(1, 0), (0, 1), (1, 2)]


def test_candidate_mapping_and_file(tmp_path):
    names = ["a", "b", "c"]
    path = tmp_path / "cands.csv"
    path.write_text("sensor,candidate\na,b\na,ghost\nc,a\nc,c\n", encoding="utf-8")
    mapping = read_candidates(path, names)
    assert mapping == {"a": ["b"], "c": ["a", "c"]}
    idx = candidate_indices(mapping, names)
    assert [c.tolist() for c in idx] == [[1], [0, 2], [0]]


def test_missing_candidates_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_candidates(tmp_path / "none.csv", ["a"])


def test_sensor_group():
    assert sensor_group("1_AIT_001") == "1"
    assert sensor_group("s0") == "all"


def test_exports(tmp_path, rng):
    names = ["p1_a", "p1_b", "p2_a", "p2_b"]
    graph = build_graph(rng.normal(size=(4, 3)), 2)
    raw_path, proj_path = export_embeddings(graph, names, tmp_path)
    raw = pd.read_csv(raw_path)
    proj = pd.read_csv(proj_path)
    assert list(raw.columns) == ["sensor_name", "dim_0", "dim_1", "dim_2"]
    np.testing.assert_allclose(raw[["dim_0", "dim_1", "dim_2"]].to_numpy(), graph.embeddings, rtol=0, atol=0)
    assert list(proj["group"]) == ["p1", "p1", "p2", "p2"]
    expected = pca_transform(pca_fit(graph.embeddings, n_components=2), graph.embeddings)
    np.testing.assert_allclose(proj[["pc1", "pc2"]].to_numpy(), expected, atol=1e-12)

    edges = pd.read_csv(export_graph(graph, names, tmp_path / "graph.csv"))
    assert len(edges) == 4 * 2
    assert list(edges.columns) == ["src", "dst", "score"]
    assert set(edges["dst"]) == set(names)
