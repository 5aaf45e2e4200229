import json
import math

import numpy as np
import pytest

from graphdistill.graph_data import Graph, Role, SplitAssignment, generate_sbm, make_split
from graphdistill.position_encoding import (DeepWalk, PositionTable, Provenance, WalkCorpus,
                                            load_positions, sample_walks, save_positions,
                                            train_skipgram, transfer_positions)


def graph(n, edges):
    return Graph.from_edges(n, edges, np.zeros((n, 1)), np.zeros(n, dtype=int), num_classes=1)


PETERSEN = [(i, (i + 1) % 5) for i in range(5)] + [(i, i + 5) for i in range(5)] + \
           [(5 + i, 5 + (i + 2) % 5) for i in range(5)]


# walks --------------------------------------------------------------------


def test_isolated_node_walk():
    corpus = sample_walks(graph(3, [(0, 1)]), 4, 5, seed=0)
    iso = [w for w in corpus.walks if w[0] == 2]
    assert len(iso) == 1 and iso[0].tolist() == [2]


def test_forced_transitions():
    corpus = sample_walks(graph(2, [(0, 1)]), 6, 3, seed=0)
    from_zero = [w.tolist() for w in corpus.walks if w[0] == 0]
    assert from_zero == [[0, 1, 0]] * 6


def test_walks_follow_edges():
    g = generate_sbm(2, 15, 0.3, 0.05, 2, 0.5, seed=1)
    adj = g.adjacency().toarray()
    for w in sample_walks(g, 3, 8, seed=4).walks:
        for a, b in zip(w[:-1], w[1:]):
            assert adj[a, b]


def test_three_regular_next_hop_uniform():
    g = graph(10, PETERSEN)
    assert set(g.degrees.tolist()) == {3}
    n_walks = 10_000
    corpus = sample_walks(g, n_walks, 2, seed=123)
    hops = np.array([w[1] for w in corpus.walks if w[0] == 0])
    assert len(hops) == n_walks
    counts = np.array([np.sum(hops == u) for u in g.neighbors(0)])
    sigma = math.sqrt(n_walks * (1 / 3) * (2 / 3))
    assert counts.sum() == n_walks
    assert np.all(np.abs(counts - n_walks / 3) <= 3 * sigma)


def test_walks_deterministic():
    g = generate_sbm(2, 10, 0.3, 0.05, 2, 0.5, seed=1)
    a, b = sample_walks(g, 2, 5, 9), sample_walks(g, 2, 5, 9)
    assert all(np.array_equal(x, y) for x, y in zip(a.walks, b.walks))


# skip-gram ----------------------------------------------------------------


def _cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_clique_cosine_separation():
    k = 8
    edges = [(i, j) for i in range(k) for j in range(i + 1, k)]
    edges += [(i + k, j + k) for i, j in edges]
    g = graph(2 * k, edges)
    emb = train_skipgram(sample_walks(g, 10, 20, seed=0), dim=8, epochs=5, seed=0).embeddings
    intra = [_cos(emb[i], emb[j]) for c in (0, k) for i in range(c, c + k) for j in range(i + 1, c + k)]
    inter = [_cos(emb[i], emb[j]) for i in range(k) for j in range(k, 2 * k)]
    assert np.mean(intra) > np.mean(inter)


def test_zero_epochs_equals_documented_init():
    g = graph(6, [(0, 1), (1, 2), (3, 4)])
    dim = 4
    table = train_skipgram(sample_walks(g, 2, 4, seed=0), dim=dim, epochs=0, seed=5)
    want = np.random.default_rng(5).uniform(-0.5 / dim, 0.5 / dim, size=(6, dim))
    assert np.array_equal(table.embeddings, want)
    assert np.all(np.abs(table.embeddings) <= 0.5 / dim)


def test_skipgram_deterministic():
    g = generate_sbm(2, 20, 0.3, 0.05, 2, 0.5, seed=1)
    corpus = sample_walks(g, 3, 10, seed=0)
    a = train_skipgram(corpus, dim=6, epochs=2, seed=3).embeddings
    b = train_skipgram(corpus, dim=6, epochs=2, seed=3).embeddings
    assert np.array_equal(a, b)


def test_window_zero_rejected():
    with pytest.raises(ValueError, match="window"):
        train_skipgram(sample_walks(graph(2, [(0, 1)]), 1, 3, 0), window=0)


# transfer -----------------------------------------------------------------


def _roles(*roles):
    return SplitAssignment(np.array(roles, dtype=np.int8))


def test_transfer_single_neighbor_verbatim():
    g = graph(3, [(0, 1), (1, 2)])
    split = _roles(Role.LABELED, Role.OBSERVED, Role.INDUCTIVE)
    table = PositionTable(np.array([[1.0, 2.0], [3.0, 4.0]]), np.zeros(2, dtype=np.int8))
    out = transfer_positions(g, table, split)
    assert np.array_equal(out.embeddings[2], [3.0, 4.0])
    assert out.provenance[2] == Provenance.TRANSFERRED


def test_transfer_symmetric_neighbors_zero():
    g = graph(3, [(0, 2), (1, 2)])
    split = _roles(Role.LABELED, Role.OBSERVED, Role.INDUCTIVE)
    p = np.array([0.3, -1.2])
    out = transfer_positions(g, PositionTable(np.stack([p, -p]), np.zeros(2, dtype=np.int8)), split)
    assert np.array_equal(out.embeddings[2], [0.0, 0.0])
    assert out.provenance[2] == Provenance.TRANSFERRED


def test_transfer_only_inductive_neighbors_zero():
    g = graph(4, [(0, 1), (2, 3)])
    split = _roles(Role.LABELED, Role.OBSERVED, Role.INDUCTIVE, Role.INDUCTIVE)
    out = transfer_positions(g, PositionTable(np.ones((2, 3)), np.zeros(2, dtype=np.int8)), split)
    assert np.array_equal(out.embeddings[2:], np.zeros((2, 3)))
    assert list(out.provenance[2:]) == [Provenance.ZERO, Provenance.ZERO]
    assert out.provenance_counts() == {"trained": 2, "transferred": 0, "zero": 2}


@pytest.mark.parametrize("seed", range(10))
def test_transfer_equals_neighbor_mean_exhaustive(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 51))
    iu = np.triu_indices(n, 1)
    mask = rng.random(len(iu[0])) < 0.15
    g = graph(n, np.stack([iu[0][mask], iu[1][mask]], axis=1))
    split = make_split(g, 0.2, 0.3, seed)
    train = split.training_nodes
    table = PositionTable(rng.standard_normal((len(train), 4)), np.zeros(len(train), dtype=np.int8))
    out = transfer_positions(g, table, split)
    lookup = dict(zip(train.tolist(), table.embeddings))
    for v in range(n):
        if v in lookup:
            assert np.array_equal(out.embeddings[v], lookup[v])
            continue
        nbrs = [u for u in g.neighbors(v).tolist() if u in lookup]
        want = np.mean([lookup[u] for u in nbrs], axis=0) if nbrs else np.zeros(4)
        assert np.allclose(out.embeddings[v], want, rtol=0, atol=1e-15)


def test_transfer_row_count_checked():
    g = graph(3, [(0, 1)])
    with pytest.raises(ValueError, match="rows"):
        transfer_positions(g, PositionTable(np.ones((1, 2)), np.zeros(1, dtype=np.int8)),
                           _roles(Role.LABELED, Role.OBSERVED, Role.INDUCTIVE))


# persistence and estimator ------------------------------------------------------


def test_positions_roundtrip(tmp_path):
    g = generate_sbm(2, 10, 0.3, 0.05, 2, 0.5, seed=1)
    table = train_skipgram(sample_walks(g, 2, 5, 0), dim=3, epochs=1, seed=0)
    save_positions(table, tmp_path)
    back = load_positions(tmp_path)
    assert np.array_equal(back.embeddings, table.embeddings)
    assert np.array_equal(back.provenance, table.provenance)
    meta = json.loads((tmp_path / "positions.meta.json").read_text())
    assert meta["dim"] == 3 and meta["provenance_counts"]["trained"] == 20


def test_empty_table_roundtrip(tmp_path):
    save_positions(PositionTable.empty(4), tmp_path)
    assert load_positions(tmp_path).embeddings.shape == (4, 0)


def test_deepwalk_estimator():
    g = generate_sbm(2, 10, 0.3, 0.05, 2, 0.5, seed=1)
    est = DeepWalk(dim=4, walks_per_node=2, walk_length=5, epochs=1, random_state=2)
    assert est.get_params()["dim"] == 4
    x = est.fit(g).transform(g)
    assert x.shape == (20, 4)
    assert np.array_equal(x, DeepWalk(**est.get_params()).fit_transform(g))
    assert np.array_equal(est.transform(), x)  # the fitted table, no graph needed
