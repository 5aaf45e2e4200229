"""DeepWalk position features: uniform random walks + skip-gram with negative sampling.

Nothing in this module reads node content features.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .graph_data import Graph, SplitAssignment

DEFAULTS = dict(dim=16, walk_length=30, walks_per_node=10, window=5, negatives=5, epochs=5,
                learning_rate=0.025)


class Provenance(enum.IntEnum):
    TRAINED = 0
    TRANSFERRED = 1
    ZERO = 2


@dataclass(frozen=True)
class WalkCorpus:
    walks: list[np.ndarray]
    walk_length: int
    walks_per_node: int
    num_nodes: int


@dataclass(eq=False)
class PositionTable:
    embeddings: np.ndarray
    provenance: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    def provenance_counts(self) -> dict[str, int]:
        return {p.name.lower(): int(np.sum(self.provenance == p)) for p in Provenance}

    @classmethod
    def empty(cls, num_nodes: int) -> "PositionTable":
        """Zero-width table, used to switch position features off."""
        return cls(np.zeros((num_nodes, 0)), np.full(num_nodes, Provenance.TRAINED, dtype=np.int8))


def sample_walks(graph: Graph, walks_per_node: int, walk_length: int, seed: int) -> WalkCorpus:
    """Uniform random walks; every start node gets its own child generator.

    Walks are grouped by start node in node order, so the corpus does not
    depend on how start nodes are scheduled. Isolated nodes contribute one
    walk of length 1.
    """
    if graph.num_nodes == 0:
        raise ValueError("cannot sample walks on an empty graph")
    if walk_length < 1:
        raise ValueError(f"walk_length must be >= 1, got {walk_length}")
    indptr, indices = graph.indptr, graph.indices
    deg = graph.degrees
    children = np.random.SeedSequence(seed).spawn(graph.num_nodes)
    walks = []
    for v in range(graph.num_nodes):
        if deg[v] == 0:
            walks.append(np.array([v], dtype=np.int64))
            continue
        rng = np.random.default_rng(children[v])
        cur = np.full(walks_per_node, v, dtype=np.int64)
        block = np.empty((walks_per_node, walk_length), dtype=np.int64)
        block[:, 0] = cur
        for step in range(1, walk_length):
            offs = (rng.random(walks_per_node) * deg[cur]).astype(np.int64)
            cur = indices[indptr[cur] + offs]
            block[:, step] = cur
        walks.extend(block)
    return WalkCorpus(walks, walk_length, walks_per_node, graph.num_nodes)


def _training_pairs(corpus: WalkCorpus, window: int) -> tuple[np.ndarray, np.ndarray]:
    centers, contexts = [], []
    for walk in corpus.walks:
        n = len(walk)
        for off in range(-window, window + 1):
            if off == 0 or abs(off) >= n:
                continue
            lo, hi = max(0, -off), min(n, n - off)
            centers.append(walk[lo:hi])
            contexts.append(walk[lo + off:hi + off])
    if not centers:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    # stable order: walk by walk, then offset, then position
    return np.concatenate(centers), np.concatenate(contexts)


@numba.njit(cache=True, nogil=True)
def _sgns_epoch(emb, ctx, centers, contexts, negs, lr0, lr1):
    n_pairs = len(centers)
    dim = emb.shape[1]
    grad_in = np.empty(dim)
    for i in range(n_pairs):
        lr = lr0 + (lr1 - lr0) * i / max(n_pairs, 1)
        c = centers[i]
        for j in range(dim):
            grad_in[j] = 0.0
        for t in range(negs.shape[1] + 1):
            if t == 0:
                o = contexts[i]
                label = 1.0
            else:
                o = negs[i, t - 1]
                if o == contexts[i]:
                    continue
                label = 0.0
            dot = 0.0
            for j in range(dim):
                dot += emb[c, j] * ctx[o, j]
            if dot > 30.0:
                sig = 1.0
            elif dot < -30.0:
                sig = 0.0
            else:
                sig = 1.0 / (1.0 + np.exp(-dot))
            g = lr * (label - sig)
            for j in range(dim):
                grad_in[j] += g * ctx[o, j]
                ctx[o, j] += g * emb[c, j]
        for j in range(dim):
            emb[c, j] += grad_in[j]


def _unigram_table(counts: np.ndarray, size: int = 1_000_000) -> np.ndarray:
    # word2vec-style lookup table; node v fills ~ size * count_v^0.75 / Z slots
    weights = counts**0.75
    reps = np.round(weights / weights.sum() * size).astype(np.int64)
    return np.repeat(np.arange(len(counts), dtype=np.int64), reps)


def train_skipgram(corpus: WalkCorpus, dim: int = 16, window: int = 5, negatives: int = 5,
                   epochs: int = 5, learning_rate: float = 0.025, seed: int = 0) -> PositionTable:
    """Skip-gram with negative sampling over ``(center, context)`` pairs.

    Input vectors start uniform in ``[-0.5/dim, 0.5/dim]``, context vectors at
    zero; the learning rate decays linearly to ``1e-4 * learning_rate``.
    Negatives are drawn from the corpus unigram distribution raised to 0.75.
    """
    if window < 1:
        raise ValueError("window must be >= 1 (window=0 yields no training pairs)")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if not corpus.walks:
        raise ValueError("empty walk corpus")
    rng = np.random.default_rng(seed)
    n = corpus.num_nodes
    emb = rng.uniform(-0.5 / dim, 0.5 / dim, size=(n, dim))
    ctx = np.zeros((n, dim))
    centers, contexts = _training_pairs(corpus, window)
    counts = np.bincount(np.concatenate(corpus.walks), minlength=n).astype(np.float64)
    table = _unigram_table(counts)
    lr_end = learning_rate * 1e-4
    for ep in range(epochs):
        negs = table[rng.integers(0, len(table), size=(len(centers), negatives))]
        lr0 = learning_rate + (lr_end - learning_rate) * ep / epochs
        lr1 = learning_rate + (lr_end - learning_rate) * (ep + 1) / epochs
        _sgns_epoch(emb, ctx, centers, contexts, negs, lr0, lr1)
    meta = dict(dim=dim, window=window, negatives=negatives, epochs=epochs,
                learning_rate=learning_rate, seed=seed, walk_length=corpus.walk_length,
                walks_per_node=corpus.walks_per_node)
    return PositionTable(emb, np.full(n, Provenance.TRAINED, dtype=np.int8), meta)


def transfer_positions(full_graph: Graph, table: PositionTable, split: SplitAssignment) -> PositionTable:
    """Fill inductive nodes with the mean of their non-inductive neighbors' embeddings.

    ``table`` holds either one row per training-view node (ascending node id
    order of the non-inductive nodes) or one row per node of ``full_graph``.
    Inductive nodes without a non-inductive neighbor get a zero row marked
    :attr:`Provenance.ZERO`. Single pass; transferred rows never feed other
    transfers.
    """
    n = full_graph.num_nodes
    if split.num_nodes != n:
        raise ValueError("split does not belong to this graph")
    train_nodes = split.training_nodes
    emb = np.zeros((n, table.dim))
    prov = np.full(n, Provenance.TRAINED, dtype=np.int8)
    if len(table) == len(train_nodes):
        emb[train_nodes] = table.embeddings
    elif len(table) == n:
        emb[train_nodes] = table.embeddings[train_nodes]
    else:
        raise ValueError(f"table has {len(table)} rows; expected {len(train_nodes)} or {n}")
    is_train = np.zeros(n, dtype=bool)
    is_train[train_nodes] = True
    for v in split.inductive:
        nb = full_graph.neighbors(v)
        nb = nb[is_train[nb]]
        if len(nb):
            emb[v] = emb[nb].mean(axis=0)
            prov[v] = Provenance.TRANSFERRED
        else:
            prov[v] = Provenance.ZERO
    return PositionTable(emb, prov, dict(table.meta))


def save_positions(table: PositionTable, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savetxt(directory / "positions.csv", table.embeddings, delimiter=",", fmt="%.17g")
    meta = dict(table.meta)
    meta["dim"] = table.dim
    meta["provenance_counts"] = table.provenance_counts()
    meta["provenance"] = table.provenance.tolist()
    with open(directory / "positions.meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_positions(directory) -> PositionTable:
    directory = Path(directory)
    with open(directory / "positions.meta.json") as fh:
        meta = json.load(fh)
    if meta["dim"] == 0:
        emb = np.zeros((len(meta["provenance"]), 0))
    else:
        emb = np.loadtxt(directory / "positions.csv", delimiter=",", ndmin=2)
    prov = np.asarray(meta.pop("provenance"), dtype=np.int8)
    meta.pop("provenance_counts", None)
    return PositionTable(emb, prov, meta)


class DeepWalk(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Estimator wrapper: ``fit(graph)`` learns the table, ``transform`` returns embeddings."""

    def __init__(self, dim=16, walk_length=30, walks_per_node=10, window=5, negatives=5,
                 epochs=5, learning_rate=0.025, random_state=0):
        self.dim = dim
        self.walk_length = walk_length
        self.walks_per_node = walks_per_node
        self.window = window
        self.negatives = negatives
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, graph: Graph, y=None):
        corpus = sample_walks(graph, self.walks_per_node, self.walk_length, self.random_state)
        self.table_ = train_skipgram(corpus, self.dim, self.window, self.negatives, self.epochs,
                                     self.learning_rate, self.random_state)
        self.n_nodes_ = graph.num_nodes
        return self

    def transform(self, graph: Graph | None = None):
        check_is_fitted(self, "table_")
        if graph is not None and graph.num_nodes != self.n_nodes_:
            raise ValueError(f"fitted on {self.n_nodes_} nodes, got {graph.num_nodes}")
        return self.table_.embeddings.copy()
