"""Graph storage, dataset I/O, SBM generation, splits and feature noise."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


class DatasetError(ValueError):
    """Malformed dataset file; the message names the file and line."""


class Role(enum.IntEnum):
    LABELED = 0
    OBSERVED = 1
    INDUCTIVE = 2


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph in CSR form with node content features and labels.

    ``node_ids`` maps local node indices to ids of the parent graph (identity
    for graphs that were loaded or generated directly).
    """

    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    node_ids: np.ndarray

    @classmethod
    def from_edges(cls, num_nodes: int, edges, features, labels, num_classes: int | None = None,
                   node_ids=None) -> "Graph":
        """Build from an edge list; duplicates and reversed pairs collapse, self-loops are dropped."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        edges = edges[edges[:, 0] != edges[:, 1]]
        src = np.concatenate([edges[:, 0], edges[:, 1]])
        dst = np.concatenate([edges[:, 1], edges[:, 0]])
        adj = sp.csr_matrix((np.ones(len(src)), (src, dst)), shape=(num_nodes, num_nodes))
        adj.sum_duplicates()
        adj.sort_indices()
        labels = np.asarray(labels, dtype=np.int64)
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if len(labels) else 0
        if node_ids is None:
            node_ids = np.arange(num_nodes)
        return cls(
            indptr=_frozen(adj.indptr, np.int64),
            indices=_frozen(adj.indices, np.int64),
            features=_frozen(np.asarray(features, dtype=np.float64).reshape(num_nodes, -1), np.float64),
            labels=_frozen(labels, np.int64),
            num_classes=int(num_classes),
            node_ids=_frozen(node_ids, np.int64),
        )

    @property
    def num_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return len(self.indices) // 2

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def edge_array(self) -> np.ndarray:
        """Undirected edges as an ``(E, 2)`` array with ``u < v``."""
        src = np.repeat(np.arange(self.num_nodes), self.degrees)
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    def adjacency(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (np.ones(len(self.indices)), self.indices, self.indptr),
            shape=(self.num_nodes, self.num_nodes),
        )

    def with_features(self, features) -> "Graph":
        features = np.asarray(features, dtype=np.float64)
        if features.shape[0] != self.num_nodes:
            raise ValueError(f"expected {self.num_nodes} feature rows, got {features.shape[0]}")
        return Graph(self.indptr, self.indices, _frozen(features, np.float64), self.labels,
                     self.num_classes, self.node_ids)


def validate_graph(g: Graph) -> None:
    """Raise ``ValueError`` if any structural invariant is broken."""
    n = g.num_nodes
    if g.indptr[0] != 0 or np.any(np.diff(g.indptr) < 0) or g.indptr[-1] != len(g.indices):
        raise ValueError("malformed indptr")
    if len(g.indices) and (g.indices.min() < 0 or g.indices.max() >= n):
        raise ValueError("neighbor id out of range")
    for v in range(n):
        nb = g.neighbors(v)
        if np.any(np.diff(nb) <= 0):
            raise ValueError(f"neighbors of {v} not sorted/unique")
        if np.any(nb == v):
            raise ValueError(f"self-loop at {v}")
    adj = g.adjacency()
    if (adj != adj.T).nnz:
        raise ValueError("adjacency not symmetric")
    if g.features.shape[0] != n or len(g.labels) != n:
        raise ValueError("feature/label row count mismatch")
    if n and (g.labels.min() < 0 or g.labels.max() >= g.num_classes):
        raise ValueError("label out of range")


# --------------------------------------------------------------------------
# dataset directory I/O


def load_graph(directory) -> Graph:
    """Read ``edges.tsv``, ``features.csv`` and ``labels.csv`` from ``directory``."""
    directory = Path(directory)
    paths = {name: directory / name for name in ("edges.tsv", "features.csv", "labels.csv")}
    for p in paths.values():
        if not p.is_file():
            raise DatasetError(f"{p}: missing file")

    rows = []
    width = None
    with open(paths["features.csv"]) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                vals = [float(x) for x in line.split(",")]
            except ValueError as exc:
                raise DatasetError(f"{paths['features.csv']}:{lineno}: {exc}") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DatasetError(
                    f"{paths['features.csv']}:{lineno}: expected {width} values, got {len(vals)}")
            rows.append(vals)
    n = len(rows)
    features = np.array(rows, dtype=np.float64).reshape(n, width or 0)

    labels = []
    with open(paths["labels.csv"]) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                y = int(line)
            except ValueError:
                raise DatasetError(f"{paths['labels.csv']}:{lineno}: not an integer: {line.strip()!r}") from None
            if y < 0:
                raise DatasetError(f"{paths['labels.csv']}:{lineno}: label {y} out of range")
            labels.append(y)
    if len(labels) != n:
        raise DatasetError(f"{paths['labels.csv']}: {len(labels)} labels for {n} feature rows")

    edges = []
    self_loops = 0
    with open(paths["edges.tsv"]) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DatasetError(f"{paths['edges.tsv']}:{lineno}: expected 'src<TAB>dst'")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise DatasetError(f"{paths['edges.tsv']}:{lineno}: non-integer node id") from None
            for node in (u, v):
                if node < 0 or node >= n:
                    raise DatasetError(f"{paths['edges.tsv']}:{lineno}: node {node} out of range (N={n})")
            if u == v:
                self_loops += 1
                continue
            edges.append((u, v))
    if self_loops:
        logger.warning("%s: dropped %d self-loop lines", paths["edges.tsv"], self_loops)
    return Graph.from_edges(n, edges, features, labels)


def save_graph(graph: Graph, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "edges.tsv", "w") as fh:
        fh.write("# src\tdst\n")
        for u, v in graph.edge_array():
            fh.write(f"{u}\t{v}\n")
    np.savetxt(directory / "features.csv", graph.features, delimiter=",", fmt="%.17g")
    np.savetxt(directory / "labels.csv", graph.labels, fmt="%d")


# --------------------------------------------------------------------------
# synthetic data


def generate_sbm(blocks: int, nodes_per_block: int, p_in: float, p_out: float,
                 feature_dim: int, feature_signal: float, seed: int) -> Graph:
    """Assortative stochastic block model with label = block id.

    Each block gets a random unit-norm mean direction; node features are
    ``feature_signal * mean + (1 - feature_signal) * N(0, I)``.
    """
    if not 0.0 <= p_out <= p_in <= 1.0:
        raise ValueError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if not 0.0 <= feature_signal <= 1.0:
        raise ValueError(f"feature_signal must lie in [0, 1], got {feature_signal}")
    rng = np.random.default_rng(seed)
    n = blocks * nodes_per_block
    labels = np.repeat(np.arange(blocks), nodes_per_block)

    edges = []
    for a in range(blocks):
        for b in range(a, blocks):
            p = p_in if a == b else p_out
            edges.append(_sample_block_pair(rng, a, b, nodes_per_block, p))
    edges = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)

    means = rng.standard_normal((blocks, feature_dim))
    means /= np.maximum(np.linalg.norm(means, axis=1, keepdims=True), 1e-12)
    noise = rng.standard_normal((n, feature_dim))
    features = feature_signal * means[labels] + (1.0 - feature_signal) * noise
    return Graph.from_edges(n, edges, features, labels, num_classes=blocks)


def _sample_block_pair(rng, a, b, size, p) -> np.ndarray:
    # rows are drawn one at a time to keep memory linear in the block size
    out = []
    for i in range(size):
        if a == b:
            cand = np.arange(i + 1, size)
        else:
            cand = np.arange(size)
        hit = cand[rng.random(len(cand)) < p]
        if len(hit):
            out.append(np.stack([np.full(len(hit), a * size + i), b * size + hit], axis=1))
    return np.concatenate(out) if out else np.zeros((0, 2), dtype=np.int64)


# --------------------------------------------------------------------------
# splits


@dataclass(frozen=True, eq=False)
class SplitAssignment:
    roles: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "roles", _frozen(self.roles, np.int8))

    @property
    def num_nodes(self) -> int:
        return len(self.roles)

    @property
    def labeled(self) -> np.ndarray:
        return np.flatnonzero(self.roles == Role.LABELED)

    @property
    def observed(self) -> np.ndarray:
        return np.flatnonzero(self.roles == Role.OBSERVED)

    @property
    def inductive(self) -> np.ndarray:
        return np.flatnonzero(self.roles == Role.INDUCTIVE)

    @property
    def training_nodes(self) -> np.ndarray:
        """Labeled and observed nodes, ascending; the node order of the training view."""
        return np.flatnonzero(self.roles != Role.INDUCTIVE)

    @property
    def is_transductive(self) -> bool:
        return not np.any(self.roles == Role.INDUCTIVE)

    def restrict(self, nodes) -> "SplitAssignment":
        return SplitAssignment(self.roles[np.asarray(nodes)])

    def to_json(self) -> dict:
        return {
            "labeled": self.labeled.tolist(),
            "observed": self.observed.tolist(),
            "inductive": self.inductive.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict, num_nodes: int) -> "SplitAssignment":
        roles = np.full(num_nodes, -1, dtype=np.int8)
        for key, role in (("labeled", Role.LABELED), ("observed", Role.OBSERVED),
                          ("inductive", Role.INDUCTIVE)):
            ids = np.asarray(obj.get(key, []), dtype=np.int64)
            if len(ids) and (ids.min() < 0 or ids.max() >= num_nodes):
                raise DatasetError(f"split.json: {key!r} holds a node id outside [0, {num_nodes})")
            if np.any(roles[ids] != -1):
                raise DatasetError(f"split.json: {key!r} repeats a node")
            roles[ids] = role
        if np.any(roles == -1):
            raise DatasetError(f"split.json: node {int(np.flatnonzero(roles == -1)[0])} has no role")
        return cls(roles)


def load_split(directory, num_nodes: int) -> SplitAssignment | None:
    path = Path(directory) / "split.json"
    if not path.is_file():
        return None
    with open(path) as fh:
        return SplitAssignment.from_json(json.load(fh), num_nodes)


def make_split(graph: Graph, label_fraction: float, inductive_fraction: float,
               seed: int) -> SplitAssignment:
    """Random labeled / observed / inductive partition of the nodes.

    Labeled nodes are stratified by class when every class holds at least
    ``1 / label_fraction`` nodes, otherwise drawn uniformly.
    """
    if not 0.0 < label_fraction < 1.0:
        raise ValueError(f"label_fraction must lie in (0, 1), got {label_fraction}")
    if not 0.0 <= inductive_fraction < 1.0:
        raise ValueError(f"inductive_fraction must lie in [0, 1), got {inductive_fraction}")
    rng = np.random.default_rng(seed)
    n = graph.num_nodes
    n_labeled = int(round(label_fraction * n))
    counts = np.bincount(graph.labels, minlength=graph.num_classes)

    if n_labeled and np.all(counts >= 1.0 / label_fraction):
        quota = _largest_remainder(counts * label_fraction, n_labeled)
        labeled = np.concatenate([
            rng.choice(np.flatnonzero(graph.labels == c), size=q, replace=False)
            for c, q in enumerate(quota)
        ])
    else:
        labeled = rng.choice(n, size=n_labeled, replace=False)

    roles = np.full(n, Role.OBSERVED, dtype=np.int8)
    roles[labeled] = Role.LABELED
    unlabeled = np.flatnonzero(roles == Role.OBSERVED)
    n_ind = int(round(inductive_fraction * len(unlabeled)))
    roles[rng.choice(unlabeled, size=n_ind, replace=False)] = Role.INDUCTIVE

    if n_labeled == 0:
        raise ValueError(f"label_fraction={label_fraction} leaves no labeled node (N={n})")
    if not np.any(roles == Role.OBSERVED):
        raise ValueError("split leaves no observed unlabeled node")
    return SplitAssignment(roles)


def _largest_remainder(shares: np.ndarray, total: int) -> np.ndarray:
    base = np.floor(shares).astype(np.int64)
    rest = total - base.sum()
    order = np.argsort(-(shares - base), kind="stable")
    base[order[:rest]] += 1
    return base


def training_view(graph: Graph, split: SplitAssignment) -> Graph:
    """Subgraph on labeled and observed nodes; edges touching inductive nodes are dropped."""
    if split.num_nodes != graph.num_nodes:
        raise ValueError("split does not belong to this graph")
    if split.is_transductive:
        return graph
    keep = split.training_nodes
    adj = graph.adjacency()[keep][:, keep].tocsr()
    adj.sort_indices()
    return Graph(
        indptr=_frozen(adj.indptr, np.int64),
        indices=_frozen(adj.indices, np.int64),
        features=_frozen(graph.features[keep], np.float64),
        labels=_frozen(graph.labels[keep], np.int64),
        num_classes=graph.num_classes,
        node_ids=_frozen(graph.node_ids[keep], np.int64),
    )


# --------------------------------------------------------------------------
# noise


def inject_feature_noise(content, alpha: float, seed: int) -> np.ndarray:
    """Return ``(1 - alpha) * content + alpha * n`` with ``n`` i.i.d. standard normal."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    content = np.asarray(content, dtype=np.float64)
    if alpha == 0.0:
        return content.copy()
    noise = np.random.default_rng(seed).standard_normal(content.shape)
    if alpha == 1.0:
        return noise
    return (1.0 - alpha) * content + alpha * noise
