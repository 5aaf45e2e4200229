"""GraphSAGE teacher with GCN-style mean aggregation over ``{v} + N(v)``."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import checkpoint
from .core_math import Adam, Tape, grad, matmul, softmax
from .graph_data import Graph, SplitAssignment


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TeacherConfig:
    hidden_dim: int = 64
    num_layers: int = 2
    learning_rate: float = 0.01
    epochs: int = 200


@dataclass(eq=False)
class TeacherModel:
    layers: list[tuple[np.ndarray, np.ndarray]]
    config: TeacherConfig = field(default_factory=TeacherConfig)
    seed: int = 0
    history: list[float] = field(default_factory=list)  # validation accuracy per epoch
    losses: list[float] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def num_classes(self) -> int:
        return self.layers[-1][0].shape[1]

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer]


@dataclass(frozen=True, eq=False)
class TeacherOutputs:
    soft_labels: np.ndarray
    hidden: np.ndarray
    nodes: np.ndarray


def mean_aggregator(graph: Graph) -> sp.csr_matrix:
    """Row-normalized ``A + I``: row ``v`` averages ``v`` and its neighbors."""
    n = graph.num_nodes
    a = graph.adjacency() + sp.identity(n, format="csr")
    inv = 1.0 / np.asarray(a.sum(axis=1)).reshape(-1)
    out = sp.diags(inv) @ a
    out = out.tocsr()
    out.sort_indices()
    return out


def sage_layer_forward(h_in, graph: Graph, weight, bias, aggregator=None) -> np.ndarray:
    """``mean({h_v} + {h_u : u in N(v)}) @ weight + bias`` for every node."""
    agg = mean_aggregator(graph) if aggregator is None else aggregator
    m = np.asarray(agg @ np.asarray(h_in, dtype=np.float64))
    return matmul(m, weight) + np.asarray(bias).reshape(1, -1)


def init_teacher(in_dim: int, num_classes: int, config: TeacherConfig, seed: int) -> TeacherModel:
    """Glorot-uniform weights, zero biases, drawn from ``default_rng(seed)``."""
    rng = np.random.default_rng(seed)
    dims = [in_dim] + [config.hidden_dim] * (config.num_layers - 1) + [num_classes]
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (d_in + d_out))
        layers.append((rng.uniform(-bound, bound, (d_in, d_out)), np.zeros((1, d_out))))
    return TeacherModel(layers, config, seed)


def _forward(tape: Tape, agg, x, params):
    h = tape.constant(x)
    hidden = h
    n_layers = len(params) // 2
    for i in range(n_layers):
        w, b = params[2 * i], params[2 * i + 1]
        h = tape.add(tape.matmul(tape.spmm(agg, h), w), b)
        if i < n_layers - 1:
            h = tape.relu(h)
            hidden = h
    return hidden, h


def teacher_forward(model: TeacherModel, graph: Graph, aggregator=None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(last hidden activations, logits)``; hidden is the input when there is one layer."""
    agg = mean_aggregator(graph) if aggregator is None else aggregator
    h = graph.features
    hidden = h
    for i, (w, b) in enumerate(model.layers):
        h = sage_layer_forward(h, graph, w, b, agg)
        if i < len(model.layers) - 1:
            h = np.maximum(h, 0.0)
            hidden = h
    return hidden, h


def train_teacher(view: Graph, split: SplitAssignment, config: TeacherConfig | None = None,
                  seed: int = 0) -> TeacherModel:
    """Full-batch Adam on labeled-node cross-entropy; keeps the epoch with best observed accuracy.

    ``split`` may describe either the full graph or the view itself; it is
    restricted to ``view.node_ids`` when sizes differ.
    """
    config = config or TeacherConfig()
    if split.num_nodes != view.num_nodes:
        split = split.restrict(view.node_ids)
    labeled, observed = split.labeled, split.observed
    if not len(labeled):
        raise ValueError("no labeled nodes")
    model = init_teacher(view.features.shape[1], view.num_classes, config, seed)
    params = [p.copy() for p in model.params()]
    best = [p.copy() for p in params]
    opt = Adam(params, lr=config.learning_rate)
    agg = mean_aggregator(view)
    y = view.labels
    best_acc = -1.0
    for epoch in range(config.epochs):
        tape = Tape()
        leaves = [tape.leaf(p) for p in params]
        _, logits = _forward(tape, agg, view.features, leaves)
        loss = tape.cross_entropy(tape.take_rows(logits, labeled), y[labeled])
        lval = float(loss.value[0, 0])
        if not np.isfinite(lval):
            raise TrainingDiverged(f"teacher loss non-finite at epoch {epoch} (lr={config.learning_rate})")
        model.losses.append(lval)
        val_nodes = observed if len(observed) else labeled
        acc = float(np.mean(np.argmax(logits.value[val_nodes], axis=1) == y[val_nodes]))
        model.history.append(acc)
        if acc > best_acc:
            best_acc = acc
            best = [p.copy() for p in params]
            model.best_epoch = epoch
        opt.step(grad(tape, loss, leaves))
        for p in params:
            if not np.all(np.isfinite(p)):
                raise TrainingDiverged(f"teacher weights non-finite after epoch {epoch} "
                                       f"(lr={config.learning_rate})")
    if config.epochs:
        params = best
    model.layers = [(params[2 * i], params[2 * i + 1]) for i in range(len(params) // 2)]
    return model


def export_teacher_outputs(model: TeacherModel, graph: Graph, node_set=None) -> TeacherOutputs:
    """Soft labels and last-hidden rows for ``node_set`` (all nodes when ``None``)."""
    nodes = np.arange(graph.num_nodes) if node_set is None else np.asarray(node_set, dtype=np.int64)
    if len(nodes) and (nodes.min() < 0 or nodes.max() >= graph.num_nodes):
        raise ValueError("node_set holds ids outside the graph")
    hidden, logits = teacher_forward(model, graph)
    soft = softmax(logits[nodes])
    soft.setflags(write=False)
    hid = hidden[nodes].copy()
    hid.setflags(write=False)
    return TeacherOutputs(soft, hid, nodes)


def save_teacher(model: TeacherModel, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "teacher.bin"
    checkpoint.write_checkpoint(path, checkpoint.TEACHER_MAGIC, model.layers)
    meta = {"config": asdict(model.config), "seed": model.seed, "best_epoch": model.best_epoch,
            "val_history": model.history}
    (directory / "teacher.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def load_teacher(directory) -> TeacherModel:
    directory = Path(directory)
    layers, _ = checkpoint.read_checkpoint(directory / "teacher.bin", checkpoint.TEACHER_MAGIC)
    meta = json.loads((directory / "teacher.meta.json").read_text())
    return TeacherModel(layers, TeacherConfig(**meta["config"]), meta["seed"],
                        meta.get("val_history", []), best_epoch=meta.get("best_epoch", -1))


class SAGETeacher(ClassifierMixin, BaseEstimator):
    """Estimator wrapper. ``fit(graph, split)``; predictions need the graph."""

    def __init__(self, hidden_dim=64, num_layers=2, learning_rate=0.01, epochs=200, random_state=0):
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.random_state = random_state

    def fit(self, graph: Graph, split: SplitAssignment):
        cfg = TeacherConfig(self.hidden_dim, self.num_layers, self.learning_rate, self.epochs)
        self.model_ = train_teacher(graph, split, cfg, self.random_state)
        self.classes_ = np.arange(graph.num_classes)
        return self

    def predict_proba(self, graph: Graph):
        check_is_fitted(self, "model_")
        return export_teacher_outputs(self.model_, graph).soft_labels

    def predict(self, graph: Graph):
        return np.argmax(self.predict_proba(graph), axis=1)

    def transform(self, graph: Graph):
        check_is_fitted(self, "model_")
        return teacher_forward(self.model_, graph)[0]
