"""End-to-end train + evaluate for one (graph, split, seed) and named model variants."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .config import RunConfig, distill_config
from .evaluation import accuracy, cut_value, prod_accuracy
from .graph_data import Graph, SplitAssignment, training_view
from .position_encoding import PositionTable, sample_walks, train_skipgram, transfer_positions
from .student_distill import StudentModel, student_predict, train_student
from .teacher_gnn import (TeacherConfig, TeacherModel, TeacherOutputs, export_teacher_outputs,
                          teacher_forward, train_teacher)

# variant -> (use positions, lambda on, mu on, eta on)
VARIANTS = {
    "nosmog": (True, True, True, True),
    "full": (True, True, True, True),
    "w/o POS": (False, True, True, True),
    "w/o RSD": (True, True, False, True),
    "w/o ADV": (True, True, True, False),
    "glnn": (False, True, False, False),
    "mlp": (False, False, False, False),
}


@dataclass
class RunResult:
    predictions: np.ndarray
    accuracy_tran: float
    accuracy_ind: float | None
    accuracy_prod: float
    cut_value: float


def evaluate_predictions(pred: np.ndarray, graph: Graph, split: SplitAssignment) -> RunResult:
    """Accuracy on observed (tran), inductive (ind) and both (prod) unlabeled nodes."""
    obs, ind = split.observed, split.inductive
    acc_tran = accuracy(pred, graph.labels, obs)
    if len(ind):
        acc_ind = accuracy(pred, graph.labels, ind)
        prod = prod_accuracy(acc_ind, len(ind), acc_tran, len(obs))
    else:
        acc_ind, prod = None, acc_tran
    return RunResult(pred, acc_tran, acc_ind, prod, cut_value(pred, graph))


def fit_teacher(graph: Graph, split: SplitAssignment, cfg: RunConfig, seed: int) -> TeacherModel:
    view = training_view(graph, split)
    return train_teacher(view, split, TeacherConfig(**asdict(cfg.teacher)), seed)


def teacher_predictions(model: TeacherModel, graph: Graph) -> np.ndarray:
    # inference runs on the full graph: edges to inductive nodes are restored
    return np.argmax(teacher_forward(model, graph)[1], axis=1)


def fit_positions(graph: Graph, split: SplitAssignment, cfg: RunConfig, seed: int) -> PositionTable:
    """Trained on the training view, transferred to inductive nodes; one row per graph node."""
    p = cfg.positions
    if p.dim == 0:
        return PositionTable.empty(graph.num_nodes)
    view = training_view(graph, split)
    corpus = sample_walks(view, p.walks_per_node, p.walk_length, seed)
    table = train_skipgram(corpus, p.dim, p.window, p.negatives, p.epochs, p.learning_rate, seed)
    return transfer_positions(graph, table, split)


def view_rows(table: PositionTable, split: SplitAssignment) -> PositionTable:
    rows = split.training_nodes
    return PositionTable(table.embeddings[rows], table.provenance[rows], table.meta)


def fit_variant(graph: Graph, split: SplitAssignment, cfg: RunConfig, seed: int, variant: str,
                teacher: TeacherOutputs | None = None, positions: PositionTable | None = None
                ) -> tuple[StudentModel, PositionTable]:
    """Train one variant; returns the student and the full-graph position table it uses."""
    use_pos, lam, mu, eta = VARIANTS[variant]
    view = training_view(graph, split)
    base = distill_config(cfg, seed)
    dcfg = replace(base, lambda_=base.lambda_ if lam else 0.0, mu=base.mu if mu else 0.0,
                   eta=base.eta if eta else 0.0)
    if use_pos and cfg.positions.dim:
        positions = positions if positions is not None else fit_positions(graph, split, cfg, seed)
    else:
        positions = PositionTable.empty(graph.num_nodes)
    if teacher is None and (lam or mu or eta):
        teacher = export_teacher_outputs(fit_teacher(graph, split, cfg, seed), view)
    if teacher is None:
        # plain MLP: soft labels and hidden rows are never read
        teacher = TeacherOutputs(np.zeros((view.num_nodes, graph.num_classes)),
                                 np.zeros((view.num_nodes, 1)), np.arange(view.num_nodes))
    return train_student(view, split, view_rows(positions, split), teacher, dcfg), positions


def run_variant(graph: Graph, split: SplitAssignment, cfg: RunConfig, seed: int, variant: str,
                teacher: TeacherOutputs | None = None, positions: PositionTable | None = None
                ) -> RunResult:
    model, table = fit_variant(graph, split, cfg, seed, variant, teacher, positions)
    pred = student_predict(model, graph.features, table)
    return evaluate_predictions(pred, graph, split)
