"""MLP student over content+position features, distilled from the teacher.

Training objective::

    L = L_GT + lambda * L_SL + mu * L_RSD + eta * L_ADV

``L_GT`` is cross-entropy on labeled rows, ``L_SL`` the KL divergence to the
teacher's soft labels, ``L_RSD`` the squared Frobenius distance between
batch Gram matrices of teacher and (transformed) student hidden
representations, and ``L_ADV`` the labeled + soft-label cross-entropy at
PGD-perturbed content features.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import checkpoint
from .core_math import Adam, Tape, Var, as_matrix, grad, matmul
from .graph_data import Graph, SplitAssignment
from .position_encoding import PositionTable
from .teacher_gnn import TeacherOutputs, TrainingDiverged


class ConfigError(ValueError):
    """Invalid configuration value; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class DistillConfig:
    lambda_: float = 1.0
    mu: float = 0.1
    eta: float = 0.1
    epsilon: float = 0.05
    step_size: float = 0.01
    pgd_steps: int = 5
    rsd_batch: int = 256
    learning_rate: float = 0.01
    epochs: int = 200
    hidden_dim: int = 128
    num_hidden_layers: int = 2
    seed: int = 0

    def validate(self, prefix: str = "distill") -> "DistillConfig":
        for name in ("lambda_", "mu", "eta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{prefix}.{name.rstrip('_')}", "must be >= 0")
        for name in ("epsilon", "step_size", "learning_rate"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{prefix}.{name}", "must be > 0")
        for name in ("pgd_steps", "rsd_batch", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{prefix}.{name}", "must be >= 1")
        for name in ("epochs", "num_hidden_layers"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{prefix}.{name}", "must be >= 0")
        if self.step_size > self.epsilon:
            raise ConfigError(f"{prefix}.step_size", "must not exceed epsilon")
        return self

    def to_json(self) -> dict:
        return {f.name.rstrip("_"): getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json(cls, obj: dict) -> "DistillConfig":
        names = {f.name.rstrip("_"): f.name for f in fields(cls)}
        return cls(**{names[k]: v for k, v in obj.items()})


@dataclass(eq=False)
class StudentModel:
    layers: list[tuple[np.ndarray, np.ndarray]]
    rsd_transform: np.ndarray
    n_content: int
    n_position: int
    history: dict = field(default_factory=dict)

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.rsd_transform.shape[0]

    @property
    def num_classes(self) -> int:
        return self.layers[-1][0].shape[1]

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer] + [self.rsd_transform]

    def with_params(self, params: list[np.ndarray]) -> "StudentModel":
        layers = [(params[2 * i], params[2 * i + 1]) for i in range(len(self.layers))]
        return StudentModel(layers, params[-1], self.n_content, self.n_position, self.history)


def init_student(n_content: int, n_position: int, num_classes: int, config: DistillConfig,
                 rng: np.random.Generator) -> StudentModel:
    """Glorot-uniform weights and ``W_M``, zero biases."""
    d_in = n_content + n_position
    dims = [d_in] + [config.hidden_dim] * config.num_hidden_layers + [num_classes]
    layers = []
    for a, b in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (a + b))
        layers.append((rng.uniform(-bound, bound, (a, b)), np.zeros((1, b))))
    d_m = dims[-2]
    bound = np.sqrt(3.0 / d_m)
    return StudentModel(layers, rng.uniform(-bound, bound, (d_m, d_m)), n_content, n_position)


def concat_features(content, positions: PositionTable | np.ndarray) -> np.ndarray:
    """``[content | positions]`` column-wise, content first."""
    content = as_matrix(content, "content")
    pos = positions.embeddings if isinstance(positions, PositionTable) else as_matrix(positions, "positions")
    if content.shape[0] != pos.shape[0]:
        raise ValueError(f"row count mismatch: content {content.shape[0]} vs positions {pos.shape[0]}")
    if pos.shape[1] == 0:
        return content.copy()
    return np.hstack([content, pos])


def student_forward(model: StudentModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(hidden, logits)``; hidden is the last pre-classifier activation."""
    h = as_matrix(x, "x")
    if h.shape[1] != model.in_dim:
        raise ValueError(f"expected {model.in_dim} input columns, got {h.shape[1]}")
    for i, (w, b) in enumerate(model.layers):
        out = matmul(h, w) + b
        if i < len(model.layers) - 1:
            h = np.maximum(out, 0.0)
        else:
            return h, out
    raise AssertionError("unreachable")


def student_predict(model: StudentModel, content, positions) -> np.ndarray:
    """Argmax class per row; ties go to the smallest class index."""
    _, logits = student_forward(model, concat_features(content, positions))
    return np.argmax(logits, axis=1)


# --------------------------------------------------------------------------
# tape-level pieces


def _tape_forward(tape: Tape, pvars: list[Var], n_layers: int, x) -> tuple[Var, Var]:
    h = tape._wrap(x)
    for i in range(n_layers):
        out = tape.add(tape.matmul(h, pvars[2 * i]), pvars[2 * i + 1])
        if i < n_layers - 1:
            h = tape.relu(out)
        else:
            return h, out
    raise AssertionError("unreachable")


def _rsd_term(tape: Tape, h_gnn: np.ndarray, h_mlp: Var, w_m: Var) -> Var:
    b = h_mlp.shape[0]
    if b == 0:
        raise ValueError("rsd_loss needs a non-empty batch")
    if h_gnn.shape[0] != b:
        raise ValueError(f"batch mismatch: teacher {h_gnn.shape[0]} vs student {b}")
    s_gnn = matmul(h_gnn, h_gnn.T)
    h_prime = tape.relu(tape.matmul(h_mlp, w_m))
    s_mlp = tape.matmul(h_prime, tape.transpose(h_prime))
    diff = tape.add(tape.constant(s_gnn), tape.scale(s_mlp, -1.0))
    return tape.scale(tape.frobenius_sq(diff), 1.0 / (b * b))


def _adv_term(tape: Tape, pvars, n_layers, x: Var, y: np.ndarray, z: np.ndarray) -> Var:
    """Labeled-row cross-entropy plus soft-label cross-entropy over all rows (both means)."""
    _, logits = _tape_forward(tape, pvars, n_layers, x)
    soft = tape.soft_cross_entropy(logits, z)
    lab = np.flatnonzero(y >= 0)
    if not len(lab):
        return soft
    return tape.add(tape.cross_entropy(tape.take_rows(logits, lab), y[lab]), soft)


def _perturbed_input(tape: Tape, x_base: np.ndarray, delta, n_content: int) -> Var:
    content = tape.add(tape.constant(x_base[:, :n_content]), delta)
    if x_base.shape[1] == n_content:
        return content
    return tape.concat_cols(content, tape.constant(x_base[:, n_content:]))


# --------------------------------------------------------------------------
# public losses


def rsd_loss(h_gnn, h_mlp, w_m) -> float:
    """``||H_G H_G^T - H' H'^T||_F^2 / B^2`` with ``H' = ReLU(h_mlp @ w_m)``."""
    tape = Tape()
    return float(_rsd_term(tape, as_matrix(h_gnn), tape.constant(h_mlp), tape.constant(w_m)).value[0, 0])


def pgd_perturb(model: StudentModel, x_base, y_targets, z_targets, config: DistillConfig) -> np.ndarray:
    """Sign-gradient ascent on the adversarial objective w.r.t. the content columns.

    ``y_targets`` holds a class per row, ``-1`` for rows without a label.
    Starts from zero, takes ``pgd_steps`` steps of ``step_size`` and clips to
    ``[-epsilon, epsilon]`` after each step. Returns a ``B x n_content`` array.
    """
    if config.pgd_steps < 1:
        raise ValueError("pgd_steps must be >= 1")
    x_base = as_matrix(x_base, "x_base")
    y = np.asarray(y_targets, dtype=np.int64).reshape(-1)
    z = as_matrix(z_targets, "z_targets")
    n_layers = len(model.layers)
    params = model.params()
    delta = np.zeros((x_base.shape[0], model.n_content))
    for step in range(config.pgd_steps):
        tape = Tape()
        pvars = [tape.constant(p) for p in params]
        d = tape.leaf(delta)
        loss = _adv_term(tape, pvars, n_layers, _perturbed_input(tape, x_base, d, model.n_content), y, z)
        (g,) = grad(tape, loss, [d])
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite PGD gradient at step {step}")
        delta = np.clip(delta + config.step_size * np.sign(g), -config.epsilon, config.epsilon)
    return delta


def adversarial_loss(model: StudentModel, x_base, delta, y_targets, z_targets) -> float:
    """Adversarial objective at ``content + delta`` (positions untouched)."""
    x_base = as_matrix(x_base, "x_base")
    tape = Tape()
    pvars = [tape.constant(p) for p in model.params()]
    x = _perturbed_input(tape, x_base, tape.constant(delta), model.n_content)
    y = np.asarray(y_targets, dtype=np.int64).reshape(-1)
    return float(_adv_term(tape, pvars, len(model.layers), x, y, as_matrix(z_targets)).value[0, 0])


def total_loss(l_gt, l_sl, l_rsd, l_adv, config: DistillConfig):
    """``L_GT + lambda L_SL + mu L_RSD + eta L_ADV``; accepts floats or tape values."""
    comps = {"L_GT": l_gt, "L_SL": l_sl, "L_RSD": l_rsd, "L_ADV": l_adv}
    for name, c in comps.items():
        val = c.value if isinstance(c, Var) else np.asarray(c)
        if not np.all(np.isfinite(val)):
            raise FloatingPointError(f"{name} is not finite")
    weights = (1.0, config.lambda_, config.mu, config.eta)
    if not any(isinstance(c, Var) for c in comps.values()):
        out = float(l_gt)
        for w, c in zip(weights[1:], (l_sl, l_rsd, l_adv)):
            if w:
                out = out + w * float(c)
        return out
    tape = next(c.tape for c in comps.values() if isinstance(c, Var))
    out = tape._wrap(l_gt)
    for w, c in zip(weights[1:], (l_sl, l_rsd, l_adv)):
        if w:
            out = tape.add(out, tape.scale(tape._wrap(c), w))
    return out


# --------------------------------------------------------------------------
# training


def fit_student(x, n_content: int, y, soft_labels, teacher_hidden, config: DistillConfig,
                val_rows=None, val_labels=None) -> StudentModel:
    """Train on rows of ``x``; ``y`` is ``-1`` on unlabeled rows.

    ``soft_labels`` and ``teacher_hidden`` are row-aligned with ``x`` and
    may be ``None`` when the matching weight is zero. Weight terms equal to
    zero are skipped entirely. The best epoch by validation accuracy (labeled
    rows when no validation rows are given) is returned.
    """
    config.validate()
    x = as_matrix(x, "x")
    y = np.asarray(y, dtype=np.int64)
    n_rows = x.shape[0]
    labeled = np.flatnonzero(y >= 0)
    if not len(labeled):
        raise ValueError("no labeled rows")
    if val_rows is None or not len(val_rows):
        val_rows, val_labels = labeled, y[labeled]
    val_rows = np.asarray(val_rows, dtype=np.int64)
    val_labels = np.asarray(val_labels, dtype=np.int64)
    num_classes = int(soft_labels.shape[1]) if soft_labels is not None else int(y.max()) + 1
    if config.lambda_ or config.eta:
        if soft_labels is None:
            raise ValueError("soft labels required when lambda or eta is nonzero")
        soft_labels = as_matrix(soft_labels, "soft_labels")
    if config.mu:
        if teacher_hidden is None:
            raise ValueError("teacher hidden representations required when mu is nonzero")
        teacher_hidden = as_matrix(teacher_hidden, "teacher_hidden")

    init_seq, batch_seq = np.random.SeedSequence(config.seed).spawn(2)
    model = init_student(n_content, x.shape[1] - n_content, num_classes, config,
                         np.random.default_rng(init_seq))
    batch_rng = np.random.default_rng(batch_seq)
    params = [p.copy() for p in model.params()]
    best = [p.copy() for p in params]
    best_acc = -1.0
    opt = Adam(params, lr=config.learning_rate)
    n_layers = len(model.layers)
    history = {"loss": [], "val_acc": [], "components": []}
    b = min(config.rsd_batch, n_rows)

    for epoch in range(config.epochs):
        batch = batch_rng.choice(n_rows, size=b, replace=False)
        delta = None
        if config.eta:
            current = model.with_params(params)
            yb = y[batch]
            delta = pgd_perturb(current, x[batch], yb, soft_labels[batch], config)

        tape = Tape()
        pvars = [tape.leaf(p) for p in params]
        hidden, logits = _tape_forward(tape, pvars, n_layers, x)
        l_gt = tape.cross_entropy(tape.take_rows(logits, labeled), y[labeled])
        l_sl = tape.kl_divergence(soft_labels, logits) if config.lambda_ else 0.0
        l_rsd = (_rsd_term(tape, teacher_hidden[batch], tape.take_rows(hidden, batch), pvars[-1])
                 if config.mu else 0.0)
        if config.eta:
            xa = _perturbed_input(tape, x[batch], tape.constant(delta), n_content)
            l_adv = _adv_term(tape, pvars[:-1], n_layers, xa, y[batch], soft_labels[batch])
        else:
            l_adv = 0.0
        try:
            loss = total_loss(l_gt, l_sl, l_rsd, l_adv, config)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"student training diverged at epoch {epoch}: {exc}") from None

        pred = np.argmax(logits.value[val_rows], axis=1)
        acc = float(np.mean(pred == val_labels))
        history["loss"].append(float(loss.value[0, 0]))
        history["val_acc"].append(acc)
        history["components"].append([_scalar(c) for c in (l_gt, l_sl, l_rsd, l_adv)])
        if acc > best_acc:
            best_acc = acc
            best = [p.copy() for p in params]
            history["best_epoch"] = epoch
        opt.step(grad(tape, loss, pvars))

    final = best if config.epochs else params
    out = model.with_params(final)
    out.history = history
    return out


def _scalar(c) -> float:
    return float(c.value[0, 0]) if isinstance(c, Var) else float(c)


def train_student(view: Graph, split: SplitAssignment, positions: PositionTable,
                  teacher: TeacherOutputs, config: DistillConfig) -> StudentModel:
    """Distill on the training view.

    ``positions`` and ``teacher`` must cover exactly the view's nodes (all
    nodes in the transductive setting). Model selection uses observed
    unlabeled nodes.
    """
    if split.num_nodes != view.num_nodes:
        split = split.restrict(view.node_ids)
    if len(teacher.nodes) != view.num_nodes or np.any(teacher.nodes != np.arange(view.num_nodes)):
        raise ValueError("teacher outputs must cover every node of the training view, in order")
    if len(positions) != view.num_nodes:
        raise ValueError(f"position table has {len(positions)} rows, view has {view.num_nodes}")
    x = concat_features(view.features, positions)
    y = np.full(view.num_nodes, -1, dtype=np.int64)
    y[split.labeled] = view.labels[split.labeled]
    obs = split.observed
    return fit_student(x, view.features.shape[1], y, teacher.soft_labels, teacher.hidden, config,
                       obs, view.labels[obs])


def save_student(model: StudentModel, directory, config: DistillConfig, provenance: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "student.bin"
    checkpoint.write_checkpoint(path, checkpoint.STUDENT_MAGIC, model.layers, model.rsd_transform)
    meta = {"config": config.to_json(), "n_content": model.n_content,
            "n_position": model.n_position, "provenance": provenance,
            "best_epoch": model.history.get("best_epoch", -1)}
    (directory / "student.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def load_student(directory) -> StudentModel:
    directory = Path(directory)
    layers, w_m = checkpoint.read_checkpoint(directory / "student.bin", checkpoint.STUDENT_MAGIC,
                                             with_extra=True)
    meta = json.loads((directory / "student.meta.json").read_text())
    return StudentModel(layers, w_m, meta["n_content"], meta["n_position"])


class NOSMOGClassifier(ClassifierMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_student`.

    ``X`` is the concatenated ``[content | positions]`` matrix with the first
    ``n_content`` columns being content. ``y`` uses ``-1`` for unlabeled rows.
    """

    def __init__(self, n_content=None, lambda_=1.0, mu=0.1, eta=0.1, epsilon=0.05,
                 step_size=0.01, pgd_steps=5, rsd_batch=256, learning_rate=0.01, epochs=200,
                 hidden_dim=128, num_hidden_layers=2, random_state=0):
        self.n_content = n_content
        self.lambda_ = lambda_
        self.mu = mu
        self.eta = eta
        self.epsilon = epsilon
        self.step_size = step_size
        self.pgd_steps = pgd_steps
        self.rsd_batch = rsd_batch
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.hidden_dim = hidden_dim
        self.num_hidden_layers = num_hidden_layers
        self.random_state = random_state

    def _config(self) -> DistillConfig:
        return DistillConfig(self.lambda_, self.mu, self.eta, self.epsilon, self.step_size,
                             self.pgd_steps, self.rsd_batch, self.learning_rate, self.epochs,
                             self.hidden_dim, self.num_hidden_layers, self.random_state)

    def fit(self, X, y, soft_labels=None, teacher_hidden=None, eval_set=None):
        X = check_array(X, dtype=np.float64)
        n_content = X.shape[1] if self.n_content is None else self.n_content
        val_rows, val_labels = eval_set if eval_set is not None else (None, None)
        self.model_ = fit_student(X, n_content, y, soft_labels, teacher_hidden, self._config(),
                                  val_rows, val_labels)
        self.classes_ = np.arange(self.model_.num_classes)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return student_forward(self.model_, check_array(X, dtype=np.float64))[1]

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def transform(self, X):
        check_is_fitted(self, "model_")
        return student_forward(self.model_, check_array(X, dtype=np.float64))[0]
