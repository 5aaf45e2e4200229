"""Metrics, noise sweeps, ablations and inference latency measurement."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .graph_data import Graph


def accuracy(predictions, labels, node_set=None) -> float:
    """Fraction of ``node_set`` whose prediction matches the label."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    nodes = np.arange(len(labels)) if node_set is None else np.asarray(node_set, dtype=np.int64)
    if len(nodes) == 0:
        raise ValueError("accuracy over an empty node set")
    return float(np.mean(predictions[nodes] == labels[nodes]))


def cut_value(predictions, graph: Graph) -> float:
    """``tr(Y^T A Y) / tr(Y^T D Y)`` for one-hot predictions ``Y``, by sparse edge scan.

    Equals the fraction of ordered adjacent pairs whose endpoints share a
    predicted class.
    """
    if len(graph.indices) == 0:
        raise ValueError("cut value undefined on a graph without edges")
    pred = np.asarray(predictions)
    src = np.repeat(np.arange(graph.num_nodes), graph.degrees)
    same = int(np.count_nonzero(pred[src] == pred[graph.indices]))
    return float(same) / float(graph.degrees.sum())


def prod_accuracy(acc_ind: float, n_ind: int, acc_tran: float, n_tran: int) -> float:
    """Node-count weighted interpolation of inductive and transductive accuracy."""
    return (n_ind * acc_ind + n_tran * acc_tran) / (n_ind + n_tran)


@dataclass
class LatencyStats:
    mean_us: float
    p50_us: float
    p95_us: float
    repeats: int
    warmup: int
    checksum: str
    samples_us: list[float] = field(default_factory=list, repr=False)


@dataclass
class EvalReport:
    accuracy_tran: float
    accuracy_ind: float | None
    accuracy_prod: float
    cut_value: float
    latency: dict | None = None
    noise_curve: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        accs = [a for a in (self.accuracy_tran, self.accuracy_ind, self.accuracy_prod) if a is not None]
        if any(not 0.0 <= a <= 1.0 for a in accs) or not 0.0 <= self.cut_value <= 1.0:
            raise ValueError("accuracies and cut value must lie in [0, 1]")

    def to_json(self) -> dict:
        return asdict(self)

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))
        with open(directory / "report.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            for name in ("accuracy_tran", "accuracy_ind", "accuracy_prod", "cut_value"):
                w.writerow([name, "" if getattr(self, name) is None else repr(getattr(self, name))])
            if self.latency:
                for k in ("mean_us", "p50_us", "p95_us"):
                    w.writerow([f"latency_{k}", repr(self.latency[k])])
        if self.noise_curve:
            write_noise_curve(self.noise_curve, directory / "noise_curve.csv")


def write_noise_curve(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "mean_acc", "std_acc"])
        for alpha, mean, std in curve:
            w.writerow([repr(float(alpha)), repr(float(mean)), repr(float(std))])


def max_workers() -> int:
    """Parallelism cap for runners, from ``GRAPHDISTILL_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("GRAPHDISTILL_THREADS", "1")))
    except ValueError:
        return 1


def _fan_out(fn, jobs):
    workers = min(max_workers(), len(jobs)) or 1
    if workers == 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


class RunError(RuntimeError):
    pass


def _mean_std(r: np.ndarray) -> tuple[float, float]:
    # shifted by the first sample so identical runs reproduce their value exactly
    d = r - r[0]
    return float(r[0] + d.mean()), float(d.std())


def noise_sweep(pipeline: Callable[[float, int], float], alphas: Sequence[float],
                seeds: Sequence[int]) -> list[tuple[float, float, float]]:
    """Run ``pipeline(alpha, seed) -> accuracy`` on every pair; mean and std per alpha.

    The pipeline is expected to noise the content features, retrain and
    return test accuracy.
    """
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"alpha {a} outside [0, 1]")

    def job(alpha, seed):
        try:
            return pipeline(alpha, seed)
        except Exception as exc:
            raise RunError(f"run failed at alpha={alpha}, seed={seed}: {exc}") from exc

    jobs = [(a, s) for a in alphas for s in seeds]
    results = np.array(_fan_out(job, jobs), dtype=np.float64).reshape(len(alphas), len(seeds))
    return [(float(a), *_mean_std(r)) for a, r in zip(alphas, results)]


ABLATIONS = ("full", "w/o POS", "w/o RSD", "w/o ADV")


def ablation_run(run: Callable[[str, int], float], seeds: Sequence[int]) -> dict[str, tuple[float, float]]:
    """Mean and std accuracy for the full model and each single-component removal.

    ``run(variant, seed)`` trains and evaluates one variant; the variant names
    are :data:`ABLATIONS`.
    """
    jobs = [(v, s) for v in ABLATIONS for s in seeds]
    results = np.array(_fan_out(run, jobs), dtype=np.float64).reshape(len(ABLATIONS), len(seeds))
    return {v: _mean_std(r) for v, r in zip(ABLATIONS, results)}


def bench_inference(forward: Callable[[], np.ndarray], repeats: int = 50, warmup: int = 3) -> LatencyStats:
    """Time ``forward()`` (one full-graph pass returning logits) ``repeats`` times.

    Warmup calls are not recorded. Predictions of the last call are hashed
    so the work cannot be optimized away and runs can be compared.
    """
    if repeats < 10:
        raise ValueError("repeats must be >= 10")
    for _ in range(warmup):
        forward()
    samples = []
    logits = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        logits = forward()
        samples.append((time.perf_counter() - t0) * 1e6)
    pred = np.argmax(logits, axis=1).astype("<i8")
    s = np.asarray(samples)
    return LatencyStats(
        mean_us=float(s.mean()), p50_us=float(np.percentile(s, 50)),
        p95_us=float(np.percentile(s, 95)), repeats=repeats, warmup=warmup,
        checksum=hashlib.sha256(pred.tobytes()).hexdigest(), samples_us=samples,
    )
