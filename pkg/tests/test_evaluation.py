import csv
import json
import threading

import numpy as np
import pytest

from graphdistill.evaluation import (ABLATIONS, EvalReport, RunError, ablation_run, accuracy,
                                     bench_inference, cut_value, max_workers, noise_sweep,
                                     prod_accuracy)
from graphdistill.graph_data import Graph

from oracles import dense_cut_value


def g_from(n, edges):
    return Graph.from_edges(n, edges, np.zeros((n, 1)), np.zeros(n, dtype=int), num_classes=1)


# accuracy -------------------------------------------------------------------


def test_accuracy_examples():
    assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert accuracy([1, 0], [0, 1]) == 0.0
    assert accuracy([0, 1, 1, 1], [0, 1, 1, 0]) == 0.75


def test_accuracy_node_set():
    assert accuracy([0, 1, 1, 1], [0, 1, 1, 0], [0, 3]) == 0.5


def test_accuracy_empty_set():
    with pytest.raises(ValueError, match="empty"):
        accuracy([0], [0], [])


def test_prod_interpolation():
    assert prod_accuracy(0.5, 20, 1.0, 80) == pytest.approx(0.9)


# cut value ------------------------------------------------------------------


def test_cut_value_component_constant():
    g = g_from(6, [(0, 1), (1, 2), (3, 4), (4, 5), (3, 5)])
    assert cut_value([2, 2, 2, 0, 0, 0], g) == 1.0


def test_cut_value_single_cut_edge():
    assert cut_value([0, 1], g_from(2, [(0, 1)])) == 0.0


def test_cut_value_edgeless_rejected():
    with pytest.raises(ValueError, match="edges"):
        cut_value([0, 0], g_from(2, []))


@pytest.mark.parametrize("seed", range(100))
def test_cut_value_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    n = 50 if seed == 0 else int(rng.integers(2, 30))
    iu = np.triu_indices(n, 1)
    mask = rng.random(len(iu[0])) < rng.uniform(0.05, 0.5)
    edges = np.stack([iu[0][mask], iu[1][mask]], axis=1)
    if not len(edges):
        edges = np.array([[0, 1]])
    pred = rng.integers(0, int(rng.integers(1, 5)), n)
    assert cut_value(pred, g_from(n, edges)) == dense_cut_value(pred, edges.tolist(), n)


# report ---------------------------------------------------------------------


def test_report_files(tmp_path):
    r = EvalReport(0.9, 0.8, 0.88, 0.95, noise_curve=[(0.0, 0.9, 0.01), (1.0, 0.5, 0.1)],
                   metadata={"seed": 1})
    r.write(tmp_path)
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["accuracy_prod"] == 0.88 and data["metadata"]["seed"] == 1
    rows = list(csv.reader(open(tmp_path / "noise_curve.csv")))
    assert rows[0] == ["alpha", "mean_acc", "std_acc"] and len(rows) == 3


def test_report_range_checked():
    with pytest.raises(ValueError):
        EvalReport(1.2, None, 0.5, 0.5)


# runners --------------------------------------------------------------------


def test_noise_sweep_clean_identity():
    curve = noise_sweep(lambda a, s: 0.8 if a == 0 else 0.1, [0.0], [0, 1, 2])
    assert curve == [(0.0, 0.8, 0.0)]


def test_noise_sweep_length_and_stats():
    curve = noise_sweep(lambda a, s: 1.0 - a * 0.5 + 0.01 * s, [0.0, 0.5, 1.0], [0, 2])
    assert len(curve) == 3
    assert curve[1] == pytest.approx((0.5, 0.76, 0.01))


def test_noise_sweep_failure_names_run():
    def bad(a, s):
        if s == 3:
            raise RuntimeError("boom")
        return 0.5

    with pytest.raises(RunError, match="alpha=0.5, seed=3"):
        noise_sweep(bad, [0.5], [1, 3])


def test_noise_sweep_bad_alpha():
    with pytest.raises(ValueError):
        noise_sweep(lambda a, s: 0.0, [1.5], [0])


def test_ablation_table_has_four_rows():
    table = ablation_run(lambda v, s: ABLATIONS.index(v) / 10 + s / 100, [0, 1])
    assert list(table) == list(ABLATIONS)
    assert table["w/o RSD"] == pytest.approx((0.205, 0.005))


def test_runner_threads_give_same_results(monkeypatch):
    seen = set()

    def run(a, s):
        seen.add(threading.get_ident())
        return a + s

    monkeypatch.setenv("GRAPHDISTILL_THREADS", "1")
    serial = noise_sweep(run, [0.0, 1.0], [0, 1, 2, 3])
    monkeypatch.setenv("GRAPHDISTILL_THREADS", "4")
    assert max_workers() == 4
    assert noise_sweep(run, [0.0, 1.0], [0, 1, 2, 3]) == serial


def test_max_workers_default(monkeypatch):
    monkeypatch.delenv("GRAPHDISTILL_THREADS", raising=False)
    assert max_workers() == 1
    monkeypatch.setenv("GRAPHDISTILL_THREADS", "junk")
    assert max_workers() == 1


# latency ----------------------------------------------------------------------


def test_bench_records_requested_samples():
    logits = np.random.default_rng(0).standard_normal((50, 3))
    stats = bench_inference(lambda: logits, repeats=10, warmup=2)
    assert len(stats.samples_us) == 10 and stats.repeats == 10
    assert stats.p50_us <= stats.p95_us


def test_bench_checksum_stable():
    logits = np.random.default_rng(0).standard_normal((50, 3))
    assert bench_inference(lambda: logits, 10).checksum == bench_inference(lambda: logits.copy(), 12).checksum


def test_bench_min_repeats():
    with pytest.raises(ValueError, match="repeats"):
        bench_inference(lambda: np.zeros((1, 1)), repeats=5)
