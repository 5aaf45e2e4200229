"""Command-line pipeline.

    graphdistill <command> [--config FILE] [--seed N] [--out DIR] [--force] [--check]
                           [--dataset sbm|PATH] [--section.key=value ...]

Commands: prepare, train-teacher, encode-positions, distill, evaluate, all,
noise-sweep, ablate, bench, validate.

Exit codes: 0 success, 1 configuration or missing-input error, 2 runtime
error, 3 failed ``--check``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import checkpoint, config as cfgmod
from .evaluation import (ABLATIONS, EvalReport, ablation_run, bench_inference, noise_sweep,
                         write_noise_curve)
from .graph_data import (SplitAssignment, generate_sbm, inject_feature_noise, load_graph,
                         load_split, make_split, save_graph, training_view)
from .pipeline import (evaluate_predictions, fit_positions, fit_teacher, run_variant,
                       teacher_predictions, view_rows)
from .position_encoding import PositionTable, load_positions, save_positions
from .student_distill import (ConfigError, concat_features, init_student, load_student,
                              save_student, student_forward, student_predict, train_student)
from .teacher_gnn import (TeacherConfig, export_teacher_outputs, init_teacher, load_teacher,
                          mean_aggregator, save_teacher, teacher_forward)

logger = logging.getLogger("graphdistill")

COMMANDS = ("prepare", "train-teacher", "encode-positions", "distill", "evaluate", "all",
            "noise-sweep", "ablate", "bench", "validate")


class MissingInput(Exception):
    pass


class CheckFailed(Exception):
    pass


# --------------------------------------------------------------------------
# artifact bookkeeping


def _hashes(paths) -> dict[str, str]:
    return {Path(p).name: checkpoint.file_sha256(p) for p in paths}


class Stage:
    """One artifact directory with a ``manifest.json`` describing how it was made."""

    def __init__(self, ctx: "Context", name: str, sections: tuple[str, ...], inputs: list[Path]):
        self.ctx = ctx
        self.name = name
        self.dir = ctx.root / name
        for p in inputs:
            if not p.is_file():
                raise MissingInput(f"{name}: required input {p} is missing (run the earlier stage first)")
        self.manifest = {
            "stage": name,
            "config_hash": ctx.cfg.hash(*sections) if sections else ctx.cfg.hash(),
            "seed": ctx.cfg.seed,
            "inputs": _hashes(inputs),
        }

    def up_to_date(self) -> bool:
        path = self.dir / "manifest.json"
        if self.ctx.force or not path.is_file():
            return False
        old = json.loads(path.read_text())
        if {k: old.get(k) for k in self.manifest} != self.manifest:
            return False
        outputs = old.get("outputs", {})
        return all((self.dir / n).is_file() and checkpoint.file_sha256(self.dir / n) == h
                   for n, h in outputs.items())

    def finish(self, outputs: list[str]) -> None:
        self.manifest["outputs"] = _hashes(self.dir / n for n in outputs)
        (self.dir / "manifest.json").write_text(json.dumps(self.manifest, indent=2, sort_keys=True))


class Context:
    def __init__(self, cfg: cfgmod.RunConfig, force: bool, check: bool):
        self.cfg = cfg
        self.force = force
        self.check = check
        self.root = Path(cfg.output) / f"run-{cfg.hash()}"

    # loaded artifacts ---------------------------------------------------

    def graph(self):
        d = self.root / "dataset"
        if not (d / "manifest.json").is_file():
            raise MissingInput(f"dataset artifacts missing at {d} (run 'prepare')")
        g = load_graph(d)
        return g, load_split(d, g.num_nodes)


def cmd_prepare(ctx: Context) -> Path:
    cfg = ctx.cfg
    inputs = []
    if cfg.dataset.path:
        src = Path(cfg.dataset.path)
        inputs = [src / n for n in ("edges.tsv", "features.csv", "labels.csv")]
        if (src / "split.json").is_file():
            inputs.append(src / "split.json")
    stage = Stage(ctx, "dataset", ("dataset", "split", "seed"), inputs)
    if stage.up_to_date():
        logger.info("dataset up to date")
        return stage.dir
    if cfg.dataset.path:
        graph = load_graph(cfg.dataset.path)
        split = load_split(cfg.dataset.path, graph.num_nodes)
    else:
        s = cfg.dataset.sbm
        graph = generate_sbm(s.blocks, s.nodes_per_block, s.p_in, s.p_out, s.feature_dim,
                             s.feature_signal, cfg.seed)
        split = None
    if split is None:
        split = make_split(graph, cfg.split.label_fraction, cfg.split.inductive_fraction, cfg.seed)
    save_graph(graph, stage.dir)
    (stage.dir / "split.json").write_text(json.dumps(split.to_json()))
    stage.finish(["edges.tsv", "features.csv", "labels.csv", "split.json"])
    return stage.dir


def cmd_train_teacher(ctx: Context) -> Path:
    data = ctx.root / "dataset"
    stage = Stage(ctx, "teacher", ("dataset", "split", "teacher", "seed"),
                  [data / "features.csv", data / "edges.tsv", data / "split.json"])
    if stage.up_to_date():
        return stage.dir
    graph, split = ctx.graph()
    model = fit_teacher(graph, split, ctx.cfg, ctx.cfg.seed)
    save_teacher(model, stage.dir)
    stage.finish(["teacher.bin", "teacher.meta.json"])
    return stage.dir


def cmd_encode_positions(ctx: Context) -> Path:
    data = ctx.root / "dataset"
    stage = Stage(ctx, "positions", ("dataset", "split", "positions", "seed"),
                  [data / "edges.tsv", data / "split.json"])
    if stage.up_to_date():
        return stage.dir
    graph, split = ctx.graph()
    table = fit_positions(graph, split, ctx.cfg, ctx.cfg.seed)
    save_positions(table, stage.dir)
    stage.finish(["positions.csv", "positions.meta.json"])
    return stage.dir


def cmd_distill(ctx: Context) -> Path:
    data, teacher_dir, pos_dir = ctx.root / "dataset", ctx.root / "teacher", ctx.root / "positions"
    stage = Stage(ctx, "student", (), [teacher_dir / "teacher.bin", pos_dir / "positions.csv",
                                       data / "features.csv", data / "split.json"])
    if stage.up_to_date():
        return stage.dir
    graph, split = ctx.graph()
    view = training_view(graph, split)
    teacher = export_teacher_outputs(load_teacher(teacher_dir), view)
    table = load_positions(pos_dir)
    dcfg = cfgmod.distill_config(ctx.cfg)
    model = train_student(view, split, view_rows(table, split), teacher, dcfg)
    provenance = {
        "dataset": str(ctx.cfg.dataset.path or "sbm"),
        "dataset_hashes": _hashes([data / "features.csv", data / "edges.tsv", data / "labels.csv"]),
        "teacher_checkpoint_sha256": checkpoint.file_sha256(teacher_dir / "teacher.bin"),
        "positions_sha256": checkpoint.file_sha256(pos_dir / "positions.csv"),
    }
    save_student(model, stage.dir, dcfg, provenance)
    stage.finish(["student.bin", "student.meta.json"])
    return stage.dir


def _latency_dict(stats) -> dict:
    d = asdict(stats)
    d.pop("samples_us")
    return d


def cmd_evaluate(ctx: Context) -> Path:
    data, student_dir, pos_dir = ctx.root / "dataset", ctx.root / "student", ctx.root / "positions"
    stage = Stage(ctx, "report", (), [student_dir / "student.bin", pos_dir / "positions.csv",
                                      data / "split.json"])
    graph, split = ctx.graph()
    model = load_student(student_dir)
    table = load_positions(pos_dir)
    pred = student_predict(model, graph.features, table)
    res = evaluate_predictions(pred, graph, split)
    x = concat_features(graph.features, table)
    stats = bench_inference(lambda: student_forward(model, x)[1], ctx.cfg.evaluation.repeats,
                            ctx.cfg.evaluation.warmup)
    report = EvalReport(
        accuracy_tran=res.accuracy_tran, accuracy_ind=res.accuracy_ind,
        accuracy_prod=res.accuracy_prod, cut_value=res.cut_value, latency=_latency_dict(stats),
        metadata={
            "seed": ctx.cfg.seed, "config_hash": ctx.cfg.hash(),
            "prod_weighting": "node-count weighted mean of ind and tran accuracy",
            "n_tran": int(len(split.observed)), "n_ind": int(len(split.inductive)),
            "student_sha256": checkpoint.file_sha256(student_dir / "student.bin"),
        },
    )
    report.write(stage.dir)
    stage.finish(["report.json", "report.csv"])
    if ctx.check:
        accs = [a for a in (res.accuracy_tran, res.accuracy_ind) if a is not None]
        if not min(accs) - 1e-12 <= res.accuracy_prod <= max(accs) + 1e-12:
            raise CheckFailed("prod accuracy outside [ind, tran]")
    print(json.dumps({k: v for k, v in report.to_json().items() if k != "latency"}, indent=2))
    return stage.dir


def _noisy_runner(ctx: Context, graph, split, variant: str):
    positions = {}

    def run(alpha: float, seed: int) -> float:
        noisy = graph.with_features(inject_feature_noise(graph.features, alpha, seed))
        if seed not in positions:
            positions[seed] = fit_positions(graph, split, ctx.cfg, seed)
        return run_variant(noisy, split, ctx.cfg, seed, variant, positions=positions[seed]).accuracy_prod

    return run


def cmd_noise_sweep(ctx: Context) -> Path:
    cmd_prepare(ctx)
    graph, split = ctx.graph()
    stage = Stage(ctx, "noise", (), [ctx.root / "dataset" / "features.csv"])
    if stage.up_to_date():
        return stage.dir
    e = ctx.cfg.evaluation
    stage.dir.mkdir(parents=True, exist_ok=True)
    curves = {}
    for variant in ("nosmog", "mlp"):
        curves[variant] = noise_sweep(_noisy_runner(ctx, graph, split, variant), e.alphas, e.seeds)
        write_noise_curve(curves[variant], stage.dir / f"noise_curve_{variant}.csv")
    write_noise_curve(curves["nosmog"], stage.dir / "noise_curve.csv")
    stage.finish(["noise_curve.csv", "noise_curve_nosmog.csv", "noise_curve_mlp.csv"])
    for (a, m, s), (_, m2, s2) in zip(curves["nosmog"], curves["mlp"]):
        print(f"alpha={a:.2f}  nosmog={m:.4f}+-{s:.4f}  mlp={m2:.4f}+-{s2:.4f}")
    if ctx.check:
        if len(curves["nosmog"]) != len(e.alphas):
            raise CheckFailed("noise curve length differs from number of alphas")
    return stage.dir


def cmd_ablate(ctx: Context) -> Path:
    cmd_prepare(ctx)
    graph, split = ctx.graph()
    stage = Stage(ctx, "ablation", (), [ctx.root / "dataset" / "features.csv"])
    if stage.up_to_date():
        return stage.dir
    teachers, positions = {}, {}
    view = training_view(graph, split)

    def run(variant, seed):
        if seed not in teachers:
            teachers[seed] = export_teacher_outputs(fit_teacher(graph, split, ctx.cfg, seed), view)
            positions[seed] = fit_positions(graph, split, ctx.cfg, seed)
        return run_variant(graph, split, ctx.cfg, seed, variant, teachers[seed],
                           positions[seed]).accuracy_prod

    table = ablation_run(run, ctx.cfg.evaluation.seeds)
    stage.dir.mkdir(parents=True, exist_ok=True)
    with open(stage.dir / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "mean_acc", "std_acc"])
        for v in ABLATIONS:
            w.writerow([v, repr(table[v][0]), repr(table[v][1])])
    (stage.dir / "ablation.json").write_text(json.dumps(table, indent=2, sort_keys=True))
    stage.finish(["ablation.csv", "ablation.json"])
    for v in ABLATIONS:
        print(f"{v:10s} {table[v][0]:.4f} +- {table[v][1]:.4f}")
    if ctx.check and len(table) != 4:
        raise CheckFailed("ablation table must have 4 rows")
    return stage.dir


def cmd_bench(ctx: Context) -> Path:
    """Student vs 2-layer teacher full-graph latency on a large SBM (untrained weights)."""
    cfg = ctx.cfg
    s, e = cfg.dataset.sbm, cfg.evaluation
    graph = generate_sbm(s.blocks, e.bench_nodes_per_block, s.p_in, s.p_out, s.feature_dim,
                         s.feature_signal, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    teacher = init_teacher(s.feature_dim, graph.num_classes, TeacherConfig(**asdict(cfg.teacher)), cfg.seed)
    student = init_student(s.feature_dim, cfg.positions.dim, graph.num_classes,
                           cfgmod.distill_config(cfg), rng)
    x = concat_features(graph.features, rng.standard_normal((graph.num_nodes, cfg.positions.dim)))
    agg = mean_aggregator(graph)
    t_stats = bench_inference(lambda: teacher_forward(teacher, graph, agg)[1], e.repeats, e.warmup)
    s_stats = bench_inference(lambda: student_forward(student, x)[1], e.repeats, e.warmup)
    ratio = t_stats.mean_us / s_stats.mean_us
    out = {"num_nodes": graph.num_nodes, "num_edges": graph.num_edges,
           "teacher": _latency_dict(t_stats), "student": _latency_dict(s_stats), "speedup": ratio}
    d = ctx.root / "bench"
    d.mkdir(parents=True, exist_ok=True)
    (d / "bench.json").write_text(json.dumps(out, indent=2, sort_keys=True))
    print(f"teacher {t_stats.mean_us / 1e3:.2f} ms  student {s_stats.mean_us / 1e3:.2f} ms  "
          f"speedup {ratio:.1f}x  (N={graph.num_nodes}, E={graph.num_edges})")
    if ctx.check and ratio < 10.0:
        raise CheckFailed(f"student speedup {ratio:.1f}x below 10x")
    return d


def cmd_all(ctx: Context) -> Path:
    cmd_prepare(ctx)
    cmd_train_teacher(ctx)
    cmd_encode_positions(ctx)
    cmd_distill(ctx)
    return cmd_evaluate(ctx)


HANDLERS = {
    "prepare": cmd_prepare, "train-teacher": cmd_train_teacher,
    "encode-positions": cmd_encode_positions, "distill": cmd_distill, "evaluate": cmd_evaluate,
    "all": cmd_all, "noise-sweep": cmd_noise_sweep, "ablate": cmd_ablate, "bench": cmd_bench,
}


# --------------------------------------------------------------------------
# argument handling


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _split_overrides(extra: list[str]) -> dict[str, object]:
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok.split("=", 1)[0]:
            raise ConfigError(tok, "unrecognized argument")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ConfigError(key, "missing value")
            i += 1
            val = extra[i]
        out[key] = _parse_value(val)
        i += 1
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphdistill", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("config_file", nargs="?", help="JSON config (required for 'validate')")
    p.add_argument("--config", dest="config_opt", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--dataset", help="'sbm' or a dataset directory")
    p.add_argument("--force", action="store_true", help="ignore up-to-date manifests")
    p.add_argument("--check", action="store_true", help="exit 3 when result checks fail")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config_path = args.config_opt or args.config_file
    try:
        if args.command == "validate" and not config_path:
            raise ConfigError("config_file", "validate needs a config file")
        cfg = cfgmod.load_config(config_path) if config_path else cfgmod.parse_config({})
        overrides = _split_overrides(extra)
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["output"] = args.out
        if args.dataset is not None:
            overrides["dataset.path"] = None if args.dataset == "sbm" else args.dataset
        cfg = cfgmod.apply_overrides(cfg, overrides)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.command == "validate":
        print(json.dumps(cfg.to_json(), indent=2, sort_keys=True))
        return 0
    ctx = Context(cfg, args.force, args.check)
    try:
        out = HANDLERS[args.command](ctx)
    except MissingInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        logger.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    logger.info("artifacts in %s", out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
