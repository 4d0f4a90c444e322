"""Command-line pipeline: synth -> validate -> build-graph -> make-task -> sample
-> train -> predict -> evaluate, plus `e2e` running the whole chain.

Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
Every run writes a machine-readable run manifest (content hashes of the
inputs, the effective seed, package version) into the output directory.
Flags override config-file values. `--threads` (or the REL_THREADS
environment variable) caps worker counts for table loading.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .encoder import RowEncoder
from .graph import NodeRef, build_entity_graph, load_graph, save_graph
from .metrics import EvaluationError, evaluate
from .model import ModelConfig, ModelParams, predict, train
from .sampler import SamplerConfig, sample
from .schema import build_schema_graph, to_dot
from .store import StoreError, format_time, load_database, row_count_summary, validate
from .synth import generate, synth_config_from_json
from .tasks import (
    DAY,
    SplitConfig,
    TaskError,
    TaskSpec,
    generate_training_table,
    read_table,
    split_config_from_json,
    task_spec_from_json,
    write_predictions,
    write_table,
)


class CliError(Exception):
    """Fatal pipeline error; message goes to stderr, exit code 1."""


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_run_manifest(target, command: str, args: dict, inputs: dict, seed) -> None:
    """Record input hashes, seed and version next to the run's outputs.

    Directory targets get ``run_manifest.json`` inside; file targets get a
    sibling ``<name>.manifest.json``.
    """
    target = Path(target)
    if target.suffix:
        path = target.with_name(target.name + ".manifest.json")
        path.parent.mkdir(parents=True, exist_ok=True)
    else:
        target.mkdir(parents=True, exist_ok=True)
        path = target / "run_manifest.json"
    doc = {
        "command": command,
        "arguments": {k: str(v) for k, v in args.items() if v is not None and k != "func"},
        "inputs": {str(p): _sha256(p) for p in inputs.values() if p and Path(p).exists()},
        "seed": seed,
        "version": __version__,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", "utf-8")


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("REL_THREADS")
    return max(1, int(env)) if env else 1


def _load_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _model_configs(doc: dict, task: TaskSpec, seed: int | None) -> tuple[ModelConfig, SamplerConfig, int]:
    """Build model and sampler configs from one JSON document plus the task."""
    if seed is None:
        seed = int(doc.get("seed", 0))
    fanouts = tuple(doc.get("fanouts", (10, 10)))
    half_life = doc.get("half_life_days")
    model_cfg = ModelConfig(
        layers=int(doc.get("layers", len(fanouts))),
        hidden_dim=doc.get("hidden_dim", 32),
        aggregator=doc.get("aggregator", "mean"),
        head="node_binary" if task.task_kind == "binary_classification" else "node_regression",
        lr=float(doc.get("lr", 1e-2)),
        steps=int(doc.get("steps", 200)),
        batch_size=int(doc.get("batch_size", 32)),
        seed=seed,
    )
    sampler_cfg = SamplerConfig(
        hops=model_cfg.layers,
        fanouts=fanouts,
        strategy=doc.get("strategy", "uniform"),
        half_life=float(half_life) * DAY if half_life is not None else None,
        rng_seed=seed,
    )
    return model_cfg, sampler_cfg, int(doc.get("text_dim", 16))


def _default_split(task: TaskSpec, t_max: int) -> SplitConfig:
    """Latest split the data horizon allows: test window ends at the last timestamp."""
    t_test = t_max - task.window
    return SplitConfig(t_val=t_test - task.window, t_test=t_test, train_strides=3)


def _cmd_synth(args) -> int:
    cfg = synth_config_from_json(args.config)
    if args.seed is not None:
        cfg = replace(cfg, rng_seed=args.seed)
    manifest = generate(cfg, args.out)
    _write_run_manifest(args.out, "synth", vars(args), {"config": args.config}, cfg.rng_seed)
    print(f"wrote {manifest}")
    return 0


def _cmd_validate(args) -> int:
    db = load_database(args.manifest, args.data_dir, check_integrity=False, threads=_threads(args))
    report = validate(db)
    print(report.summary())
    for (table, column), rate in sorted(report.null_rates.items()):
        if rate > 0:
            print(f"  null rate {table}.{column}: {rate:.4f}")
    return 1 if report else 0


def _cmd_build_graph(args) -> int:
    db = load_database(args.manifest, args.data_dir, threads=_threads(args))
    sg = build_schema_graph(db)
    g = build_entity_graph(db, sg)
    save_graph(g, args.out)
    if args.dot:
        Path(args.dot).write_text(to_dot(sg), encoding="utf-8")
    _write_run_manifest(args.out, "build-graph", vars(args), {"manifest": args.manifest}, None)
    counts = row_count_summary(db)
    print(f"graph: {g.n_nodes} nodes, {g.n_edges} directed edges, tables {counts}")
    return 0


def _cmd_make_task(args) -> int:
    db = load_database(args.manifest, args.data_dir, threads=_threads(args))
    task = task_spec_from_json(args.task)
    split = split_config_from_json(args.split)
    tables = generate_training_table(db, task, split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, tt in tables.items():
        write_table(tt, out / f"{task.name}_{name}.csv")
        print(f"{name}: {len(tt)} examples")
    _write_run_manifest(out, "make-task", vars(args), {"task": args.task, "split": args.split}, None)
    return 0


def _cmd_sample(args) -> int:
    g = load_graph(args.graph)
    task = task_spec_from_json(args.task)
    table = read_table(args.table, task)
    doc = _load_json(args.sampler)
    half_life = doc.get("half_life_days")
    cfg = SamplerConfig(
        hops=int(doc.get("hops", len(doc.get("fanouts", (10, 10))))),
        fanouts=tuple(doc.get("fanouts", (10, 10))),
        strategy=doc.get("strategy", "uniform"),
        half_life=float(half_life) * DAY if half_life is not None else None,
        rng_seed=args.seed if args.seed is not None else int(doc.get("rng_seed", 0)),
    )
    key_to_id = {k: i for i, k in enumerate(g.keys[task.entity_table])}
    limit = args.limit if args.limit is not None else len(table.examples)
    with open(args.out, "w", encoding="utf-8") as fh:
        for i, ex in enumerate(table.examples[:limit]):
            local = key_to_id.get(ex.keys[0])
            if local is None:
                raise CliError(f"unknown entity key {ex.keys[0]!r}")
            cg = sample(g, NodeRef(task.entity_table, local), ex.t, cfg, stream=i)
            fh.write(cg.to_json() + "\n")
    _write_run_manifest(
        args.out, "sample", vars(args),
        {"graph": args.graph, "task": args.task, "table": args.table, "sampler": args.sampler},
        cfg.rng_seed,
    )
    print(f"wrote {min(limit, len(table.examples))} computation graphs to {args.out}")
    return 0


def _train_pipeline(db, task, split, model_doc, seed):
    sg = build_schema_graph(db)
    g = build_entity_graph(db, sg)
    tables = generate_training_table(db, task, split)
    model_cfg, sampler_cfg, text_dim = _model_configs(model_doc, task, seed)
    encoder = RowEncoder(out_dim=model_cfg.hidden_dim, text_dim=text_dim, seed=model_cfg.seed)
    encoder.fit(db, split.t_val)
    params, curve = train(db, g, encoder, tables["train"], model_cfg, sampler_cfg)
    return g, tables, encoder, params, curve, model_cfg, sampler_cfg


def _cmd_train(args) -> int:
    db = load_database(args.manifest, args.data_dir, threads=_threads(args))
    task = task_spec_from_json(args.task)
    split = split_config_from_json(args.split)
    model_doc = _load_json(args.model) if args.model else {}
    g, tables, encoder, params, curve, model_cfg, sampler_cfg = _train_pipeline(
        db, task, split, model_doc, args.seed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config_doc = {"model": model_doc, "seed": model_cfg.seed, "task": task.name}
    params.save(out / "params.bin", config=config_doc)
    encoder.save(out / "encoder.bin")
    for name, tt in tables.items():
        write_table(tt, out / f"{task.name}_{name}.csv")
    (out / "loss_curve.json").write_text(json.dumps(curve) + "\n", "utf-8")
    _write_run_manifest(
        out, "train", vars(args),
        {"task": args.task, "split": args.split, "model": args.model}, model_cfg.seed,
    )
    print(f"final loss {curve[-1]:.6f} after {len(curve)} steps; params at {out / 'params.bin'}")
    return 0


def _cmd_predict(args) -> int:
    db = load_database(args.manifest, args.data_dir, threads=_threads(args))
    task = task_spec_from_json(args.task)
    g = build_entity_graph(db, build_schema_graph(db))
    params, config_doc = ModelParams.load(args.params)
    encoder = RowEncoder.load(args.encoder)
    model_cfg, sampler_cfg, _ = _model_configs(config_doc.get("model", {}), task, config_doc.get("seed"))
    table = read_table(args.table, task)
    preds = predict(params, model_cfg, sampler_cfg, g, encoder, db, table)
    write_predictions(args.out, table, preds)
    _write_run_manifest(
        args.out, "predict", vars(args),
        {"task": args.task, "params": args.params, "encoder": args.encoder, "table": args.table},
        config_doc.get("seed"),
    )
    print(f"wrote {len(preds)} predictions to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    task = task_spec_from_json(args.task)
    truth = read_table(args.truth, task)
    report = evaluate(task, truth, args.pred)
    print(report.to_json())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", "utf-8")
        _write_run_manifest(
            args.out, "evaluate", vars(args),
            {"task": args.task, "truth": args.truth, "pred": args.pred}, None,
        )
    return 0


def _cmd_e2e(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    synth_cfg = synth_config_from_json(args.synth_config)
    if args.seed is not None:
        synth_cfg = replace(synth_cfg, rng_seed=args.seed)
    data_dir = out / "data"
    manifest = generate(synth_cfg, data_dir)

    db = load_database(manifest, data_dir, check_integrity=False, threads=_threads(args))
    report = validate(db)
    if report:
        print(report.summary(), file=sys.stderr)
        return 1

    task = task_spec_from_json(args.task)
    split = split_config_from_json(args.split) if args.split else _default_split(task, db.max_time())
    model_doc = _load_json(args.model) if args.model else {}
    g, tables, encoder, params, curve, model_cfg, sampler_cfg = _train_pipeline(
        db, task, split, model_doc, args.seed
    )
    save_graph(g, out / "graph.bin")
    params.save(out / "params.bin", config={"model": model_doc, "seed": model_cfg.seed, "task": task.name})
    encoder.save(out / "encoder.bin")
    (out / "loss_curve.json").write_text(json.dumps(curve) + "\n", "utf-8")

    reports = {}
    for name in ("train", "val", "test"):
        write_table(tables[name], out / f"{task.name}_{name}.csv")
    for name in ("val", "test"):
        preds = predict(params, model_cfg, sampler_cfg, g, encoder, db, tables[name])
        pred_path = out / f"predictions_{name}.csv"
        write_predictions(pred_path, tables[name], preds)
        reports[name] = evaluate(task, tables[name], pred_path)
        print(f"{name}: {reports[name].to_json()}")
    (out / "eval_report.json").write_text(
        json.dumps({name: json.loads(r.to_json()) for name, r in reports.items()}, indent=2) + "\n", "utf-8"
    )
    _write_run_manifest(
        out, "e2e", vars(args),
        {"synth_config": args.synth_config, "task": args.task, "split": args.split, "model": args.model},
        args.seed if args.seed is not None else synth_cfg.rng_seed,
    )
    print(f"t_val={format_time(split.t_val)} t_test={format_time(split.t_test)}; outputs in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relgraph", description=__doc__)
    parser.add_argument("--threads", type=int, default=None, help="worker cap (default: REL_THREADS or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic database")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("validate", help="check referential integrity and report diagnostics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--data-dir", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("build-graph", help="materialize the entity graph snapshot")
    p.add_argument("--manifest", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dot", default=None, help="also write the schema graph as DOT")
    p.set_defaults(func=_cmd_build_graph)

    p = sub.add_parser("make-task", help="generate train/val/test training tables")
    p.add_argument("--manifest", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_make_task)

    p = sub.add_parser("sample", help="emit computation graphs as JSON lines")
    p.add_argument("--graph", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--sampler", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("train", help="train a model on a task")
    p.add_argument("--manifest", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="write predictions for a training table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score a prediction file against a truth table")
    p.add_argument("--task", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("e2e", help="synth + validate + graph + task + train + predict + evaluate")
    p.add_argument("--synth-config", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_e2e)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (StoreError, TaskError, EvaluationError, CliError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
