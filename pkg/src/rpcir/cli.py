"""``rpcir`` command line: validate, stats, train, eval, rules, sweep, gradcheck, synth.

Exit status: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .evaluator import CompatibilityError, evaluate
from .kg import DataError, InductiveSplit, ind_dir_for, load_split, save_split, validate_inductive_split, with_inverse
from .kernels import BACKEND
from .model import ENCODERS, ModelConfig, RPCIRModel
from .rules import extract_rules, format_rule, rule_stats, write_rules_tsv
from .subgraph import EntityLookupError
from .trainer import (
    ABLATIONS,
    NEGATIVE_PATH_MODES,
    ExampleBuilder,
    NumericError,
    TrainConfig,
    default_lambdas,
    load_checkpoint,
    model_gradient_check,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("rpcir")

# flag name -> (config section, field)
_OVERRIDES = {
    "layers": ("model", "num_layers"),
    "dim": ("model", "dim"),
    "k": ("model", "k"),
    "lmax": ("model", "max_path_len"),
    "encoder": ("model", "path_encoder"),
    "edge_dropout": ("model", "edge_dropout"),
    "margin": ("train", "margin"),
    "lambda1": ("train", "lambda1"),
    "lambda2": ("train", "lambda2"),
    "lr": ("train", "learning_rate"),
    "batch_size": ("train", "batch_size"),
    "epochs": ("train", "epochs"),
    "seed": ("train", "seed"),
    "ablation": ("train", "ablation"),
    "negative_paths": ("train", "negative_paths"),
    "threads": ("train", "threads"),
}


class UsageError(Exception):
    pass


def version_string() -> str:
    """``git describe``-style version of the source tree, or the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=here,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def resolve_dataset(name: str, data_root: str | None) -> Path:
    p = Path(name)
    if p.exists():
        return p
    root = Path(data_root or os.environ.get("RPCIR_DATA", "data"))
    if (root / name).exists():
        return root / name
    raise DataError(f"dataset {name!r} not found (looked in . and {root})")


def _load(args) -> tuple[InductiveSplit, Path]:
    d = resolve_dataset(args.dataset, args.data_root)
    return load_split(d, getattr(args, "ind_dir", None)), d


def write_manifest(out_dir, command: str, argv, extra: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    body = {
        "command": command,
        "argv": list(argv),
        "version": version_string(),
        "kernel_backend": BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    body.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _emit(obj, out_dir=None, filename=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    print(text)
    if out_dir is not None and filename:
        (Path(out_dir) / filename).write_text(text + "\n")


def build_configs(args, dataset_name: str = "") -> tuple[ModelConfig, TrainConfig]:
    """Defaults, then the ``--config`` JSON file, then explicit flags."""
    sections = {"model": {}, "train": {}}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except FileNotFoundError as exc:
            raise DataError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc}") from exc
        for key in ("model", "train"):
            sections[key].update(data.get(key, {}))
    if "lambda1" not in sections["train"] and "lambda2" not in sections["train"]:
        sections["train"]["lambda1"], sections["train"]["lambda2"] = default_lambdas(dataset_name)
    for flag, (section, field) in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            sections[section][field] = value
    if sections["train"].get("threads") is None:
        sections["train"]["threads"] = int(os.environ.get("RPCIR_THREADS", "1"))
    try:
        return ModelConfig.from_dict(sections["model"]), TrainConfig.from_dict(sections["train"])
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> int:
    split, d = _load(args)
    report = validate_inductive_split(split)
    report["counts"] = {
        "train": {
            "triples": len(split.train_graph),
            "entities": split.train_graph.num_entities,
            "relations": split.train_graph.num_base_relations,
        },
        "ind_test": {
            "triples": len(split.ind_test_graph),
            "entities": split.ind_test_graph.num_entities,
            "relations": len(set(split.ind_test_graph.array[:, 1].tolist())),
        },
        "valid_targets": len(split.valid_targets),
        "test_targets": len(split.test_targets),
    }
    if args.output_dir:
        write_manifest(args.output_dir, "validate", args.argv, {"dataset": str(d)})
    _emit(report, args.output_dir, "validate.json")
    return EXIT_OK if report["passed"] else EXIT_DATA


def cmd_stats(args) -> int:
    split, d = _load(args)
    graphs = {"train": split.train_graph, "ind_test": split.ind_test_graph}
    targets = {"train": split.train_targets, "ind_test": split.test_targets}
    if args.limit is not None:
        targets = {k: list(v)[: args.limit] for k, v in targets.items()}
    summary = {"dataset": split.name, "k": args.k, "max_path_len": args.lmax}
    summary["versions"] = rule_stats(graphs, targets, args.k, args.lmax)
    summary["mean_paths"] = summary["versions"]["train"]["mean_paths"]
    if args.output_dir:
        write_manifest(args.output_dir, "stats", args.argv, {"dataset": str(d), "k": args.k, "lmax": args.lmax})
    _emit(summary, args.output_dir, "stats.json")
    return EXIT_OK


def cmd_train(args) -> int:
    split, d = _load(args)
    mcfg, tcfg = build_configs(args, split.name)
    out = Path(args.output_dir)
    write_manifest(
        out,
        "train",
        args.argv,
        {"dataset": str(d), "model": mcfg.to_dict(), "train": tcfg.to_dict(), "seed": tcfg.seed},
    )
    result = train(split, mcfg, tcfg, output_dir=out)
    _emit({"best_epoch": result.best_epoch, "best_valid_auc_pr": result.best_valid_auc_pr, "checkpoint": str(out / "checkpoint.json")})
    return EXIT_OK


def _checkpoint(args) -> tuple[RPCIRModel, dict]:
    p = Path(args.checkpoint)
    if p.is_dir():
        p = p / "checkpoint.json"
    if not p.exists():
        raise DataError(f"checkpoint not found: {p}")
    return load_checkpoint(p)


def cmd_eval(args) -> int:
    split, d = _load(args)
    model, meta = _checkpoint(args)
    use_paths = meta.get("train_config", {}).get("ablation") != "no_paths"
    dump: list = []
    report = evaluate(split, model, seeds=tuple(args.seeds), use_paths=use_paths, num_negatives=args.negatives, score_dump=dump)
    if args.output_dir:
        out = Path(args.output_dir)
        write_manifest(out, "eval", args.argv, {"dataset": str(d), "checkpoint": str(args.checkpoint), "seeds": args.seeds})
        ev, rv = split.ind_test_graph.entity_vocab, split.ind_test_graph.relation_vocab
        with open(out / "scores.tsv", "w", encoding="utf-8") as fh:
            fh.write("head\trelation\ttail\tscore\tlabel\trank\n")
            for (h, r, t), s, label, rank in dump:
                fh.write(f"{ev.name(h)}\t{rv.name(r)}\t{ev.name(t)}\t{s:.17g}\t{label}\t{'' if rank is None else rank}\n")
    _emit(report.to_dict(), args.output_dir, "eval.json")
    return EXIT_OK


def cmd_rules(args) -> int:
    split, d = _load(args)
    model, _ = _checkpoint(args)
    if args.split == "test":
        g, targets = split.ind_test_graph, split.test_targets
    else:
        g, targets = split.train_graph, split.train_targets
    if args.limit is not None:
        targets = list(targets)[: args.limit]
    from .evaluator import check_compatible

    check_compatible(model, g)
    rules = extract_rules(model, g, targets, args.min_confidence)
    names = split.train_graph.relation_vocab
    lines = [format_rule(r, names) for r in rules]
    if args.output_dir:
        out = Path(args.output_dir)
        write_manifest(out, "rules", args.argv, {"dataset": str(d), "checkpoint": str(args.checkpoint), "split": args.split})
        write_rules_tsv(rules, names, out / "rules.tsv")
        (out / "rules.txt").write_text("\n".join(lines) + ("\n" if lines else ""))
    for line in lines[: args.top] if args.top else lines:
        print(line)
    return EXIT_OK


def cmd_sweep(args) -> int:
    split, d = _load(args)
    out = Path(args.output_dir)
    mcfg, tcfg = build_configs(args, split.name)
    write_manifest(
        out,
        "sweep",
        args.argv,
        {
            "dataset": str(d),
            "model": mcfg.to_dict(),
            "train": tcfg.to_dict(),
            "lambda1_grid": args.lambda1_grid,
            "lambda2_grid": args.lambda2_grid,
            "seeds": args.seeds,
        },
    )
    use_paths = tcfg.ablation != "no_paths"
    grid = np.zeros((len(args.lambda1_grid), len(args.lambda2_grid)))
    with open(out / "sweep_runs.jsonl", "w") as runs:
        for i, l1 in enumerate(args.lambda1_grid):
            for j, l2 in enumerate(args.lambda2_grid):
                aucs = []
                for seed in args.seeds:
                    cfg = TrainConfig.from_dict({**tcfg.to_dict(), "lambda1": l1, "lambda2": l2, "seed": seed})
                    res = train(split, mcfg, cfg)
                    auc = evaluate(split, res.model, seeds=(seed,), use_paths=use_paths).auc_pr
                    aucs.append(auc)
                    runs.write(json.dumps({"lambda1": l1, "lambda2": l2, "seed": seed, "auc_pr": auc}) + "\n")
                grid[i, j] = float(np.mean(aucs))
                log.info("lambda1=%g lambda2=%g mean auc_pr %.4f", l1, l2, grid[i, j])
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda1\\lambda2"] + [f"{x:g}" for x in args.lambda2_grid])
        for l1, row in zip(args.lambda1_grid, grid):
            w.writerow([f"{l1:g}"] + [f"{v:.6f}" for v in row])
    print((out / "sweep.csv").read_text(), end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.dataset:
        split, d = _load(args)
        graph, targets, source = split.train_graph, split.train_targets, str(d)
    else:
        from .synthetic import planted_rule_split

        split, _ = planted_rule_split(args.seed)
        graph, targets, source = split.train_graph, split.train_targets, "synthetic"
    mcfg, tcfg = build_configs(args, "")
    g = with_inverse(graph)
    rng = np.random.default_rng(args.seed)
    picks = rng.choice(len(targets), size=min(args.subgraphs, len(targets)), replace=False)
    builder = ExampleBuilder(g, mcfg, tcfg)
    reports = []
    for n, idx in enumerate(sorted(picks.tolist())):
        model = RPCIRModel(mcfg, g.num_relations, g.num_base_relations, seed=args.seed + n)
        ex = builder.build(idx, targets[idx], 0)
        rep = model_gradient_check(model, [ex], tcfg, step=args.step, tolerance=args.tolerance)
        rep["target"] = list(ex.target)
        reports.append(rep)
    worst = max(r["max_rel_error"] for rep in reports for r in rep["params"].values())
    summary = {
        "passed": all(r["passed"] for r in reports),
        "max_rel_error": worst,
        "step": args.step,
        "tolerance": args.tolerance,
        "subgraphs": reports,
    }
    if args.output_dir:
        write_manifest(args.output_dir, "gradcheck", args.argv, {"dataset": source, "model": mcfg.to_dict(), "train": tcfg.to_dict(), "seed": args.seed})
    _emit(summary, args.output_dir, "gradcheck.json")
    return EXIT_OK if summary["passed"] else EXIT_NUMERIC


def cmd_synth(args) -> int:
    from .synthetic import planted_rule_split

    split, planted = planted_rule_split(args.seed)
    save_split(split, args.output)
    names = split.train_graph.relation_vocab
    info = {
        "dataset": str(args.output),
        "ind_dataset": str(ind_dir_for(args.output)),
        "seed": args.seed,
        "planted_rules": {names.name(h): [names.name(b) for b in body] for h, body in planted.items()},
    }
    write_manifest(args.output, "synth", args.argv, info)
    _emit(info)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_dataset(p, required=True) -> None:
    p.add_argument("--dataset", required=required, help="dataset directory or name under --data-root")
    p.add_argument("--data-root", default=None, help="directory holding named datasets (default $RPCIR_DATA or ./data)")
    p.add_argument("--ind-dir", default=None, help="ind-test directory (default <dataset>_ind)")


def _add_model_train_flags(p, lambdas: bool = True) -> None:
    p.add_argument("--config", help="JSON file with 'model' and 'train' sections; flags override it")
    p.add_argument("--layers", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--lmax", type=int)
    p.add_argument("--encoder", choices=ENCODERS)
    p.add_argument("--edge-dropout", type=float)
    p.add_argument("--margin", type=float)
    if lambdas:
        p.add_argument("--lambda1", type=float)
        p.add_argument("--lambda2", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--negative-paths", choices=NEGATIVE_PATH_MODES)
    p.add_argument("--threads", type=int, help="example-preparation threads (default $RPCIR_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rpcir", description="Inductive relation prediction with relational paths.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check an inductive split")
    _add_dataset(p)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="mean relational paths per target subgraph")
    _add_dataset(p)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--lmax", type=int, default=3)
    p.add_argument("--limit", type=int, help="only the first N targets of each version")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a model")
    _add_dataset(p)
    _add_model_train_flags(p)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="AUC-PR and Hits@10 on the ind-test graph")
    _add_dataset(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seeds", type=_csv_ints, default=[0])
    p.add_argument("--negatives", type=int, default=50)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rules", help="export rules with attention confidences")
    _add_dataset(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.add_argument("--min-confidence", type=float, default=0.01)
    p.add_argument("--limit", type=int)
    p.add_argument("--top", type=int, default=20, help="rules printed to stdout (0 = all)")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_rules)

    p = sub.add_parser("sweep", help="grid over the two loss weights")
    _add_dataset(p)
    _add_model_train_flags(p, lambdas=False)
    p.add_argument("--lambda1", dest="lambda1_grid", type=_csv_floats, default=[0.2, 0.4, 0.6, 0.8, 1.0, 1.2])
    p.add_argument("--lambda2", dest="lambda2_grid", type=_csv_floats, default=[0.2, 0.4, 0.6, 0.8, 1.0, 1.2])
    p.add_argument("--seeds", type=_csv_ints, default=[0, 1, 2, 3, 4])
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    _add_dataset(p, required=False)
    _add_model_train_flags(p)
    p.set_defaults(dim=4, layers=2, seed=0)
    p.add_argument("--subgraphs", type=int, default=5)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write the planted-rule synthetic split")
    p.add_argument("--output", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    args.argv = argv
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rpcir: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, EntityLookupError, CompatibilityError, FileNotFoundError) as exc:
        print(f"rpcir: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"rpcir: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
