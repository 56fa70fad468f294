"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

from . import __version__
from .baselines import KINDS, embedding_stats
from .biaslab import demo_approximation, demo_baseline_bias, demo_layer_bias
from .data import SyntheticSpec, split_dataset
from .errors import ConfigError, DataError, NumericError
from .importance import COMPARATORS, SCORE_MODES, comparator_importance, exact_report, field_importance
from .model import ARCHS, init_model, load_model, save_model
from .pipeline import (RunConfig, SelectionRun, derive_seed, load_dataset_for, manifest, run_selection,
                       selection_curve, write_json)
from .trainer import evaluate, train

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated integer list, got {text!r}") from None


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig defaults; flags override it")
    src = p.add_argument_group("dataset")
    src.add_argument("--csv", dest="csv_path")
    src.add_argument("--label-column")
    src.add_argument("--rows", type=int, help="synthetic: number of rows")
    src.add_argument("--fields", type=int, help="synthetic: number of fields")
    src.add_argument("--planted", type=_int_list, help="synthetic: planted field indices")
    src.add_argument("--vocab", type=int, help="synthetic: categories per field")
    src.add_argument("--positive-rate", type=float, help="synthetic: target positive rate")
    m = p.add_argument_group("model and training")
    m.add_argument("--arch", choices=ARCHS)
    m.add_argument("--hidden", type=_int_list)
    m.add_argument("--embed-dim", type=int)
    m.add_argument("--batch-size", type=int)
    m.add_argument("--lr", type=float)
    m.add_argument("--epochs", type=int)
    m.add_argument("--patience", type=int)
    i = p.add_argument_group("importance")
    i.add_argument("--lambda", dest="lam", type=float)
    i.add_argument("--steps-train", type=int)
    i.add_argument("--steps-val", type=int)
    i.add_argument("--baseline", choices=KINDS)
    i.add_argument("--score-mode", choices=SCORE_MODES)
    s = p.add_argument_group("selection")
    s.add_argument("--k", type=int)
    s.add_argument("--k-list", type=_int_list)
    s.add_argument("--delta", type=float)
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--seed", type=int)


def build_config(args) -> RunConfig:
    base: dict = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config}: {exc}") from None
    train = dict(base.pop("train", {}) or {})
    imp = dict(base.pop("importance", {}) or {})
    syn = base.pop("synthetic", None)
    syn = dict(syn) if syn is not None else None

    def put(target, key, value):
        if value is not None:
            target[key] = value

    for key in ("csv_path", "label_column", "arch", "embed_dim", "k", "delta", "out_dir", "seed"):
        put(base, key, getattr(args, key, None))
    put(base, "hidden_dims", getattr(args, "hidden", None))
    put(base, "k_list", getattr(args, "k_list", None))
    for flag, key in (("batch_size", "batch_size"), ("lr", "learning_rate"), ("epochs", "max_epochs"),
                      ("patience", "patience")):
        put(train, key, getattr(args, flag, None))
    for flag, key in (("lam", "lam"), ("steps_train", "steps_train"), ("steps_val", "steps_val"),
                      ("score_mode", "score_mode")):
        put(imp, key, getattr(args, flag, None))
    if getattr(args, "baseline", None):
        b = imp.get("baseline")
        imp["baseline"] = dict(b, kind=args.baseline) if isinstance(b, dict) else {"kind": args.baseline}
    syn_flags = {"n_rows": "rows", "n_fields": "fields", "planted": "planted", "vocab_size": "vocab",
                 "target_positive_rate": "positive_rate"}
    if base.get("csv_path") is None:
        syn = syn or {}
        for key, flag in syn_flags.items():
            put(syn, key, getattr(args, flag, None))
        syn.setdefault("seed", base.get("seed", 0))
    base["train"] = train
    base["importance"] = imp
    base["synthetic"] = syn if base.get("csv_path") is None else None
    try:
        return RunConfig.from_dict(base)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _out(config: RunConfig) -> Path:
    out = Path(config.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args) -> int:
    config = build_config(args)
    if config.synthetic is None:
        raise ConfigError("gen needs a synthetic dataset spec, not --csv")
    data = load_dataset_for(config)
    out = _out(config)
    with open(out / "data.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(data.schema.names + [config.label_column])
        for row, y in zip(data.rows, data.labels):
            w.writerow([f"c{v}" for v in row] + [int(y)])
    write_json(out / "manifest.json", dict(manifest(config, "gen"), provenance=data.provenance))
    print(f"wrote {len(data)} rows to {out / 'data.csv'}")
    return 0


def cmd_train(args) -> int:
    config = build_config(args)
    data = load_dataset_for(config)
    tr, va, te = split_dataset(data, config.seed)
    seed = derive_seed(config.seed, 1)
    model = init_model(data.schema, config.arch, config.hidden_dims, seed=seed)
    tcfg = dataclasses.replace(config.train, seed=seed, importance=config.importance)
    model, hist = train(model, tr, va, tcfg)
    auc, ll = evaluate(model, te)
    out = _out(config)
    save_model(model, out / "model.json")
    hist.to_csv(out / "history.csv")
    write_json(out / "metrics.json", {"test_auc": auc, "test_logloss": ll, "best_epoch": hist.best_epoch})
    write_json(out / "manifest.json", manifest(config, "train"))
    print(f"test AUC {auc:.4f}  logloss {ll:.4f}")
    return 0


def _model_splits(config: RunConfig, model_path: str):
    model = load_model(model_path)
    data = load_dataset_for(config)
    names = data.schema.names
    try:
        idx = [names.index(n) for n in model.schema.names]
    except ValueError as exc:
        raise DataError(f"model field missing from dataset: {exc}") from None
    data = data.select_fields(idx)
    if data.schema.vocab_sizes != model.schema.vocab_sizes:
        raise DataError("dataset vocabularies do not match the model")
    return model, split_dataset(data, config.seed)


def cmd_importance(args) -> int:
    config = build_config(args)
    model, (tr, va, _) = _model_splits(config, args.model)
    stats = embedding_stats(model, tr)
    seed = derive_seed(config.seed, 3)
    if args.method == "aggregated":
        report = field_importance(model, va, config.importance, stats=stats, seed=seed)
    elif args.method == "exact":
        report = exact_report(model, va, config.importance.baseline, stats, seed, config.importance.score_mode)
    else:
        report = comparator_importance(args.method, model, va, stats, config.importance.score_mode, seed)
    out = _out(config)
    report.to_csv(out / "importance.csv")
    report.to_jsonl(out / "importance.jsonl")
    write_json(out / "manifest.json", dict(manifest(config, "importance"), method=args.method))
    for r in sorted(report.records(), key=lambda r: r["rank"]):
        print(f"{r['rank']:3d}  {r['field_name']:<20} {r['score']:.6g}")
    return 0


def cmd_eval(args) -> int:
    config = build_config(args)
    model, (_, _, te) = _model_splits(config, args.model)
    auc, ll = evaluate(model, te)
    out = _out(config)
    write_json(out / "eval.json", {"test_auc": auc, "test_logloss": ll})
    print(f"test AUC {auc:.4f}  logloss {ll:.4f}")
    return 0


def cmd_select(args) -> int:
    config = build_config(args)
    if config.k is None:
        raise ConfigError("select needs --k")
    result = run_selection(config)
    rec = result.record()
    print(f"K={rec['k']} ratio={rec['ratio_pct']} AUC {rec['auc']:.4f} (full {rec['reference_auc']:.4f}) "
          f"logloss {rec['logloss']:.4f} (full {rec['reference_logloss']:.4f})")
    print("selected:", ", ".join(rec["selected"]))
    return 0


def cmd_curve(args) -> int:
    config = build_config(args)
    if not config.k_list:
        raise ConfigError("curve needs --k-list")
    curve = selection_curve(config, run=SelectionRun(config))
    for r in curve.records():
        print(f"K={r['k']:3d} AUC {r['auc']:.4f} drop {r['auc_drop']:+.4f}{'  *' if r['qualifies'] else ''}")
    print(f"minimal K within delta={curve.delta}: {curve.minimal_k}")
    return 0


def cmd_demo(args) -> int:
    if args.which == "approx":
        report = demo_approximation()
    elif args.which == "baseline":
        report = demo_baseline_bias(seed=args.seed)
    else:
        report = demo_layer_bias(seed=args.seed)
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / f"demo_{args.which}.csv")
    report.to_jsonl(out / f"demo_{args.which}.jsonl")
    write_json(out / "manifest.json", {"tool": "fieldsel", "version": __version__, "command": "demo",
                                       "demo": args.which, "seed": args.seed, "config": report.config})
    for r in report.records:
        print("  ".join(f"{c}={r[c]:.6g}" if isinstance(r[c], float) else f"{c}={r[c]}" for c in report.columns))
    if report.summary:
        print(json.dumps(report.summary, sort_keys=True))
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fieldsel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fieldsel {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn, help_ in (("gen", cmd_gen, "write a synthetic dataset as CSV"),
                            ("train", cmd_train, "train a model and report test metrics"),
                            ("importance", cmd_importance, "score fields of a trained model"),
                            ("select", cmd_select, "select top-K fields and retrain"),
                            ("curve", cmd_curve, "selection curve over a K list"),
                            ("eval", cmd_eval, "evaluate a model on the test split")):
        p = sub.add_parser(name, help=help_)
        _add_run_flags(p)
        if name in ("importance", "eval"):
            p.add_argument("--model", required=True, help="model file written by train")
        if name == "importance":
            p.add_argument("--method", default="aggregated", choices=("aggregated", "exact") + COMPARATORS)
        p.set_defaults(func=fn)
    d = sub.add_parser("demo", help="bias demonstrations")
    d.add_argument("which", choices=("approx", "baseline", "layer"))
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", dest="out_dir")
    d.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
