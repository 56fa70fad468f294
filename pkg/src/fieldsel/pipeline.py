"""Train a surrogate, score fields on validation, keep the top K, retrain and report."""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import embedding_stats
from .data import SyntheticSpec, TabularDataset, generate_synthetic, load_csv, split_dataset
from .errors import ConfigError
from .importance import ImportanceConfig, ImportanceReport, field_importance
from .model import ARCHS, FieldSchema, init_model, save_model
from .trainer import TrainConfig, TrainHistory, evaluate, train

SIGNIFICANT_DELTA = 0.001


@dataclass(frozen=True)
class RunConfig:
    csv_path: str | None = None
    synthetic: SyntheticSpec | None = None
    label_column: str = "label"
    arch: str = "mlp"
    hidden_dims: tuple[int, ...] = (16, 16)
    embed_dim: int = 8
    train: TrainConfig = field(default_factory=TrainConfig)
    importance: ImportanceConfig = field(default_factory=ImportanceConfig)
    k: int | None = None
    k_list: tuple[int, ...] = ()
    delta: float = 0.001
    retrain_arch: str | None = None
    retrain_hidden_dims: tuple[int, ...] | None = None
    retrain_lambda: float = 0.0
    out_dir: str | None = None
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.synthetic, dict):
            object.__setattr__(self, "synthetic", SyntheticSpec(**self.synthetic))
        if isinstance(self.train, dict):
            object.__setattr__(self, "train", TrainConfig(**self.train))
        if isinstance(self.importance, dict):
            object.__setattr__(self, "importance", ImportanceConfig(**self.importance))
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        object.__setattr__(self, "k_list", tuple(self.k_list))
        if self.retrain_hidden_dims is not None:
            object.__setattr__(self, "retrain_hidden_dims", tuple(self.retrain_hidden_dims))
        if (self.csv_path is None) == (self.synthetic is None):
            raise ConfigError("exactly one dataset source (csv_path or synthetic) is required")
        for a in (self.arch, self.retrain_arch):
            if a is not None and a not in ARCHS:
                raise ConfigError(f"unknown arch {a!r}")
        if self.retrain_lambda < 0:
            raise ConfigError("retrain_lambda must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def derive_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


_SURROGATE, _RETRAIN, _IMPORTANCE = 1, 2, 3


@dataclass
class SelectionResult:
    selected: list[str]
    selected_indices: list[int]
    k: int
    num_fields: int
    auc: float
    logloss: float
    reference_auc: float
    reference_logloss: float

    @property
    def ratio(self) -> float:
        return self.k / self.num_fields

    def record(self) -> dict:
        return {
            "k": self.k, "num_fields": self.num_fields, "ratio": self.ratio,
            "ratio_pct": f"{100.0 * self.ratio:.2f}%",
            "auc": self.auc, "logloss": self.logloss,
            "reference_auc": self.reference_auc, "reference_logloss": self.reference_logloss,
            "auc_significant": abs(self.auc - self.reference_auc) >= SIGNIFICANT_DELTA,
            "logloss_significant": abs(self.logloss - self.reference_logloss) >= SIGNIFICANT_DELTA,
            "selected": self.selected,
        }


@dataclass
class SelectionCurve:
    points: list[tuple[int, float, float]]
    delta: float
    minimal_k: int | None
    reference_auc: float

    def records(self) -> list[dict]:
        return [{"k": k, "auc": a, "logloss": ll, "auc_drop": self.reference_auc - a,
                 "qualifies": self.reference_auc - a <= self.delta}
                for k, a, ll in self.points]


def select_top_k(report: ImportanceReport, k: int) -> list[int]:
    """Indices of the K highest-scoring fields, ties to the lower index, in field order."""
    n = len(report.scores)
    if not 1 <= k <= n:
        raise ConfigError(f"K must be in [1, {n}], got {k}")
    return sorted(report.order[:k])


def load_dataset_for(config: RunConfig) -> TabularDataset:
    if config.csv_path is not None:
        return load_csv(config.csv_path, config.label_column, split_seed=config.seed,
                        embed_dim=config.embed_dim)
    spec = config.synthetic
    if spec.embed_dim != config.embed_dim:
        spec = dataclasses.replace(spec, embed_dim=config.embed_dim)
    return generate_synthetic(spec)


class SelectionRun:
    """Shared state for one surrogate ranking and any number of retrains."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.dataset = load_dataset_for(config)
        self.train_set, self.val_set, self.test_set = split_dataset(self.dataset, config.seed)
        self.schema: FieldSchema = self.dataset.schema
        sur_seed = derive_seed(config.seed, _SURROGATE)
        init = init_model(self.schema, config.arch, config.hidden_dims, seed=sur_seed)
        tcfg = dataclasses.replace(config.train, seed=sur_seed, importance=config.importance)
        self.surrogate, self.surrogate_history = train(init, self.train_set, self.val_set, tcfg)
        stats = embedding_stats(self.surrogate, self.train_set)
        self.report = field_importance(self.surrogate, self.val_set, config.importance, stats=stats,
                                       seed=derive_seed(config.seed, _IMPORTANCE))
        self._retrained: dict[tuple[int, ...], tuple] = {}

    def retrain(self, indices: list[int]):
        """Fresh model on the given fields; returns (model, history, auc, logloss) on test."""
        key = tuple(indices)
        if key not in self._retrained:
            cfg = self.config
            seed = derive_seed(cfg.seed, _RETRAIN)
            sub_train = self.train_set.select_fields(indices)
            sub_val = self.val_set.select_fields(indices)
            sub_test = self.test_set.select_fields(indices)
            init = init_model(sub_train.schema, cfg.retrain_arch or cfg.arch,
                              cfg.retrain_hidden_dims or cfg.hidden_dims, seed=seed)
            imp = dataclasses.replace(cfg.importance, lam=cfg.retrain_lambda)
            tcfg = dataclasses.replace(cfg.train, seed=seed, importance=imp)
            model, hist = train(init, sub_train, sub_val, tcfg)
            auc, ll = evaluate(model, sub_test)
            self._retrained[key] = (model, hist, auc, ll)
        return self._retrained[key]

    @property
    def all_fields(self) -> list[int]:
        return list(range(self.schema.num_fields))

    def result(self, k: int) -> SelectionResult:
        idx = select_top_k(self.report, k)
        _, _, auc, ll = self.retrain(idx)
        _, _, ref_auc, ref_ll = self.retrain(self.all_fields)
        return SelectionResult([self.schema.names[i] for i in idx], idx, k, self.schema.num_fields,
                               auc, ll, ref_auc, ref_ll)


def run_selection(config: RunConfig, run: SelectionRun | None = None) -> SelectionResult:
    if config.k is None:
        raise ConfigError("run_selection needs K")
    run = run or SelectionRun(config)
    result = run.result(config.k)
    if config.out_dir:
        write_selection_outputs(run, result, Path(config.out_dir))
    return result


def selection_curve(config: RunConfig, k_list=None, delta: float | None = None,
                    run: SelectionRun | None = None) -> SelectionCurve:
    """Retrain for each K on one surrogate ranking; minimal K whose AUC drop is within delta."""
    k_list = tuple(k_list if k_list is not None else config.k_list)
    delta = config.delta if delta is None else delta
    if not k_list:
        raise ConfigError("K list must be non-empty")
    run = run or SelectionRun(config)
    n = run.schema.num_fields
    for k in k_list:
        if not 1 <= k <= n:
            raise ConfigError(f"K must be in [1, {n}], got {k}")
    ks = sorted(set(int(k) for k in k_list))
    _, _, ref_auc, _ = run.retrain(run.all_fields)
    points = []
    for k in ks:
        r = run.result(k)
        points.append((k, r.auc, r.logloss))
    minimal = next((k for k, auc, _ in points if ref_auc - auc <= delta), None)
    curve = SelectionCurve(points, delta, minimal, ref_auc)
    if config.out_dir:
        write_curve_outputs(run, curve, Path(config.out_dir))
    return curve


# -- outputs ---------------------------------------------------------------

def manifest(config: RunConfig, command: str) -> dict:
    return {"tool": "fieldsel", "version": __version__, "command": command,
            "seed": config.seed, "config": config.to_dict()}


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def write_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True, default=_json_default) + "\n")


def write_csv(path: Path, records: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in records:
            w.writerow([_cell(r[c]) for c in columns])


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(str(x) for x in v)
    return v


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def write_history(path: Path, history: TrainHistory) -> None:
    history.to_csv(path)


def _write_common(run: SelectionRun, out: Path, command: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "manifest.json", manifest(run.config, command))
    save_model(run.surrogate, out / "surrogate_model.json")
    write_history(out / "surrogate_history.csv", run.surrogate_history)
    run.report.to_csv(out / "importance.csv")
    run.report.to_jsonl(out / "importance.jsonl")


def write_selection_outputs(run: SelectionRun, result: SelectionResult, out: Path) -> None:
    _write_common(run, out, "select")
    model, hist, _, _ = run.retrain(result.selected_indices)
    save_model(model, out / "retrained_model.json")
    write_history(out / "retrained_history.csv", hist)
    rec = result.record()
    write_jsonl(out / "selection.jsonl", [rec])
    write_csv(out / "selection.csv", [rec], list(rec))


def write_curve_outputs(run: SelectionRun, curve: SelectionCurve, out: Path) -> None:
    _write_common(run, out, "curve")
    recs = curve.records()
    write_csv(out / "curve.csv", recs, ["k", "auc", "logloss", "auc_drop", "qualifies"])
    write_jsonl(out / "curve.jsonl", recs + [{"delta": curve.delta, "minimal_k": curve.minimal_k,
                                               "reference_auc": curve.reference_auc}])
