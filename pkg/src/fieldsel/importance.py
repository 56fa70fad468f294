"""Feature-field importance: path-averaged gradients, exact loss differences,
one-point comparators and the training-time importance regularizer."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .baselines import BaselineConfig, DatasetEmbeddingStats, as_config, compute_baseline
from .errors import ConfigError, DataError
from .gradients import forward_backward
from .model import CtrModel, embed, per_sample_bce, predict_logit

SCORE_MODES = ("abs_sum", "signed_sum", "l2_sum")
COMPARATORS = ("snip", "shark", "sfs", "pfi")


@dataclass(frozen=True)
class ImportanceConfig:
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    steps_train: int = 0
    steps_val: int = 10
    lam: float = 0.0
    score_mode: str = "abs_sum"
    gradient_at: str = "input"  # where the one-point (steps = 0) gradient is taken
    batch_size: int = 1024

    def __post_init__(self):
        if isinstance(self.baseline, (str, dict)):
            b = self.baseline
            object.__setattr__(self, "baseline", BaselineConfig(**b) if isinstance(b, dict) else BaselineConfig(b))
        if self.steps_train < 0 or self.steps_val < 0:
            raise ConfigError("anchor step counts must be non-negative")
        if self.steps_train > self.steps_val:
            raise ConfigError("training steps must not exceed validation steps")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.score_mode not in SCORE_MODES:
            raise ConfigError(f"unknown score mode {self.score_mode!r}")
        if self.gradient_at not in ("input", "baseline"):
            raise ConfigError("gradient_at must be 'input' or 'baseline'")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ImportanceReport:
    field_names: list[str]
    scores: np.ndarray
    config: dict
    n_samples: int
    method: str = "aggregated"

    @property
    def order(self) -> list[int]:
        """Field indices from most to least important; ties by ascending index."""
        return sorted(range(len(self.scores)), key=lambda i: (-self.scores[i], i))

    @property
    def ranks(self) -> np.ndarray:
        ranks = np.empty(len(self.scores), dtype=np.int64)
        ranks[self.order] = np.arange(1, len(self.scores) + 1)
        return ranks

    def records(self) -> list[dict]:
        return [{"field_name": n, "score": float(s), "rank": int(r)}
                for n, s, r in zip(self.field_names, self.scores, self.ranks)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["field_name", "score", "rank"])
            for r in self.records():
                w.writerow([r["field_name"], repr(r["score"]), r["rank"]])

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"method": self.method, "config": self.config,
                                 "n_samples": self.n_samples}, sort_keys=True) + "\n")
            for r in self.records():
                fh.write(json.dumps(r, sort_keys=True) + "\n")


def anchor_points(e_block, baseline_block, steps: int) -> list[np.ndarray]:
    """Equidistant points (1 - t) e + t e~ at t = m / steps, m = 0..steps.

    ``steps = 0`` yields the input alone. All fields move together.
    """
    e = np.asarray(e_block, dtype=np.float64)
    b = np.asarray(baseline_block, dtype=np.float64)
    if e.shape != b.shape:
        raise ValueError(f"input {e.shape} and baseline {b.shape} differ in shape")
    if steps < 0:
        raise ConfigError("steps must be non-negative")
    if steps == 0:
        return [e.copy()]
    return [(1.0 - m / steps) * e + (m / steps) * b for m in range(steps + 1)]


def mean_path_gradient(grad_fn, e, baseline, steps: int, gradient_at: str = "input") -> np.ndarray:
    """Arithmetic mean of ``grad_fn`` over the anchors; grad_fn maps a block to its gradient."""
    if steps == 0 and gradient_at == "baseline":
        return grad_fn(np.asarray(baseline, dtype=np.float64))
    total = None
    anchors = anchor_points(e, baseline, steps)
    for a in anchors:
        g = grad_fn(a)
        total = g if total is None else total + g
    return total / len(anchors)


def _loss_input_grad(model: CtrModel, labels):
    # per-sample loss gradients: the batch loss is a sum, not a mean
    return lambda block: forward_backward(model, block, labels, want_input_grads=True,
                                          reduction="sum").input_grads


def importance_vectors(model: CtrModel, embeddings, labels, baseline_block, steps: int,
                       gradient_at: str = "input") -> np.ndarray:
    """(e - e~) * mean anchor gradient, shape (n, F, d)."""
    e = np.asarray(embeddings, dtype=np.float64)
    g = mean_path_gradient(_loss_input_grad(model, labels), e, baseline_block, steps, gradient_at)
    return (e - baseline_block) * g


def scalarize(vectors: np.ndarray, score_mode: str) -> np.ndarray:
    """Reduce (n, F, d) importance vectors to (n, F) per-sample scores."""
    if score_mode == "signed_sum":
        return vectors.sum(axis=-1)
    if score_mode == "abs_sum":
        return np.abs(vectors.sum(axis=-1))
    if score_mode == "l2_sum":
        return np.sqrt((vectors * vectors).sum(axis=-1))
    raise ConfigError(f"unknown score mode {score_mode!r}")


def aggregated_importance(model: CtrModel, embeddings, labels, baseline="smoothing", steps: int = 10,
                          score_mode: str = "signed_sum", stats: DatasetEmbeddingStats | None = None,
                          rng: np.random.Generator | None = None, gradient_at: str = "input",
                          baseline_block=None) -> np.ndarray:
    """Per-sample, per-field path-averaged importance scores (n, F)."""
    e = np.asarray(embeddings, dtype=np.float64)
    if baseline_block is None:
        baseline_block = compute_baseline(baseline, e, stats=stats, model=model, rng=rng)
    vec = importance_vectors(model, e, labels, baseline_block, steps, gradient_at)
    return scalarize(vec, score_mode)


def _batches(n: int, batch_size: int):
    for b, start in enumerate(range(0, n, batch_size)):
        yield b, slice(start, min(start + batch_size, n))


def _batch_rng(seed: int, batch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, batch]))


def field_importance(model: CtrModel, dataset, config: ImportanceConfig = ImportanceConfig(),
                     stats: DatasetEmbeddingStats | None = None, seed: int = 0) -> ImportanceReport:
    """Sum per-sample scores (anchor count ``config.steps_val``) over ``dataset`` in batch order."""
    n = len(dataset)
    if n == 0:
        raise DataError("importance needs a non-empty validation split")
    total = np.zeros(model.num_fields)
    for b, sl in _batches(n, config.batch_size):
        e = embed(model, dataset.rows[sl])
        scores = aggregated_importance(model, e, dataset.labels[sl], config.baseline, config.steps_val,
                                       config.score_mode, stats=stats, rng=_batch_rng(seed, b),
                                       gradient_at=config.gradient_at)
        total += scores.sum(axis=0)
    return ImportanceReport(model.schema.names, total, config.to_dict(), n)


def exact_importance_block(model: CtrModel, embeddings, labels, baseline_block, field_index: int) -> np.ndarray:
    """Per-sample L(E) - L(E with field ``field_index`` taken from the baseline)."""
    e = np.asarray(embeddings, dtype=np.float64)
    if not 0 <= field_index < e.shape[1]:
        raise ConfigError(f"field index {field_index} out of range")
    replaced = e.copy()
    replaced[:, field_index, :] = np.asarray(baseline_block)[:, field_index, :]
    return per_sample_bce(predict_logit(model, e), labels) - per_sample_bce(predict_logit(model, replaced), labels)


def exact_importance(model: CtrModel, dataset, field_index: int, baseline="swap",
                     stats: DatasetEmbeddingStats | None = None, seed: int = 0, permutation=None,
                     score_mode: str = "signed_sum", batch_size: int = 4096) -> float:
    """Loss difference from replacing one field by its baseline, by two forward passes.

    Per-sample differences are summed over ``dataset``; ``abs_sum`` and
    ``l2_sum`` sum their magnitudes. With the swap baseline this is
    permutation importance; ``permutation`` fixes the swap (dataset-wide when
    ``batch_size`` covers the dataset).
    """
    if not 0 <= field_index < model.num_fields:
        raise ConfigError(f"field index {field_index} out of range for {model.num_fields} fields")
    if score_mode not in SCORE_MODES:
        raise ConfigError(f"unknown score mode {score_mode!r}")
    total = 0.0
    for b, sl in _batches(len(dataset), batch_size):
        e = embed(model, dataset.rows[sl])
        perm = None if permutation is None else np.asarray(permutation)[..., sl]
        base = compute_baseline(baseline, e, stats=stats, model=model, rng=_batch_rng(seed, b), permutation=perm)
        delta = exact_importance_block(model, e, dataset.labels[sl], base, field_index)
        total += float(delta.sum() if score_mode == "signed_sum" else np.abs(delta).sum())
    return total


def exact_report(model: CtrModel, dataset, baseline="swap", stats=None, seed: int = 0,
                 score_mode: str = "abs_sum", permutation=None, batch_size: int = 4096) -> ImportanceReport:
    scores = np.array([exact_importance(model, dataset, i, baseline, stats, seed, permutation,
                                        score_mode, batch_size)
                       for i in range(model.num_fields)])
    cfg = {"baseline": asdict(as_config(baseline)), "score_mode": score_mode}
    return ImportanceReport(model.schema.names, scores, cfg, len(dataset), method="exact")


def comparator_importance(method: str, model: CtrModel, dataset, stats: DatasetEmbeddingStats | None = None,
                          score_mode: str = "abs_sum", seed: int = 0, batch_size: int = 1024,
                          permutation=None) -> ImportanceReport:
    """One-point reference estimators: snip, shark, sfs, and exact permutation importance (pfi)."""
    if method not in COMPARATORS:
        raise ConfigError(f"unknown comparator {method!r}; expected one of {COMPARATORS}")
    if method == "pfi":
        rep = exact_report(model, dataset, "swap", stats, seed, score_mode, permutation,
                           batch_size=max(batch_size, len(dataset)))
        rep.method = "pfi"
        return rep
    if method == "shark" and stats is None:
        raise ConfigError("shark needs dataset embedding statistics")
    n = len(dataset)
    if n == 0:
        raise DataError("importance needs a non-empty dataset")
    total = np.zeros(model.num_fields)
    for _, sl in _batches(n, batch_size):
        e = embed(model, dataset.rows[sl])
        y = dataset.labels[sl]
        if method == "sfs":
            g = forward_backward(model, e, y, want_input_grads=True, reduction="sum").input_grads
            total += np.sqrt((g * g).sum(axis=-1)).sum(axis=0)
            continue
        kind = "zero" if method == "snip" else "mean"
        base = compute_baseline(kind, e, stats=stats)
        total += aggregated_importance(model, e, y, steps=0, score_mode=score_mode,
                                       baseline_block=base).sum(axis=0)
    return ImportanceReport(model.schema.names, total, {"score_mode": score_mode}, n, method=method)


def regularization_loss(importances, lam: float) -> float:
    """lam * mean over samples of the summed per-field L2 norms of (n, F, d) importances."""
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    vec = np.asarray(importances, dtype=np.float64)
    if lam == 0 or vec.size == 0:
        return 0.0
    return float(lam * np.sqrt((vec * vec).sum(axis=-1)).sum(axis=-1).mean())


def regularization_graph(emb: ad.Tensor, baseline_kind: str, baseline_block, mean_grad: np.ndarray,
                         lam: float) -> ad.Tensor:
    """Differentiable regularizer with the gradient factor held constant.

    Gradients reach the embeddings through the displacement only. The
    smoothing baseline is a function of the same sample, so it is rebuilt on
    the graph; other baselines enter as constants.
    """
    if baseline_kind == "smoothing":
        base = ad.mean(emb, axis=1, keepdims=True)
    else:
        base = ad.constant(baseline_block)
    vec = (emb - base) * ad.constant(mean_grad)
    norms = ad.l2norm(vec, axis=-1)
    return ad.mean(ad.sum(norms, axis=1)) * lam
