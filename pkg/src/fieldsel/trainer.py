"""Mini-batch Adam training with the importance regularizer, and evaluation metrics."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .baselines import DatasetEmbeddingStats, compute_baseline
from .errors import ConfigError, DataError, NumericError, SingleClassError
from .gradients import loss_graph
from .importance import ImportanceConfig, _loss_input_grad, mean_path_gradient, regularization_graph
from .model import CtrModel, embed, per_sample_bce, predict_indices


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 20
    patience: int = 2
    seed: int = 0
    importance: ImportanceConfig = field(default_factory=ImportanceConfig)
    gate_l1: float = 0.0

    def __post_init__(self):
        if isinstance(self.importance, dict):
            object.__setattr__(self, "importance", ImportanceConfig(**self.importance))
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.epsilon <= 0:
            raise ConfigError("invalid Adam hyperparameters")
        if self.gate_l1 < 0:
            raise ConfigError("gate_l1 must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adam with bias-corrected moments, updating a dict of arrays in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr, self.beta1, self.beta2, self.epsilon = lr, beta1, beta2, epsilon
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


@dataclass
class TrainHistory:
    train_ce: list[float] = field(default_factory=list)
    train_reg: list[float] = field(default_factory=list)
    val_auc: list[float] = field(default_factory=list)
    val_logloss: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_ce", "train_reg", "val_auc", "val_logloss", "best"])
            for i in range(len(self.train_ce)):
                w.writerow([i, repr(self.train_ce[i]), repr(self.train_reg[i]), repr(self.val_auc[i]),
                            repr(self.val_logloss[i]), int(i == self.best_epoch)])


# -- metrics ---------------------------------------------------------------

def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC is undefined with a single class")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def logloss(logits, labels, eps: float = 1e-7) -> float:
    p = np.clip(ad.sigmoid_values(np.asarray(logits, dtype=np.float64)), eps, 1.0 - eps)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def evaluate(model: CtrModel, dataset) -> tuple[float, float]:
    """(AUC, clamped log loss); raises SingleClassError carrying the log loss."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    z = predict_indices(model, dataset.rows)
    ll = logloss(z, dataset.labels)
    try:
        auc = roc_auc(z, dataset.labels)
    except DataError as exc:
        raise SingleClassError(str(exc), ll) from None
    return auc, ll


# -- training --------------------------------------------------------------

def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch])).permutation(n)


def batch_step(model: CtrModel, rows, labels, cfg: TrainConfig, rng: np.random.Generator):
    """Gradients of cross-entropy plus regularizer for one batch.

    Returns (grads keyed like ``model.all_arrays()``, ce, reg).
    """
    imp = cfg.importance
    e = embed(model, rows)
    loss, emb, params, _ = loss_graph(model, e, labels, "mean", want_input_grads=True)
    total = loss
    if cfg.gate_l1 > 0 and "gate" in params:
        total = total + ad.sum(ad.absolute(params["gate"])) * cfg.gate_l1
    ad.backward(total)
    ce = float(loss.value)
    reg_value = 0.0
    if imp.lam > 0:
        kind = imp.baseline.kind
        stats = DatasetEmbeddingStats.from_block(e) if kind in ("mean", "uniform") else None
        base = compute_baseline(imp.baseline, e, stats=stats, model=model, rng=rng)
        if imp.steps_train == 0 and imp.gradient_at == "input":
            gbar = emb.grad * len(labels)  # mean-loss gradient -> per-sample gradient
        else:
            gbar = mean_path_gradient(_loss_input_grad(model, labels), e, base, imp.steps_train, imp.gradient_at)
        reg = regularization_graph(emb, kind, base, gbar, imp.lam)
        ad.backward(reg)
        reg_value = float(reg.value)
    grads = {}
    d_emb = emb.grad
    for k, table in enumerate(model.embeddings):
        g = np.zeros_like(table)
        np.add.at(g, rows[:, k], d_emb[:, k, :])
        grads[f"emb.{k}"] = g
    for k, p in params.items():
        grads[k] = p.grad if p.grad is not None else np.zeros_like(p.value)
    return grads, ce, reg_value


def train(model: CtrModel, train_set, val_set, cfg: TrainConfig = TrainConfig()):
    """Train a copy of ``model``; returns (best-epoch model, history)."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("training needs non-empty train and validation splits")
    model = model.copy()
    history = TrainHistory()
    if cfg.max_epochs == 0:
        return model, history
    arrays = model.all_arrays()  # views into the model's own arrays
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    best_auc, best_state, since_best = -np.inf, None, 0
    n = len(train_set)
    for epoch in range(cfg.max_epochs):
        perm = epoch_permutation(cfg.seed, epoch, n)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 1]))
        ce_sum = reg_sum = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            try:
                grads, ce, reg = batch_step(model, train_set.rows[idx], train_set.labels[idx], cfg, rng)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from None
            if not (np.isfinite(ce) and np.isfinite(reg)):
                raise NumericError(f"epoch {epoch}, batch {b}: non-finite loss")
            opt.step(arrays, grads)
            ce_sum += ce * len(idx)
            reg_sum += reg * len(idx)
        auc, ll = evaluate(model, val_set)
        history.train_ce.append(ce_sum / n)
        history.train_reg.append(reg_sum / n)
        history.val_auc.append(auc)
        history.val_logloss.append(ll)
        if auc > best_auc:
            best_auc, best_state, since_best = auc, model.copy(), 0
            history.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    return best_state, history


def dataset_loss(model: CtrModel, dataset) -> float:
    return float(np.mean(per_sample_bce(predict_indices(model, dataset.rows), dataset.labels)))
