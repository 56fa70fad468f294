"""Non-informative reference embeddings for sensitivity-based importance."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NumericError
from .model import CtrModel, check_block, embed, logit_graph, predict_logit

KINDS = ("zero", "mean", "swap", "uniform", "smoothing", "boundary_projection")


@dataclass(frozen=True)
class BaselineConfig:
    kind: str = "smoothing"
    step_size: float = 0.1
    boundary_logit: float = 0.0
    max_iters: int = 200
    tol: float = 1e-3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown baseline kind {self.kind!r}; expected one of {KINDS}")
        if self.step_size <= 0:
            raise ConfigError("step_size must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")


def as_config(kind) -> BaselineConfig:
    return kind if isinstance(kind, BaselineConfig) else BaselineConfig(kind=kind)


def empirical_boundary_logit(labels) -> float:
    """log(p / (1 - p)) for the positive rate p of ``labels``."""
    p = float(np.mean(labels))
    if not 0 < p < 1:
        raise ConfigError("empirical boundary needs both classes")
    return float(np.log(p / (1.0 - p)))


@dataclass
class DatasetEmbeddingStats:
    mean: np.ndarray  # (F, d)
    min: np.ndarray
    max: np.ndarray

    @classmethod
    def from_block(cls, embeddings) -> "DatasetEmbeddingStats":
        e = np.asarray(embeddings, dtype=np.float64)
        return cls(e.mean(axis=0), e.min(axis=0), e.max(axis=0))


def embedding_stats(model: CtrModel, dataset, batch_size: int = 8192) -> DatasetEmbeddingStats:
    """Per-field mean and per-dimension range of the embeddings of ``dataset`` (training split)."""
    n = len(dataset)
    if n == 0:
        raise ConfigError("embedding statistics need a non-empty dataset")
    total = np.zeros((model.num_fields, model.embed_dim))
    lo = np.full_like(total, np.inf)
    hi = np.full_like(total, -np.inf)
    for i in range(0, n, batch_size):
        e = embed(model, dataset.rows[i:i + batch_size])
        total += e.sum(axis=0)
        lo = np.minimum(lo, e.min(axis=0))
        hi = np.maximum(hi, e.max(axis=0))
    return DatasetEmbeddingStats(total / n, lo, hi)


def smoothing_baseline(embeddings) -> np.ndarray:
    e = np.asarray(embeddings, dtype=np.float64)
    return np.broadcast_to(e.mean(axis=1, keepdims=True), e.shape).copy()


def compute_baseline(kind, embeddings, stats: DatasetEmbeddingStats | None = None,
                     model: CtrModel | None = None, rng: np.random.Generator | None = None,
                     permutation=None) -> np.ndarray:
    """Per-sample baseline block with the shape of ``embeddings`` (n, F, d).

    ``permutation`` overrides the random draw of the swap kind: a single
    index array applied to every field, or an (F, n) array of per-field
    permutations.
    """
    cfg = as_config(kind)
    e = np.asarray(embeddings, dtype=np.float64)
    n, F, _ = e.shape
    if cfg.kind == "zero":
        return np.zeros_like(e)
    if cfg.kind == "smoothing":
        return smoothing_baseline(e)
    if cfg.kind == "mean":
        if stats is None:
            raise ConfigError("mean baseline needs dataset embedding statistics")
        return np.broadcast_to(stats.mean, e.shape).copy()
    if cfg.kind == "uniform":
        if stats is None or rng is None:
            raise ConfigError("uniform baseline needs statistics and an rng")
        return rng.uniform(stats.min, stats.max, size=e.shape)
    if cfg.kind == "swap":
        if permutation is None:
            if rng is None:
                raise ConfigError("swap baseline needs an rng")
            perms = np.stack([rng.permutation(n) for _ in range(F)])
        else:
            perms = np.asarray(permutation)
            if perms.ndim == 1:
                perms = np.broadcast_to(perms, (F, n))
        out = np.empty_like(e)
        for k in range(F):
            out[:, k, :] = e[perms[k], k, :]
        return out
    if model is None:
        raise ConfigError("boundary_projection baseline needs the model")
    return project_to_boundary(model, e, cfg.boundary_logit, cfg.step_size, cfg.max_iters, cfg.tol).block


@dataclass
class ProjectionResult:
    block: np.ndarray
    residuals: np.ndarray  # final |f(block) - D_b| per sample
    iterations: np.ndarray


def logit_and_input_grad(model: CtrModel, embeddings) -> tuple[np.ndarray, np.ndarray]:
    emb = ad.variable(check_block(model, embeddings))
    params = {k: ad.constant(v) for k, v in model.params.items()}
    logits = logit_graph(model, emb, params)
    ad.backward(ad.sum(logits))
    return logits.value, emb.grad


def project_to_boundary(model: CtrModel, embeddings, boundary_logit: float = 0.0,
                        step_size: float = 0.1, max_iters: int = 200,
                        tol: float = 1e-3, bracket: bool = True) -> ProjectionResult:
    """Descend (f(E~) - D_b)^2 / 2 from E~ = E, independently per sample.

    The update is ``E~ <- E~ - eta * (f(E~) - D_b) * grad f(E~)``. Each sample
    keeps its own ``eta``: a step that does not shrink the residual, or that
    lands on a zero-gradient region short of the tolerance, is rejected and
    ``eta`` halved; an accepted step grows it by half. Stops at
    ``|f - D_b| <= tol`` or after ``max_iters`` iterations. With ``bracket``,
    samples still above tolerance are finished by bisection toward the nearest
    point of the batch on the other side of the boundary.
    """
    if step_size <= 0 or max_iters < 1 or tol <= 0:
        raise ConfigError("step_size and tol must be positive, max_iters >= 1")
    cur = check_block(model, embeddings).copy()
    n = cur.shape[0]
    f, g = logit_and_input_grad(model, cur)
    resid = f - boundary_logit
    eta = np.full(n, float(step_size))
    iters = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        active = np.abs(resid) > tol
        if not active.any():
            break
        gsq = np.einsum("nfd,nfd->n", g, g)
        stuck = active & (gsq == 0.0)
        if stuck.any():
            raise NumericError(
                f"no descent direction for {int(stuck.sum())} sample(s): zero logit gradient "
                f"with residual {np.abs(resid[stuck]).max():.3g} above tol {tol}")
        idx = np.flatnonzero(active)
        trial = cur[idx] - (eta[idx] * resid[idx])[:, None, None] * g[idx]
        f_new, g_new = logit_and_input_grad(model, trial)
        r_new = f_new - boundary_logit
        # a trial landing where the logit is locally flat would stall the descent
        flat = np.einsum("nfd,nfd->n", g_new, g_new) == 0.0
        better = (np.abs(r_new) < np.abs(resid[idx])) & (~flat | (np.abs(r_new) <= tol))
        acc = idx[better]
        cur[acc] = trial[better]
        resid[acc] = r_new[better]
        g[acc] = g_new[better]
        eta[acc] *= 1.5
        eta[idx[~better]] *= 0.5
        iters[idx] += 1
    if bracket:
        _bracket_unconverged(model, cur, resid, boundary_logit, tol, check_block(model, embeddings))
    return ProjectionResult(cur, np.abs(resid), iters)


def _bracket_unconverged(model, cur, resid, boundary_logit, tol, original, max_halvings: int = 100):
    """Bisect from each stalled iterate toward the nearest batch point across the boundary.

    Descent can stall on a plateau where every ReLU path is shut off and the
    logit sits at the bias. The logit is continuous, so a segment whose end
    points straddle the boundary contains a crossing. Updates in place.
    """
    stalled = np.flatnonzero(np.abs(resid) > tol)
    if stalled.size == 0:
        return
    pool = np.concatenate([cur, original])
    pool_r = np.concatenate([resid, predict_logit(model, original) - boundary_logit])
    flat_pool = pool.reshape(len(pool), -1)
    for i in stalled:
        other = np.flatnonzero(np.sign(pool_r) == -np.sign(resid[i]))
        if other.size == 0:
            continue
        dist = ((flat_pool[other] - cur[i].ravel()) ** 2).sum(axis=1)
        j = other[np.argmin(dist)]
        lo, hi = cur[i].copy(), pool[j].copy()  # residual signs: lo like resid[i], hi opposite
        r_lo = resid[i]
        for _ in range(max_halvings):
            mid = 0.5 * (lo + hi)
            r_mid = float(predict_logit(model, mid[None])[0] - boundary_logit)
            if abs(r_mid) <= tol:
                lo, r_lo = mid, r_mid
                break
            if np.sign(r_mid) == np.sign(r_lo):
                lo, r_lo = mid, r_mid
            else:
                hi = mid
        cur[i] = lo
        resid[i] = r_lo


def baseline_logit_audit(model: CtrModel, dataset, kinds=KINDS, boundary_logit: float = 0.0,
                         stats: DatasetEmbeddingStats | None = None, seed: int = 0,
                         batch_size: int = 2048, projection: BaselineConfig | None = None) -> list[dict]:
    """Mean |f(E~) - D_b| and mean ||E - E~|| per baseline kind over ``dataset``."""
    projection = projection or BaselineConfig("boundary_projection", boundary_logit=boundary_logit)
    records = []
    for kind in kinds:
        cfg = projection if kind == "boundary_projection" else BaselineConfig(kind)
        cfg = BaselineConfig(cfg.kind, cfg.step_size, boundary_logit, cfg.max_iters, cfg.tol)
        rng = np.random.default_rng(seed)
        dist = emb_dist = prob = 0.0
        for i in range(0, len(dataset), batch_size):
            e = embed(model, dataset.rows[i:i + batch_size])
            b = compute_baseline(cfg, e, stats=stats, model=model, rng=rng)
            z = predict_logit(model, b)
            dist += np.abs(z - boundary_logit).sum()
            emb_dist += np.sqrt(((e - b) ** 2).sum(axis=(1, 2))).sum()
            prob += ad.sigmoid_values(z).sum()
        n = len(dataset)
        records.append({"kind": kind, "mean_logit_distance": float(dist / n),
                        "mean_embedding_distance": float(emb_dist / n),
                        "mean_baseline_probability": float(prob / n)})
    return records


def write_audit_csv(records: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "mean_logit_distance", "mean_embedding_distance"])
        for r in records:
            w.writerow([r["kind"], repr(float(r["mean_logit_distance"])),
                        repr(float(r["mean_embedding_distance"]))])
