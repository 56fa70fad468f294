"""Deterministic demonstrations of approximation, baseline and layer bias."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import kendalltau

from . import autodiff as ad
from .baselines import KINDS, BaselineConfig, baseline_logit_audit, embedding_stats
from .data import SyntheticSpec, TabularDataset, generate_synthetic, split_dataset
from .importance import ImportanceConfig, exact_report, field_importance, mean_path_gradient
from .model import CtrModel, FieldSchema, init_model
from .trainer import TrainConfig, train


@dataclass
class BiasDemoReport:
    kind: str
    columns: list[str]
    records: list[dict]
    seed: int | None = None
    config: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for r in self.records:
                w.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c]
                            for c in self.columns])

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            head = {"demo": self.kind, "seed": self.seed, "config": self.config, "summary": self.summary}
            fh.write(json.dumps(head, sort_keys=True, default=float) + "\n")
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True, default=float) + "\n")


# -- approximation bias ----------------------------------------------------

def quadratic_loss(x: ad.Tensor) -> ad.Tensor:
    """L(x) = x^2 + 3 on the autodiff engine."""
    return ad.square(x) + 3.0


def _scalar_grad(fn, x) -> np.ndarray:
    v = ad.variable(np.asarray(x, dtype=np.float64))
    ad.backward(ad.sum(fn(v)))
    return v.grad


def demo_approximation(x: float = 2.0, baseline: float = 0.0, steps=(1, 2, 4, 8)) -> BiasDemoReport:
    """Exact loss change versus one-point and path-averaged estimates on L = x^2 + 3."""
    loss = lambda v: float(quadratic_loss(ad.constant(v)).value.sum())  # noqa: E731
    grad = lambda v: _scalar_grad(quadratic_loss, v)  # noqa: E731
    e, b = np.array([x]), np.array([baseline])
    exact = loss(e) - loss(b)
    disp = float(e[0] - b[0])
    rows = [("exact", None, exact),
            ("one_point_input", 0, disp * float(grad(e)[0])),
            ("one_point_baseline", 0, disp * float(grad(b)[0])),
            ("raw_gradient", 0, float(grad(e)[0]))]
    for m in steps:
        rows.append(("aggregated", m, disp * float(mean_path_gradient(grad, e, b, m)[0])))
    records = [{"method": name, "steps": "" if m is None else m, "estimate": est,
                "exact": exact, "abs_error": abs(est - exact)} for name, m, est in rows]
    return BiasDemoReport("approximation", ["method", "steps", "estimate", "exact", "abs_error"], records,
                          config={"x": x, "baseline": baseline, "steps": list(steps)})


# -- baseline bias ---------------------------------------------------------

def _planted(seed: int, n_fields: int, n_planted: int) -> tuple[int, ...]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    return tuple(sorted(int(i) for i in rng.choice(n_fields, n_planted, replace=False)))


def demo_baseline_bias(seed: int = 0, n_rows: int = 20_000, n_fields: int = 20, n_planted: int = 6,
                       positive_rate: float = 0.10, boundary_logit: float = 0.0,
                       projection: BaselineConfig | None = None,
                       train_config: TrainConfig | None = None) -> BiasDemoReport:
    """Logit distance of each baseline kind from the decision boundary on imbalanced data."""
    spec = SyntheticSpec(n_rows=n_rows, n_fields=n_fields, planted=_planted(seed, n_fields, n_planted),
                         target_positive_rate=positive_rate, seed=seed)
    data = generate_synthetic(spec)
    tr, va, _ = split_dataset(data, seed)
    tcfg = train_config or TrainConfig(seed=seed)
    model, _ = train(init_model(data.schema, "mlp", (16, 16), seed=seed), tr, va, tcfg)
    stats = embedding_stats(model, tr)
    projection = projection or BaselineConfig("boundary_projection", boundary_logit=boundary_logit)
    records = baseline_logit_audit(model, va, KINDS, boundary_logit, stats=stats, seed=seed,
                                   projection=projection)
    dist = {r["kind"]: r["mean_logit_distance"] for r in records}
    summary = {"smoothing_closer_than_mean": bool(dist["smoothing"] < dist["mean"]),
               "projection_within_tol": bool(dist["boundary_projection"] <= projection.tol),
               "projection_tol": projection.tol}
    cols = ["kind", "mean_logit_distance", "mean_embedding_distance", "mean_baseline_probability"]
    return BiasDemoReport("baseline", cols, records, seed,
                          {"n_rows": n_rows, "n_fields": n_fields, "planted": list(spec.planted),
                           "positive_rate": positive_rate, "boundary_logit": boundary_logit},
                          summary)


# -- layer bias ------------------------------------------------------------

def layer_bias_model() -> tuple[CtrModel, TabularDataset]:
    """Two 1-d fields behind gates (2, 0.5) and a square hidden layer.

    Field A's hidden unit feeds the output with weight 0, field B's with
    weight 10, so A cannot influence the logit however large its gate.
    """
    schema = FieldSchema((("A", 3), ("B", 3)), embed_dim=1)
    table = np.array([[0.0], [0.5], [1.0]])
    params = {
        "gate": np.array([2.0, 0.5]),
        "mlp.0": np.eye(2),
        "mlp.out": np.array([[0.0], [10.0]]),
        "bias": np.array([-2.5]),
    }
    model = CtrModel(schema, "mlp", (2,), [table.copy(), table.copy()], params)
    a, b = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
    rows = np.stack([a.ravel(), b.ravel()], axis=1)
    rows = np.concatenate([rows, rows])
    labels = np.concatenate([(rows[:9, 1] == 2), (rows[9:, 1] >= 1)]).astype(np.float64)
    return model, TabularDataset(schema, rows, labels, {"source": "hand-built"})


def _ranks(scores) -> list[int]:
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    ranks = [0] * len(scores)
    for r, i in enumerate(order, start=1):
        ranks[i] = r
    return ranks


def demo_layer_bias(seed: int = 0, steps: int = 10, trained: bool = True, n_rows: int = 20_000,
                    n_fields: int = 10, n_planted: int = 4, gate_l1: float = 1e-3) -> BiasDemoReport:
    """Gate magnitude versus exact and path-averaged importance.

    The hand-built part has no randomness. The trained part fits multiplicative
    gates with an L1 penalty on a planted synthetic set and reports Kendall tau
    of the gate ranking and the path-averaged ranking against the exact ranking.
    """
    model, data = layer_bias_model()
    imp = ImportanceConfig(baseline="smoothing", steps_val=steps, score_mode="abs_sum")
    gates = np.abs(model.params["gate"])
    exact = exact_report(model, data, "smoothing", score_mode="abs_sum").scores
    agg = field_importance(model, data, imp).scores
    records = [{"variant": "hand-built", "field": name, "gate": float(gates[i]),
                "gate_rank": _ranks(gates)[i], "exact_score": float(exact[i]),
                "exact_rank": _ranks(exact)[i], "aggregated_score": float(agg[i]),
                "aggregated_rank": _ranks(agg)[i]}
               for i, name in enumerate(model.schema.names)]
    summary = {
        "gate_ranks_a_over_b": bool(gates[0] > gates[1]),
        "exact_ranks_b_over_a": bool(exact[1] > exact[0]),
        "aggregated_ranks_b_over_a": bool(agg[1] > agg[0]),
        "exact_score_a": float(exact[0]),
        "aggregated_score_a": float(agg[0]),
    }
    if trained:
        spec = SyntheticSpec(n_rows=n_rows, n_fields=n_fields, planted=_planted(seed, n_fields, n_planted),
                             target_positive_rate=0.3, seed=seed)
        syn = generate_synthetic(spec)
        tr, va, _ = split_dataset(syn, seed)
        gm = init_model(syn.schema, "mlp", (16, 16), seed=seed, gated=True)
        gm, _ = train(gm, tr, va, TrainConfig(seed=seed, gate_l1=gate_l1))
        g = np.abs(gm.params["gate"])
        ex = exact_report(gm, va, "smoothing", score_mode="abs_sum").scores
        ag = field_importance(gm, va, imp).scores
        for i, name in enumerate(syn.schema.names):
            records.append({"variant": "trained", "field": name, "gate": float(g[i]),
                            "gate_rank": _ranks(g)[i], "exact_score": float(ex[i]),
                            "exact_rank": _ranks(ex)[i], "aggregated_score": float(ag[i]),
                            "aggregated_rank": _ranks(ag)[i]})
        summary["trained_tau_gate_vs_exact"] = float(kendalltau(g, ex)[0])
        summary["trained_tau_aggregated_vs_exact"] = float(kendalltau(ag, ex)[0])
        summary["trained_planted"] = list(spec.planted)
    cols = ["variant", "field", "gate", "gate_rank", "exact_score", "exact_rank",
            "aggregated_score", "aggregated_rank"]
    return BiasDemoReport("layer", cols, records, seed,
                          {"steps": steps, "trained": trained, "gate_l1": gate_l1}, summary)
