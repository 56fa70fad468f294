"""Loss gradients of a CTR model, by reverse mode and by central differences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .errors import ConfigError
from .model import CtrModel, check_block, check_labels, logit_graph


@dataclass
class GradientBundle:
    """Gradients of the batch loss.

    ``param_grads`` mirrors ``model.params`` key for key. ``input_grads`` has
    the (n, F, d) shape of the embedding block and is None unless requested.
    """

    loss: float
    param_grads: dict[str, np.ndarray]
    input_grads: np.ndarray | None = None
    logits: np.ndarray | None = None


def _reduce(losses: ad.Tensor, reduction: str) -> ad.Tensor:
    if reduction == "mean":
        return ad.mean(losses)
    if reduction == "sum":
        return ad.sum(losses)
    raise ConfigError(f"unknown reduction {reduction!r}")


def loss_graph(model, embeddings, labels, reduction="mean", want_input_grads=True):
    """Returns (loss tensor, embedding leaf, param leaves, logits tensor)."""
    e = check_block(model, embeddings)
    y = check_labels(labels)
    if y.shape != (e.shape[0],):
        raise ValueError(f"{y.shape[0] if y.ndim else 0} labels for {e.shape[0]} samples")
    emb = ad.variable(e) if want_input_grads else ad.constant(e)
    params = {k: ad.variable(v) for k, v in model.params.items()}
    logits = logit_graph(model, emb, params)
    with ad.scope("loss"):
        loss = _reduce(ad.bce_with_logits(logits, y), reduction)
    return loss, emb, params, logits


def forward_backward(model: CtrModel, embeddings, labels, want_input_grads: bool = False,
                     reduction: str = "mean") -> GradientBundle:
    """Binary cross-entropy of the batch and its exact reverse-mode gradients.

    ``reduction="sum"`` gives per-sample loss gradients in ``input_grads``,
    which is what the importance estimators need.
    """
    loss, emb, params, logits = loss_graph(model, embeddings, labels, reduction, want_input_grads)
    ad.backward(loss)
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.value)) for k, p in params.items()}
    input_grads = None
    if want_input_grads:
        input_grads = emb.grad if emb.grad is not None else np.zeros_like(emb.value)
    return GradientBundle(float(loss.value), grads, input_grads, logits.value)


def numeric_derivative(fn: Callable[[np.ndarray], float], x, step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    if step <= 0:
        raise ConfigError("finite-difference step must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def finite_difference_gradients(model: CtrModel, embeddings, labels, step: float = 1e-4,
                                want_input_grads: bool = True,
                                reduction: str = "mean") -> GradientBundle:
    """Central-difference estimate of everything :func:`forward_backward` returns."""
    if step <= 0:
        raise ConfigError("finite-difference step must be positive")
    e = check_block(model, embeddings).copy()
    y = check_labels(labels)
    probe = model.copy()

    def loss_at() -> float:
        loss, *_ = loss_graph(probe, e, y, reduction, want_input_grads=False)
        return float(loss.value)

    grads = {}
    for name in probe.params:
        arr = probe.params[name]
        grads[name] = numeric_derivative(lambda v: _set_and_eval(arr, v, loss_at), arr.copy(), step)
    input_grads = None
    if want_input_grads:
        input_grads = numeric_derivative(lambda v: _set_and_eval(e, v, loss_at), e.copy(), step)
    return GradientBundle(loss_at(), grads, input_grads)


def _set_and_eval(target: np.ndarray, value: np.ndarray, fn) -> float:
    saved = target.copy()
    target[...] = value
    try:
        return fn()
    finally:
        target[...] = saved
