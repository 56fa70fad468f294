"""CTR predictors over field embeddings: linear, FM, MLP and FM+MLP."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError

ARCHS = ("linear", "fm", "mlp", "fm+mlp")
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class FieldSchema:
    """Ordered categorical fields. Index 0 of each vocabulary is the OOV slot."""

    fields: tuple[tuple[str, int], ...]
    embed_dim: int = 8

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple((str(n), int(v)) for n, v in self.fields))
        names = self.names
        if len(set(names)) != len(names):
            raise ConfigError(f"field names must be unique: {names}")
        if any(v < 1 for _, v in self.fields):
            raise ConfigError("every vocabulary needs at least the OOV slot")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be positive")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.fields]

    @property
    def vocab_sizes(self) -> list[int]:
        return [v for _, v in self.fields]

    @property
    def num_fields(self) -> int:
        return len(self.fields)

    def subset(self, indices) -> "FieldSchema":
        return FieldSchema(tuple(self.fields[i] for i in indices), self.embed_dim)

    def to_dict(self) -> dict:
        return {"fields": [list(f) for f in self.fields], "embed_dim": self.embed_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "FieldSchema":
        return cls(tuple(tuple(f) for f in d["fields"]), int(d["embed_dim"]))


@dataclass
class CtrModel:
    """Embedding tables plus predictor parameters.

    ``params`` holds the predictor matrices in a fixed order: optional
    ``gate`` (F,), ``linear`` (F*d, 1), ``mlp.<i>`` hidden weights,
    ``mlp.out`` (h, 1) and ``bias`` (1,). Hidden layers carry no bias so
    an all-zero embedding block always maps to the scalar bias.
    """

    schema: FieldSchema
    arch: str
    hidden_dims: tuple[int, ...]
    embeddings: list[np.ndarray]
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def num_fields(self) -> int:
        return self.schema.num_fields

    @property
    def embed_dim(self) -> int:
        return self.schema.embed_dim

    @property
    def gated(self) -> bool:
        return "gate" in self.params

    def copy(self) -> "CtrModel":
        return copy.deepcopy(self)

    def all_arrays(self) -> dict[str, np.ndarray]:
        out = {f"emb.{k}": t for k, t in enumerate(self.embeddings)}
        out.update(self.params)
        return out


def init_model(schema: FieldSchema, arch: str = "mlp", hidden_dims=(16, 16), seed: int = 0,
               gated: bool = False, embed_scale: float = 0.01) -> CtrModel:
    """Xavier-uniform weights, uniform(-embed_scale, embed_scale) embeddings, zero bias."""
    if arch not in ARCHS:
        raise ConfigError(f"unknown arch {arch!r}; expected one of {ARCHS}")
    hidden_dims = tuple(int(h) for h in hidden_dims)
    if any(h < 1 for h in hidden_dims):
        raise ConfigError("hidden widths must be positive")
    rng = np.random.default_rng(seed)
    d, F = schema.embed_dim, schema.num_fields
    embeddings = [rng.uniform(-embed_scale, embed_scale, size=(v, d)) for v in schema.vocab_sizes]

    def xavier(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    params: dict[str, np.ndarray] = {}
    if gated:
        params["gate"] = np.ones(F)
    if arch in ("linear", "fm", "fm+mlp"):
        params["linear"] = xavier(F * d, 1)
    if arch in ("mlp", "fm+mlp"):
        width = F * d
        for i, h in enumerate(hidden_dims):
            params[f"mlp.{i}"] = xavier(width, h)
            width = h
        params["mlp.out"] = xavier(width, 1)
    params["bias"] = np.zeros(1)
    return CtrModel(schema, arch, hidden_dims if "mlp" in arch else (), embeddings, params)


def embed(model: CtrModel, indices) -> np.ndarray:
    """Look up a (n, F) index block into an (n, F, d) embedding block."""
    idx = np.asarray(indices)
    if idx.ndim != 2 or idx.shape[1] != model.num_fields:
        raise DataError(f"index block shape {idx.shape} does not match {model.num_fields} fields")
    out = np.empty((idx.shape[0], model.num_fields, model.embed_dim))
    for k, table in enumerate(model.embeddings):
        col = idx[:, k]
        if col.size and (col.min() < 0 or col.max() >= table.shape[0]):
            raise DataError(f"index out of range for field {model.schema.names[k]!r}")
        out[:, k, :] = table[col]
    return out


def check_block(model: CtrModel, embeddings) -> np.ndarray:
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 3 or e.shape[1:] != (model.num_fields, model.embed_dim):
        raise ValueError(
            f"embedding block shape {e.shape} does not match (n, {model.num_fields}, {model.embed_dim})")
    return e


def logit_graph(model: CtrModel, emb: ad.Tensor, params: dict[str, ad.Tensor]) -> ad.Tensor:
    """Build the logit computation; returns an (n,) tensor."""
    n, F, d = emb.shape
    x = emb
    if "gate" in params:
        with ad.scope("gate"):
            x = x * ad.reshape(params["gate"], (1, F, 1))
    flat = ad.reshape(x, (n, F * d))
    terms = []
    if "linear" in params:
        with ad.scope("linear"):
            terms.append(ad.reshape(flat @ params["linear"], (n,)))
    if model.arch in ("fm", "fm+mlp"):
        with ad.scope("fm"):
            s = ad.sum(x, axis=1)
            pair = ad.sum(ad.square(s), axis=1) - ad.sum(ad.square(x), axis=(1, 2))
            terms.append(pair * 0.5)
    if model.arch in ("mlp", "fm+mlp"):
        h = flat
        for i in range(len(model.hidden_dims)):
            with ad.scope(f"mlp.{i}"):
                h = ad.relu(h @ params[f"mlp.{i}"])
        with ad.scope("mlp.out"):
            terms.append(ad.reshape(h @ params["mlp.out"], (n,)))
    out = params["bias"]
    for t in terms:
        out = out + t
    if out.shape != (n,):
        out = out + np.zeros(n)
    return out


def predict_logit(model: CtrModel, embeddings) -> np.ndarray:
    e = check_block(model, embeddings)
    params = {k: ad.constant(v) for k, v in model.params.items()}
    return logit_graph(model, ad.constant(e), params).value


def predict_indices(model: CtrModel, indices, batch_size: int = 8192) -> np.ndarray:
    idx = np.asarray(indices)
    out = [predict_logit(model, embed(model, idx[i:i + batch_size]))
           for i in range(0, len(idx), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def check_labels(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0 or 1")
    return y


def per_sample_bce(logits, labels) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    y = check_labels(labels)
    return np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))


def bce_loss(logits, labels) -> float:
    """Mean binary cross-entropy of logits, numerically stable form."""
    return float(np.mean(per_sample_bce(logits, labels)))


# -- serialization ---------------------------------------------------------

def model_to_dict(model: CtrModel) -> dict:
    return {
        "format": "fieldsel-model",
        "version": MODEL_FORMAT_VERSION,
        "schema": model.schema.to_dict(),
        "arch": model.arch,
        "hidden_dims": list(model.hidden_dims),
        "embeddings": [t.tolist() for t in model.embeddings],
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                   for k, v in model.params.items()},
    }


def model_from_dict(d: dict) -> CtrModel:
    if d.get("format") != "fieldsel-model":
        raise DataError("not a model file")
    if d.get("version") != MODEL_FORMAT_VERSION:
        raise DataError(f"unsupported model format version {d.get('version')}")
    schema = FieldSchema.from_dict(d["schema"])
    embeddings = [np.array(t, dtype=np.float64).reshape(v, schema.embed_dim)
                  for t, v in zip(d["embeddings"], schema.vocab_sizes)]
    params = {k: np.array(p["data"], dtype=np.float64).reshape(p["shape"])
              for k, p in d["params"].items()}
    return CtrModel(schema, d["arch"], tuple(d["hidden_dims"]), embeddings, params)


def save_model(model: CtrModel, path) -> None:
    # json writes floats via repr, which round-trips float64 exactly
    Path(path).write_text(json.dumps(model_to_dict(model), allow_nan=False) + "\n", encoding="utf-8")


def load_model(path) -> CtrModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
