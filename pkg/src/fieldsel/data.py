"""Categorical datasets: CSV ingestion, splitting and a planted-signal generator."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import sigmoid_values
from .errors import ConfigError, DataError, NumericError
from .model import FieldSchema

CACHE_FORMAT_VERSION = 1


@dataclass
class TabularDataset:
    schema: FieldSchema
    rows: np.ndarray  # (n, F) int64 vocabulary indices
    labels: np.ndarray  # (n,) float64 in {0, 1}
    provenance: dict = field(default_factory=dict)
    vocabularies: list[dict[str, int]] | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64).reshape(-1, self.schema.num_fields)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if len(self.rows) != len(self.labels):
            raise DataError(f"{len(self.rows)} rows but {len(self.labels)} labels")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise DataError("labels must be 0 or 1")
        for k, v in enumerate(self.schema.vocab_sizes):
            col = self.rows[:, k]
            if col.size and (col.min() < 0 or col.max() >= v):
                raise DataError(f"index out of range in field {self.schema.names[k]!r}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def positive_rate(self) -> float:
        return float(self.labels.mean()) if len(self) else float("nan")

    def take(self, idx, tag: str | None = None) -> "TabularDataset":
        prov = dict(self.provenance)
        if tag:
            prov["part"] = tag
        return TabularDataset(self.schema, self.rows[idx], self.labels[idx], prov, self.vocabularies)

    def select_fields(self, field_indices) -> "TabularDataset":
        field_indices = list(field_indices)
        vocabs = None if self.vocabularies is None else [self.vocabularies[i] for i in field_indices]
        prov = dict(self.provenance, fields=[self.schema.names[i] for i in field_indices])
        return TabularDataset(self.schema.subset(field_indices), self.rows[:, field_indices],
                              self.labels, prov, vocabs)


def _split_sizes(n: int) -> tuple[int, int]:
    n_train = (8 * n) // 10
    n_val = n // 10
    return n_train, n_val


def split_permutation(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).permutation(n)


def split_dataset(dataset: TabularDataset, seed: int = 0):
    """Seeded shuffle, then a contiguous 8:1:1 cut; the test part takes the remainder."""
    n = len(dataset)
    if n < 10:
        raise DataError(f"need at least 10 rows to split, got {n}")
    perm = split_permutation(n, seed)
    n_train, n_val = _split_sizes(n)
    return (dataset.take(perm[:n_train], "train"),
            dataset.take(perm[n_train:n_train + n_val], "validation"),
            dataset.take(perm[n_train + n_val:], "test"))


def load_csv(path, label_column: str = "label", split_seed: int | None = None,
             embed_dim: int = 8) -> TabularDataset:
    """Read a header-first CSV of categorical columns and a 0/1 label column.

    Vocabularies enumerate categories in order of first appearance. When
    ``split_seed`` is given they are built from the rows that
    ``split_dataset(..., seed=split_seed)`` puts in the training part; other
    rows map unseen categories to the OOV index 0. Without it every row counts
    as training.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header")
        raw = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} values, got {len(rec)}")
            raw.append(rec)

    label_pos = header.index(label_column)
    field_pos = [i for i in range(len(header)) if i != label_pos]
    names = [header[i] for i in field_pos]
    labels = np.empty(len(raw))
    for r, rec in enumerate(raw):
        value = rec[label_pos].strip()
        if value not in ("0", "1"):
            raise DataError(f"{path}:{r + 2}: non-binary label {value!r}")
        labels[r] = float(value)

    n = len(raw)
    if split_seed is None:
        train_mask = np.ones(n, dtype=bool)
    else:
        if n < 10:
            raise DataError(f"need at least 10 rows to split, got {n}")
        train_mask = np.zeros(n, dtype=bool)
        train_mask[split_permutation(n, split_seed)[:_split_sizes(n)[0]]] = True

    vocabs: list[dict[str, int]] = []
    rows = np.zeros((n, len(field_pos)), dtype=np.int64)
    for k, pos in enumerate(field_pos):
        vocab: dict[str, int] = {}
        for r in np.flatnonzero(train_mask):
            vocab.setdefault(raw[r][pos], len(vocab) + 1)
        for r in range(n):
            rows[r, k] = vocab.get(raw[r][pos], 0)
        vocabs.append(vocab)

    schema = FieldSchema(tuple((nm, len(v) + 1) for nm, v in zip(names, vocabs)), embed_dim)
    prov = {"source": str(path), "label_column": label_column, "split_seed": split_seed}
    return TabularDataset(schema, rows, labels, prov, vocabs)


def save_dataset(dataset: TabularDataset, path) -> None:
    """Binary snapshot (npz) with schema, indices and labels."""
    import json
    meta = {"version": CACHE_FORMAT_VERSION, "schema": dataset.schema.to_dict(),
            "provenance": dataset.provenance, "vocabularies": dataset.vocabularies}
    with open(path, "wb") as fh:
        np.savez(fh, rows=dataset.rows, labels=dataset.labels, meta=np.array(json.dumps(meta)))


def load_dataset(path) -> TabularDataset:
    import json
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != CACHE_FORMAT_VERSION:
            raise DataError(f"unsupported dataset cache version {meta.get('version')}")
        return TabularDataset(FieldSchema.from_dict(meta["schema"]), z["rows"], z["labels"],
                              meta["provenance"], meta["vocabularies"])


# -- synthetic data with planted informative fields -----------------------

@dataclass(frozen=True)
class SyntheticSpec:
    n_rows: int = 50_000
    n_fields: int = 20
    planted: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    vocab_size: int | tuple[int, ...] = 100
    target_positive_rate: float = 0.3
    interaction_pairs: tuple[tuple[int, int], ...] = ()
    seed: int = 0
    weight_scale: float = 1.0
    embed_dim: int = 8

    def __post_init__(self):
        object.__setattr__(self, "planted", tuple(int(i) for i in self.planted))
        object.__setattr__(self, "interaction_pairs",
                           tuple((int(a), int(b)) for a, b in self.interaction_pairs))
        if isinstance(self.vocab_size, (list, tuple)):
            object.__setattr__(self, "vocab_size", tuple(int(v) for v in self.vocab_size))
        if self.n_rows < 1 or self.n_fields < 1:
            raise ConfigError("n_rows and n_fields must be positive")
        if not all(0 <= i < self.n_fields for i in self.planted):
            raise ConfigError("planted fields must index existing fields")
        if len(set(self.planted)) != len(self.planted):
            raise ConfigError("planted fields must be distinct")
        if not all(0 <= i < self.n_fields for p in self.interaction_pairs for i in p):
            raise ConfigError("interaction pairs must index existing fields")
        if not 0 < self.target_positive_rate < 1:
            raise ConfigError("target_positive_rate must lie in (0, 1)")
        if any(v < 1 for v in self.vocab_sizes):
            raise ConfigError("vocab sizes must be positive")

    @property
    def vocab_sizes(self) -> tuple[int, ...]:
        if isinstance(self.vocab_size, tuple):
            if len(self.vocab_size) != self.n_fields:
                raise ConfigError("one vocab size per field required")
            return self.vocab_size
        return (int(self.vocab_size),) * self.n_fields

    def field_names(self) -> list[str]:
        return [f"f{i:02d}" for i in range(self.n_fields)]


@dataclass
class PlantedWeights:
    main: dict[int, np.ndarray]  # field -> (vocab+1,) weights, slot 0 unused
    pairs: dict[tuple[int, int], np.ndarray]  # (j, k) -> (vocab_j+1, vocab_k+1)


def planted_weights(spec: SyntheticSpec) -> PlantedWeights:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    sizes = spec.vocab_sizes
    main = {f: np.concatenate([[0.0], rng.normal(0.0, spec.weight_scale, sizes[f])])
            for f in sorted(spec.planted)}
    pairs = {}
    for j, k in spec.interaction_pairs:
        table = np.zeros((sizes[j] + 1, sizes[k] + 1))
        table[1:, 1:] = rng.normal(0.0, spec.weight_scale, (sizes[j], sizes[k]))
        pairs[(j, k)] = table
    return PlantedWeights(main, pairs)


def signal_logits(spec: SyntheticSpec, rows: np.ndarray, weights: PlantedWeights | None = None) -> np.ndarray:
    """Label-generating logits without the intercept; reads planted columns only."""
    weights = weights or planted_weights(spec)
    rows = np.asarray(rows)
    z = np.zeros(len(rows))
    for f, w in weights.main.items():
        z += w[rows[:, f]]
    for (j, k), table in weights.pairs.items():
        z += table[rows[:, j], rows[:, k]]
    return z


def _solve_intercept(z: np.ndarray, u: np.ndarray, target: float, tol: float = 1e-12) -> float:
    def rate(b):
        return float(np.mean(u < sigmoid_values(z + b)))

    lo, hi = -50.0, 50.0
    if not rate(lo) <= target <= rate(hi):
        raise NumericError("positive-rate bisection has no bracket")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if rate(mid) < target:
            lo = mid
        else:
            hi = mid
    return hi


def generate_synthetic(spec: SyntheticSpec) -> TabularDataset:
    """Uniform categorical fields; Bernoulli labels driven by the planted fields only."""
    sizes = spec.vocab_sizes
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    rows = np.stack([rng.integers(1, v + 1, size=spec.n_rows) for v in sizes], axis=1)
    u = np.random.default_rng(np.random.SeedSequence([spec.seed, 2])).random(spec.n_rows)
    z = signal_logits(spec, rows)
    b0 = _solve_intercept(z, u, spec.target_positive_rate)
    labels = (u < sigmoid_values(z + b0)).astype(np.float64)
    rate = labels.mean()
    if abs(rate - spec.target_positive_rate) > 0.02:
        raise NumericError(f"positive rate {rate:.4f} misses target {spec.target_positive_rate}")
    schema = FieldSchema(tuple((nm, v + 1) for nm, v in zip(spec.field_names(), sizes)), spec.embed_dim)
    prov = {"source": "synthetic", "seed": spec.seed, "planted": list(spec.planted),
            "interaction_pairs": [list(p) for p in spec.interaction_pairs],
            "intercept": b0, "target_positive_rate": spec.target_positive_rate}
    return TabularDataset(schema, rows, labels, prov)
