import numpy as np
import pytest

from fieldsel.data import (SyntheticSpec, TabularDataset, generate_synthetic, load_csv, load_dataset,
                           planted_weights, save_dataset, signal_logits, split_dataset)
from fieldsel.errors import ConfigError, DataError

from conftest import small_schema


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def dummy(n):
    return TabularDataset(small_schema(1), np.zeros((n, 1), dtype=int), np.arange(n) % 2)


class TestCsv:
    def test_vocab_first_appearance(self, tmp_path):
        ds = load_csv(write(tmp_path / "a.csv", "city,label\na,1\na,0\nb,1\n"))
        assert ds.vocabularies == [{"a": 1, "b": 2}]
        assert ds.schema.fields == (("city", 3),)
        np.testing.assert_array_equal(ds.rows[:, 0], [1, 1, 2])
        np.testing.assert_array_equal(ds.labels, [1, 0, 1])

    def test_label_column_anywhere(self, tmp_path):
        ds = load_csv(write(tmp_path / "a.csv", "y,u,v\n1,p,q\n0,p,r\n"), label_column="y")
        assert ds.schema.names == ["u", "v"]
        np.testing.assert_array_equal(ds.rows, [[1, 1], [1, 2]])

    def test_unseen_category_maps_to_oov(self, tmp_path):
        lines = ["c,label"] + [f"v{i},{i % 2}" for i in range(20)]
        ds = load_csv(write(tmp_path / "a.csv", "\n".join(lines) + "\n"), split_seed=0)
        tr, va, te = split_dataset(ds, 0)
        assert (tr.rows > 0).all()
        # every value is unique, so nothing outside training is in the vocabulary
        assert (va.rows == 0).all() and (te.rows == 0).all()
        assert len(ds.vocabularies[0]) == 16

    def test_non_binary_label(self, tmp_path):
        with pytest.raises(DataError, match="non-binary"):
            load_csv(write(tmp_path / "a.csv", "c,label\na,2\n"))

    def test_missing_label_column(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(write(tmp_path / "a.csv", "c,y\na,1\n"))

    def test_ragged_row(self, tmp_path):
        with pytest.raises(DataError, match=":3"):
            load_csv(write(tmp_path / "a.csv", "c,label\na,1\nb\n"))

    def test_empty_file(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(write(tmp_path / "a.csv", ""))


class TestSplit:
    @pytest.mark.parametrize("n,sizes", [(100, (80, 10, 10)), (10, (8, 1, 1)), (101, (80, 10, 11))])
    def test_sizes(self, n, sizes):
        assert tuple(len(p) for p in split_dataset(dummy(n), 0)) == sizes

    def test_partition_and_seed(self):
        ds = TabularDataset(small_schema(1, vocab=200), np.arange(150).reshape(-1, 1), np.zeros(150))
        parts = split_dataset(ds, 4)
        rows = np.concatenate([p.rows[:, 0] for p in parts])
        assert sorted(rows) == list(range(150))
        again = split_dataset(ds, 4)
        assert all((a.rows == b.rows).all() for a, b in zip(parts, again))
        assert not (split_dataset(ds, 5)[0].rows == parts[0].rows).all()

    def test_too_small(self):
        with pytest.raises(DataError):
            split_dataset(dummy(9), 0)


class TestDataset:
    def test_index_range_checked(self):
        with pytest.raises(DataError):
            TabularDataset(small_schema(1, vocab=3), np.array([[3]]), np.array([1.0]))

    def test_select_fields(self):
        ds = TabularDataset(small_schema(3), np.array([[1, 2, 3], [4, 0, 1]]), np.array([1.0, 0.0]))
        sub = ds.select_fields([2, 0])
        assert sub.schema.names == ["f2", "f0"]
        np.testing.assert_array_equal(sub.rows, [[3, 1], [1, 4]])

    def test_cache_round_trip(self, tmp_path):
        ds = generate_synthetic(SyntheticSpec(n_rows=200, n_fields=4, planted=(1,), vocab_size=7, seed=2))
        save_dataset(ds, tmp_path / "d.npz")
        back = load_dataset(tmp_path / "d.npz")
        assert back.schema == ds.schema
        np.testing.assert_array_equal(back.rows, ds.rows)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.provenance == ds.provenance


class TestSynthetic:
    def test_deterministic(self):
        spec = SyntheticSpec(n_rows=3000, n_fields=5, planted=(0, 2), vocab_size=10, seed=11)
        a, b = generate_synthetic(spec), generate_synthetic(spec)
        assert a.rows.tobytes() == b.rows.tobytes() and a.labels.tobytes() == b.labels.tobytes()

    @pytest.mark.parametrize("seed", range(3))
    def test_positive_rate(self, seed):
        ds = generate_synthetic(SyntheticSpec(n_rows=20_000, target_positive_rate=0.10, seed=seed))
        assert 0.08 <= ds.positive_rate <= 0.12

    def test_categories_exclude_oov(self):
        ds = generate_synthetic(SyntheticSpec(n_rows=2000, n_fields=3, planted=(0,), vocab_size=4))
        assert ds.rows.min() == 1 and ds.rows.max() == 4
        assert ds.schema.vocab_sizes == [5, 5, 5]

    def test_signal_reads_planted_columns_only(self, rng):
        spec = SyntheticSpec(n_rows=500, n_fields=6, planted=(1, 3), vocab_size=9, interaction_pairs=((1, 3),))
        ds = generate_synthetic(spec)
        shuffled = ds.rows.copy()
        for k in (0, 2, 4, 5):
            shuffled[:, k] = rng.permutation(shuffled[:, k])
        np.testing.assert_array_equal(signal_logits(spec, ds.rows), signal_logits(spec, shuffled))
        assert set(planted_weights(spec).main) == {1, 3}

    def test_empty_planted_set_has_constant_signal(self):
        spec = SyntheticSpec(n_rows=500, n_fields=3, planted=(), vocab_size=9)
        assert not signal_logits(spec, generate_synthetic(spec).rows).any()

    def test_provenance(self):
        ds = generate_synthetic(SyntheticSpec(n_rows=500, n_fields=4, planted=(2, 0)))
        assert ds.provenance["planted"] == [2, 0] and "intercept" in ds.provenance

    @pytest.mark.parametrize("kw", [{"planted": (20,)}, {"planted": (1, 1)}, {"target_positive_rate": 1.0},
                                    {"n_rows": 0}])
    def test_invalid_generator_settings(self, kw):
        with pytest.raises(ConfigError):
            SyntheticSpec(**kw)
