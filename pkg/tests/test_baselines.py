import numpy as np
import pytest

from fieldsel.baselines import (KINDS, BaselineConfig, DatasetEmbeddingStats, baseline_logit_audit,
                                compute_baseline, embedding_stats, empirical_boundary_logit,
                                project_to_boundary)
from fieldsel.data import TabularDataset
from fieldsel.errors import ConfigError, NumericError
from fieldsel.model import CtrModel, FieldSchema, init_model, predict_logit

from conftest import small_schema


def linear_model(w, bias=0.0, F=2, d=2):
    schema = FieldSchema(tuple((f"f{i}", 3) for i in range(F)), d)
    tables = [np.arange(3 * d, dtype=float).reshape(3, d) * 0.1 for _ in range(F)]
    return CtrModel(schema, "linear", (), tables, {"linear": np.asarray(w, float).reshape(-1, 1),
                                                   "bias": np.array([bias])})


class TestSimpleKinds:
    def test_smoothing(self):
        e = np.array([[[1.0, 0.0], [3.0, 2.0]]])
        np.testing.assert_array_equal(compute_baseline("smoothing", e), [[[2.0, 1.0], [2.0, 1.0]]])

    def test_smoothing_single_field_is_identity(self, rng):
        e = rng.normal(size=(4, 1, 3))
        np.testing.assert_array_equal(compute_baseline("smoothing", e), e)

    def test_zero(self, rng):
        assert not compute_baseline("zero", rng.normal(size=(2, 3, 4))).any()

    def test_mean_from_training_stats(self):
        stats = DatasetEmbeddingStats.from_block(np.array([[[0.0, 0.0]], [[2.0, 4.0]]]))
        out = compute_baseline("mean", np.full((3, 1, 2), 7.0), stats=stats)
        np.testing.assert_array_equal(out, np.broadcast_to([1.0, 2.0], (3, 1, 2)))

    def test_mean_needs_stats(self):
        with pytest.raises(ConfigError):
            compute_baseline("mean", np.zeros((1, 1, 1)))

    def test_swap_is_per_field_multiset(self, rng):
        e = rng.normal(size=(9, 3, 2))
        out = compute_baseline("swap", e, rng=np.random.default_rng(0))
        for k in range(3):
            assert sorted(map(tuple, out[:, k])) == sorted(map(tuple, e[:, k]))
        assert not np.array_equal(out, e)

    def test_swap_identity_permutation(self, rng):
        e = rng.normal(size=(5, 2, 2))
        np.testing.assert_array_equal(compute_baseline("swap", e, permutation=np.arange(5)), e)

    def test_uniform_inside_range(self, rng):
        train = rng.normal(size=(50, 3, 2))
        stats = DatasetEmbeddingStats.from_block(train)
        out = compute_baseline("uniform", rng.normal(size=(200, 3, 2)), stats=stats, rng=rng)
        assert (out >= stats.min).all() and (out <= stats.max).all()

    def test_embedding_stats_match_block(self):
        model = init_model(small_schema(), "linear", seed=0)
        rows = np.array([[1, 2, 3], [0, 2, 4], [4, 4, 4]])
        ds = TabularDataset(model.schema, rows, np.array([1.0, 0.0, 1.0]))
        from fieldsel.model import embed
        block = embed(model, rows)
        stats = embedding_stats(model, ds, batch_size=2)
        np.testing.assert_allclose(stats.mean, block.mean(axis=0), rtol=1e-12)
        np.testing.assert_array_equal(stats.min, block.min(axis=0))
        np.testing.assert_array_equal(stats.max, block.max(axis=0))

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            BaselineConfig("median")


class TestProjection:
    @pytest.mark.parametrize("target", [0.0, -1.2])
    def test_linear_matches_hyperplane_projection(self, rng, target):
        w = np.array([0.5, -1.0, 2.0, 0.25])
        model = linear_model(w, bias=0.3)
        e = rng.normal(size=(20, 2, 2))
        res = project_to_boundary(model, e, boundary_logit=target, tol=1e-10, max_iters=500)
        flat = e.reshape(20, -1)
        oracle = flat - ((flat @ w + 0.3 - target) / (w @ w))[:, None] * w
        np.testing.assert_allclose(res.block.reshape(20, -1), oracle, atol=1e-8)
        assert (res.residuals <= 1e-10).all()

    def test_already_on_boundary(self):
        model = linear_model([1.0, 0.0, 0.0, 0.0])
        e = np.zeros((3, 2, 2))
        e[:, 1] = [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]
        res = project_to_boundary(model, e)
        np.testing.assert_array_equal(res.block, e)
        assert not res.iterations.any()

    def test_constant_model_raises(self):
        model = linear_model(np.zeros(4), bias=1.0)
        with pytest.raises(NumericError, match="zero logit gradient"):
            project_to_boundary(model, np.ones((2, 2, 2)))

    def test_trained_mlp_within_tol(self, trained_mlp, planted_splits):
        _, (_, va, _) = planted_splits
        from fieldsel.model import embed
        e = embed(trained_mlp, va.rows[:200])
        res = project_to_boundary(trained_mlp, e, tol=1e-3)
        assert (res.residuals <= 1e-3).all()
        np.testing.assert_allclose(np.abs(predict_logit(trained_mlp, res.block)), res.residuals, atol=1e-12)

    def test_bad_arguments(self):
        with pytest.raises(ConfigError):
            project_to_boundary(linear_model(np.ones(4)), np.zeros((1, 2, 2)), step_size=0.0)


def test_empirical_boundary_logit():
    assert empirical_boundary_logit([1, 0, 0, 0]) == pytest.approx(np.log(1 / 3))
    with pytest.raises(ConfigError):
        empirical_boundary_logit([1, 1])


class TestAudit:
    def test_schema_and_projection(self, trained_mlp, planted_splits):
        _, (tr, va, _) = planted_splits
        recs = baseline_logit_audit(trained_mlp, va, stats=embedding_stats(trained_mlp, tr))
        assert [r["kind"] for r in recs] == list(KINDS)
        assert all(np.isfinite(v) for r in recs for k, v in r.items() if k != "kind")
        proj = next(r for r in recs if r["kind"] == "boundary_projection")
        assert proj["mean_logit_distance"] <= 1e-3

    def test_single_field_smoothing_distance_zero(self):
        model = init_model(FieldSchema((("a", 4),), 3), "mlp", (3,), seed=0)
        ds = TabularDataset(model.schema, np.array([[1], [2], [3]]), np.array([1.0, 0.0, 1.0]))
        rec = baseline_logit_audit(model, ds, kinds=("smoothing",))[0]
        assert rec["mean_embedding_distance"] == 0.0
