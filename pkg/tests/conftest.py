import numpy as np
import pytest

from fieldsel.data import SyntheticSpec, generate_synthetic, split_dataset
from fieldsel.model import FieldSchema, init_model
from fieldsel.trainer import TrainConfig, train


def small_schema(n_fields=3, vocab=5, embed_dim=4):
    return FieldSchema(tuple((f"f{i}", vocab) for i in range(n_fields)), embed_dim)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def planted_splits():
    spec = SyntheticSpec(n_rows=4000, n_fields=8, planted=(1, 4), vocab_size=20, seed=3)
    return spec, split_dataset(generate_synthetic(spec), 3)


@pytest.fixture(scope="session")
def trained_mlp(planted_splits):
    spec, (tr, va, te) = planted_splits
    model = init_model(tr.schema, "mlp", (16, 16), seed=5)
    model, _ = train(model, tr, va, TrainConfig(max_epochs=4, learning_rate=0.01, seed=5))
    return model


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.LINES):
        terminalreporter.write_line(mod.LINES[n])
