import numpy as np
import pytest

from avgsgd import Dataset, LossFamily, LossModel

ACCEPTANCE_LINES = []

FAMILIES = ["logistic", "sqrt_binary", "log_cosh", "multinomial"]


def random_instance(family, rng, d=5, n=20, K=3):
    """Random dataset with features in the unit ball and a model certified for it."""
    X = rng.standard_normal((n, d))
    X /= np.maximum(np.linalg.norm(X, axis=1, keepdims=True), 1.0)
    fam = LossFamily(family)
    if fam is LossFamily.MULTINOMIAL:
        y = rng.integers(0, K, n).astype(float)
    elif fam is LossFamily.LOG_COSH or fam is LossFamily.QUADRATIC:
        y = rng.standard_normal(n)
    else:
        y = rng.choice([-1.0, 1.0], n)
    data = Dataset(X, y, radius=1.0)
    return LossModel.for_dataset(fam, data, n_classes=K), data


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
