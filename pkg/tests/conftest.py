import numpy as np
import pytest


def random_spd(rng, n, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.exp(rng.uniform(0, np.log(cond), size=n))
    return (q * lam) @ q.T


def explicit_outer_sum(points, pairs):
    out = np.zeros((points.shape[1], points.shape[1]))
    for i, j in pairs:
        v = points[i] - points[j]
        out += np.outer(v, v)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def wine():
    sklearn_datasets = pytest.importorskip("sklearn.datasets")
    from lrgmml.pipeline import Dataset

    w = sklearn_datasets.load_wine()
    return Dataset(w.data, w.target, "wine")


@pytest.fixture(scope="session")
def wine_csv(tmp_path_factory, wine):
    path = tmp_path_factory.mktemp("data") / "wine.csv"
    with open(path, "w") as fh:
        for x, y in zip(wine.features, wine.labels):
            fh.write(",".join(repr(float(v)) for v in x) + f",class{y}\n")
    return path


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line[1])
