import numpy as np
import pytest

from lmufit import _backend
from lmufit.data import write_idx

BACKENDS = [name for name in ("compiled", "python") if name in _backend.BACKENDS]


@pytest.fixture(params=BACKENDS)
def backend(request):
    prev = _backend.active()
    _backend.set_backend(request.param)
    yield request.param
    _backend.set_backend(prev)


def write_mnist_subset(root, per_class_train=400, per_class_test=100, seed=0):
    """Write the 5000 MNIST digits bundled with mlxtend as the four IDX files.

    The bundle is sorted by class, so each class is shuffled and split
    ``per_class_train`` / ``per_class_test``; the train file is shuffled again.
    """
    mnist = pytest.importorskip("mlxtend.data")
    X, y = mnist.mnist_data()
    rng = np.random.default_rng(seed)
    tr, te = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(y == c))
        tr.append(idx[:per_class_train])
        te.append(idx[per_class_train:per_class_train + per_class_test])
    tr = rng.permutation(np.concatenate(tr))
    te = rng.permutation(np.concatenate(te))
    images = X.reshape(-1, 28, 28).astype(np.uint8)
    write_idx(root / "train-images-idx3-ubyte", images[tr])
    write_idx(root / "train-labels-idx1-ubyte", y[tr])
    write_idx(root / "t10k-images-idx3-ubyte.gz", images[te])
    write_idx(root / "t10k-labels-idx1-ubyte.gz", y[te])
    return root


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    return write_mnist_subset(tmp_path_factory.mktemp("mnist"))


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "_acceptance", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        ok, detail = results[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'} {detail}")
