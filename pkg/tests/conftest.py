"""Shared fixtures.

Heavy artifacts (trained models, full-set campaigns) are cached on disk under
ADVKIT_TEST_CACHE (default ~/.cache/advkit-tests) keyed by configuration and
data fingerprints, so repeated test runs skip retraining and re-attacking.
The MNIST IDX files are looked up via ADVKIT_DATA_DIR.
"""

import hashlib
import json
import os
from pathlib import Path

import numpy as np
import pytest

import advkit
from advkit import campaign as cp
from advkit import reports as rp
from advkit.layers import Architecture, Dense, SoftmaxOut

DATA_DIR = Path(os.environ.get("ADVKIT_DATA_DIR", "/root/data/mnist"))
CACHE_DIR = Path(os.environ.get("ADVKIT_TEST_CACHE",
                                str(Path.home() / ".cache" / "advkit-tests")))

_HAVE_DATA = (DATA_DIR / "train-images-idx3-ubyte").exists() or \
             (DATA_DIR / "train-images-idx3-ubyte.gz").exists()

needs_mnist = pytest.mark.skipif(not _HAVE_DATA,
                                 reason=f"MNIST IDX files not found in {DATA_DIR}")


@pytest.fixture(scope="session")
def mnist_train():
    if not _HAVE_DATA:
        pytest.skip(f"MNIST IDX files not found in {DATA_DIR}")
    return advkit.load_dataset(DATA_DIR, "train")


@pytest.fixture(scope="session")
def mnist_test():
    if not _HAVE_DATA:
        pytest.skip(f"MNIST IDX files not found in {DATA_DIR}")
    return advkit.load_dataset(DATA_DIR, "test")


@pytest.fixture(scope="session")
def cnn10(mnist_train, mnist_test):
    """The reference convolutional model: 10 epochs over the full train set."""
    return cp.get_or_train(CACHE_DIR, mnist_train, eval_set=mnist_test,
                           architecture="cnn", epochs=10, seed=0, log=print)


@pytest.fixture(scope="session")
def mlp2(mnist_train, mnist_test):
    """Fast fully-connected model: 2 epochs over the full train set."""
    return cp.get_or_train(CACHE_DIR, mnist_train, eval_set=mnist_test,
                           architecture="mlp", epochs=2, seed=0, log=print)


@pytest.fixture(scope="session")
def mlp_small(mnist_train):
    """Very small-budget model for functional tests: 1 epoch on 4000 images."""
    subset = mnist_train.subset(np.arange(4000))
    return cp.get_or_train(CACHE_DIR, subset, architecture="mlp", epochs=1, seed=0)


def cached_campaign(model, dataset, attack, *, targets=None, tag=""):
    """Run a campaign once; later calls with the same inputs reload records."""
    key_doc = {
        "model": hashlib.sha256(model.to_bytes()).hexdigest(),
        "data": dataset.fingerprint(),
        "attack": type(attack).__name__,
        "params": {k: repr(v) for k, v in attack.get_params().items()},
        "targets": targets,
        "tag": tag,
    }
    key = hashlib.sha256(json.dumps(key_doc, sort_keys=True).encode()).hexdigest()[:20]
    CACHE_DIR.mkdir(parents=True, exist_ok=True)
    path = CACHE_DIR / f"campaign-{key}.bin"
    if path.exists():
        records, m, shape = rp.read_outcomes(path)
        report = rp.build_report(records, m)
        return cp.CampaignData(records, m, shape, {}, report)
    data = cp.run_campaign(model, dataset, attack, targets=targets)
    rp.write_outcomes(path, data.records, data.num_classes, data.image_shape)
    return data


def linear_model(weight, bias, input_shape):
    """Dense->softmax model with hand-set parameters (for closed-form oracles)."""
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    arch = Architecture((Dense(weight.shape[0], "identity"), SoftmaxOut()),
                        input_shape=input_shape)
    model = advkit.NeuralNetClassifier(architecture=arch).initialize()
    assert model.layers_[0].weight.shape == weight.shape
    model.layers_[0].weight = weight
    model.layers_[0].bias = bias
    return model
