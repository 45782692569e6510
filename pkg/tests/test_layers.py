"""Layer-level checks: shape chaining, architecture validation, and
finite-difference verification of every backward pass."""

import numpy as np
import pytest

import advkit
from advkit.errors import ConfigurationError
from advkit.layers import (Architecture, Conv, Dense, MaxPool, SoftmaxOut,
                           cnn_architecture, mlp_architecture)
from advkit.model import cross_entropy_loss


def central_diff_grad(model, x, label, pixels, eps=1e-5):
    """Independent finite-difference oracle for the loss gradient."""
    out = {}
    for (i, j) in pixels:
        xp, xm = x.copy(), x.copy()
        xp[i, j] += eps
        xm[i, j] -= eps
        fp = cross_entropy_loss(model.predict_bundle(xp), label)
        fm = cross_entropy_loss(model.predict_bundle(xm), label)
        out[(i, j)] = (fp - fm) / (2 * eps)
    return out


def assert_grad_matches(model, x, label, n_pixels=40, rtol=1e-4, seed=0):
    g = model.loss_gradient(x, label)
    rng = np.random.default_rng(seed)
    pixels = {(int(rng.integers(x.shape[0])), int(rng.integers(x.shape[1])))
              for _ in range(n_pixels)}
    fd = central_diff_grad(model, x, label, pixels)
    for (i, j), approx in fd.items():
        if abs(g[i, j]) > 1e-6:
            assert abs(approx - g[i, j]) / abs(g[i, j]) < rtol, (i, j)


def test_architecture_shape_chain():
    arch = cnn_architecture()
    shapes = arch.chain_shapes()
    assert shapes[0] == (1, 28, 28)
    assert shapes[1] == (32, 24, 24)
    assert shapes[2] == (32, 12, 12)
    assert shapes[3] == (64, 8, 8)
    assert shapes[4] == (64, 4, 4)
    assert shapes[5] == (256, 1, 1)
    assert arch.num_classes == 10


def test_architecture_rejects_degenerate_layers():
    with pytest.raises(ConfigurationError):
        Architecture((Dense(0, "relu"), Dense(10), SoftmaxOut()))
    with pytest.raises(ConfigurationError):
        Architecture((Dense(10),))  # no softmax terminal
    with pytest.raises(ConfigurationError, match="layer 0"):
        Architecture((Conv(8, 31), Dense(10), SoftmaxOut()))  # kernel > input


def test_architecture_text_round_trip():
    arch = cnn_architecture(feature_map_scale="double")
    again = Architecture.from_text(arch.to_text())
    assert again == arch
    assert again.to_text() == arch.to_text()


@pytest.mark.parametrize("scale,conv1,first_dense", [
    ("half", 16, 128), ("normal", 32, 256), ("double", 64, 512)])
def test_feature_map_scaling(scale, conv1, first_dense):
    layers = cnn_architecture(feature_map_scale=scale).scaled_layers()
    assert layers[0].out_maps == conv1
    assert layers[4].units == first_dense
    assert layers[5].units == 10  # classifier head never scales


def test_feature_map_scaling_mlp_and_floor():
    assert mlp_architecture("half").scaled_layers()[0].units == 64
    assert mlp_architecture("double").scaled_layers()[0].units == 256
    tiny = Architecture((Dense(1, "relu"), Dense(3), SoftmaxOut()),
                        feature_map_scale="half")
    assert tiny.scaled_layers()[0].units == 1  # floors at 1


@pytest.mark.parametrize("arch,shape", [
    (cnn_architecture(), (28, 28)),
    (mlp_architecture(), (28, 28)),
    (Architecture((Conv(3, 3, 2, "relu"), MaxPool(2), Dense(7, "relu"),
                   Dense(3), SoftmaxOut()), input_shape=(11, 13)), (11, 13)),
    (Architecture((Conv(2, 4, 3, "identity"), Dense(5, "relu"), Dense(4),
                   SoftmaxOut()), input_shape=(10, 10)), (10, 10)),
])
def test_gradients_match_finite_differences(arch, shape):
    model = advkit.NeuralNetClassifier(architecture=arch, seed=5).initialize()
    rng = np.random.default_rng(11)
    x = rng.uniform(0.05, 0.95, shape)
    assert_grad_matches(model, x, label=1)


def test_maxpool_tie_routes_gradient_to_first_window_element():
    arch = Architecture((MaxPool(2), Dense(2), SoftmaxOut()), input_shape=(2, 2))
    model = advkit.NeuralNetClassifier(architecture=arch, seed=0).initialize()
    x = np.full((2, 2), 0.5)  # 4-way tie inside the single pooling window
    g = model.loss_gradient(x, 0)
    assert g[0, 0] != 0.0
    assert g[0, 1] == g[1, 0] == g[1, 1] == 0.0


def test_conv_stride_remainder_pixels_get_zero_gradient():
    # kernel 4, stride 3 on width 10: positions 0,3,6 cover pixels 0..9,
    # but height 10 with the same geometry leaves row 9 unused
    arch = Architecture((Conv(2, 4, 3, "identity"), Dense(3), SoftmaxOut()),
                        input_shape=(11, 10))
    model = advkit.NeuralNetClassifier(architecture=arch, seed=2).initialize()
    x = np.random.default_rng(0).random((11, 10))
    g = model.loss_gradient(x, 0)
    assert np.all(g[10, :] == 0.0)
    assert np.any(g[:10, :] != 0.0)


def test_jacobian_matches_finite_differences():
    model = advkit.NeuralNetClassifier(architecture="mlp", seed=3).initialize()
    rng = np.random.default_rng(4)
    x = rng.uniform(0.1, 0.9, (28, 28))
    jac = model.input_jacobian(x, basis="prediction")
    eps = 1e-5
    for _ in range(25):
        i, j = int(rng.integers(28)), int(rng.integers(28))
        xp, xm = x.copy(), x.copy()
        xp[i, j] += eps
        xm[i, j] -= eps
        fd = (model.predict_bundle(xp).prediction
              - model.predict_bundle(xm).prediction) / (2 * eps)
        sel = np.abs(jac[:, i, j]) > 1e-6
        if sel.any():
            rel = np.abs(fd[sel] - jac[sel, i, j]) / np.abs(jac[sel, i, j])
            assert rel.max() < 1e-4
