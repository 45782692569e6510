"""Feed-forward image classifier with analytic input gradients.

The estimator follows the scikit-learn protocol (``fit`` / ``predict`` /
``predict_proba`` / ``score`` / ``get_params``) and adds the surface that
gradient-based input perturbation needs: per-image prediction bundles,
gradients of a training objective with respect to the pixels, and per-class
input Jacobians. Training is plain mini-batch SGD with momentum, fully
deterministic for a given seed and data order.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import ConfigurationError, InputError, TrainingError
from .layers import Architecture, NAMED_ARCHITECTURES, build_layers
from .validation import as_image, as_image_batch, check_label, check_labels

PROB_CLAMP = 1e-12  # lower clamp inside the cross-entropy log

OBJECTIVES = ("cross_entropy", "l2", "margin")
JACOBIAN_BASES = ("logits", "prediction")


@dataclass
class PredictionBundle:
    """One forward pass: pre-softmax scores, probabilities, argmax class."""

    logits: np.ndarray
    prediction: np.ndarray
    predicted_class: int


@dataclass
class TrainingMeta:
    epochs: int
    seed: int
    learning_rate: float
    momentum: float
    batch_size: int
    final_test_accuracy: float | None = None

    def to_dict(self):
        return {"epochs": self.epochs, "seed": self.seed,
                "learning_rate": self.learning_rate, "momentum": self.momentum,
                "batch_size": self.batch_size,
                "final_test_accuracy": self.final_test_accuracy}

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(prediction, label: int) -> float:
    """Negative log probability of ``label``; probabilities clamped to [1e-12, 1]."""
    if isinstance(prediction, PredictionBundle):
        prediction = prediction.prediction
    p = np.asarray(prediction, dtype=np.float64).ravel()
    label = check_label(label, p.size)
    return float(-np.log(np.clip(p[label], PROB_CLAMP, 1.0)))


def _objective_logit_grad(probs: np.ndarray, labels: np.ndarray, objective: str) -> np.ndarray:
    """d(objective)/d(logits) for a batch, one row per (probs, label) pair."""
    n, m = probs.shape
    onehot = np.zeros((n, m))
    onehot[np.arange(n), labels] = 1.0
    if objective == "cross_entropy":
        dz = probs - onehot
        # below the clamp the loss is locally constant
        dz[probs[np.arange(n), labels] < PROB_CLAMP] = 0.0
        return dz
    if objective == "l2":
        dp = probs - onehot  # J = 0.5 * sum((p - onehot)^2)
        return probs * (dp - (probs * dp).sum(axis=1, keepdims=True))
    if objective == "margin":
        # J = max(0, max_{j != label} p_j - p_label); zero branch has zero gradient
        masked = probs.copy()
        masked[np.arange(n), labels] = -np.inf
        runner = masked.argmax(axis=1)
        active = masked[np.arange(n), runner] - probs[np.arange(n), labels] > 0.0
        dp = np.zeros((n, m))
        dp[np.arange(n), runner] = 1.0
        dp[np.arange(n), labels] -= 1.0
        dp[~active] = 0.0
        return probs * (dp - (probs * dp).sum(axis=1, keepdims=True))
    raise InputError(f"unknown objective {objective!r}, expected one of {OBJECTIVES}")


class NeuralNetClassifier(BaseEstimator, ClassifierMixin):
    """Small dense/convolutional classifier trained with SGD + momentum.

    Parameters
    ----------
    architecture : "cnn", "mlp" or an :class:`~advkit.layers.Architecture`.
    feature_map_scale : "half", "normal" or "double"; multiplies conv widths
        and the first dense width (ignored when an Architecture object is
        passed, which carries its own scale).
    seed : controls parameter initialization and the shuffle order, making
        training bit-reproducible.
    """

    def __init__(self, architecture="cnn", feature_map_scale="normal",
                 input_shape=(28, 28), epochs=10, batch_size=64,
                 learning_rate=0.05, momentum=0.9, seed=0):
        self.architecture = architecture
        self.feature_map_scale = feature_map_scale
        self.input_shape = input_shape
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.seed = seed

    # -- construction ------------------------------------------------------

    def _resolve_architecture(self) -> Architecture:
        if isinstance(self.architecture, Architecture):
            return self.architecture
        if self.architecture in NAMED_ARCHITECTURES:
            return NAMED_ARCHITECTURES[self.architecture](
                feature_map_scale=self.feature_map_scale,
                input_shape=tuple(self.input_shape))
        raise ConfigurationError(
            f"unknown architecture {self.architecture!r}; "
            f"expected one of {sorted(NAMED_ARCHITECTURES)} or an Architecture")

    def initialize(self) -> "NeuralNetClassifier":
        """Build layers and draw parameters deterministically from the seed."""
        arch = self._resolve_architecture()
        self.arch_ = arch
        self.layers_ = build_layers(arch)
        rng = np.random.default_rng(self.seed)
        for layer in self.layers_:
            layer.init_params(rng)
        self.n_classes_ = arch.num_classes
        self.classes_ = np.arange(self.n_classes_)
        self.meta_ = None
        return self

    @property
    def is_fitted(self) -> bool:
        return getattr(self, "layers_", None) is not None

    def _require_built(self):
        if not self.is_fitted:
            raise InputError("model has no parameters; call fit(), initialize() or load()")

    def _freeze(self):
        for layer in self.layers_:
            for p in layer.params:
                p.flags.writeable = False

    # -- forward / scoring ---------------------------------------------------

    def _forward(self, x4: np.ndarray, want_caches: bool = False):
        caches = [] if want_caches else None
        a = x4
        for layer in self.layers_:
            a, cache = layer.forward(a, want_cache=want_caches)
            if want_caches:
                caches.append(cache)
        return a, caches

    def _batched_logits(self, X: np.ndarray, batch: int = 256) -> np.ndarray:
        out = np.empty((X.shape[0], self.n_classes_))
        for lo in range(0, X.shape[0], batch):
            chunk = X[lo:lo + batch]
            out[lo:lo + chunk.shape[0]], _ = self._forward(chunk[:, np.newaxis])
        return out

    def decision_function(self, X) -> np.ndarray:
        """Pre-softmax scores, shape (n, classes)."""
        self._require_built()
        X = as_image_batch(X, self.arch_.input_shape)
        return self._batched_logits(X)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    def score(self, X, y) -> float:
        """Fraction of inputs whose predicted class matches the given label."""
        self._require_built()
        y = check_labels(y, self.n_classes_)
        if y.size == 0:
            raise InputError("cannot score an empty set")
        pred = self.predict(X)
        if pred.size != y.size:
            raise InputError(f"{pred.size} images vs {y.size} labels")
        return float(np.mean(pred == y))

    def predict_bundle(self, x) -> PredictionBundle:
        """Forward one image; returns logits, probabilities, argmax class."""
        self._require_built()
        x = as_image(x, self.arch_.input_shape)
        logits, _ = self._forward(x[np.newaxis, np.newaxis])
        probs = softmax(logits)
        return PredictionBundle(logits[0], probs[0], int(probs[0].argmax()))

    # -- gradients -----------------------------------------------------------

    def _backward_to_input(self, caches, d_logits: np.ndarray) -> np.ndarray:
        g = d_logits
        for layer, cache in zip(reversed(self.layers_), reversed(caches)):
            g, _ = layer.backward(g, cache, need_param_grads=False)
        return g[:, 0]  # drop the channel axis

    def loss_gradient(self, x, label, objective: str = "cross_entropy") -> np.ndarray:
        """Gradient of the objective at ``label`` with respect to every pixel.

        Accepts a single image with an integer label, or a batch with a label
        array; the result matches the input's leading shape.
        """
        self._require_built()
        single = np.asarray(x).ndim == 2
        X = as_image_batch(x, self.arch_.input_shape)
        labels = np.full(X.shape[0], check_label(label, self.n_classes_)) \
            if np.isscalar(label) or np.asarray(label).ndim == 0 \
            else check_labels(label, self.n_classes_)
        if labels.size != X.shape[0]:
            raise InputError(f"{X.shape[0]} images vs {labels.size} labels")
        logits, caches = self._forward(X[:, np.newaxis], want_caches=True)
        dz = _objective_logit_grad(softmax(logits), labels, objective)
        grad = self._backward_to_input(caches, dz)
        return grad[0] if single else grad

    def input_jacobian(self, x, basis: str = "prediction") -> np.ndarray:
        """Per-class gradients of the chosen output basis, shape (classes, h, w).

        basis="logits" differentiates the pre-softmax scores; "prediction"
        differentiates the softmax probabilities (rows then sum to zero
        pixel-wise because probabilities sum to one).
        """
        self._require_built()
        if basis not in JACOBIAN_BASES:
            raise InputError(f"unknown basis {basis!r}, expected one of {JACOBIAN_BASES}")
        x = as_image(x, self.arch_.input_shape)
        m = self.n_classes_
        logits, caches = self._forward(x[np.newaxis, np.newaxis], want_caches=True)
        if basis == "logits":
            seeds = np.eye(m)
        else:
            p = softmax(logits)[0]
            seeds = np.diag(p) - np.outer(p, p)
        return self._backward_to_input(caches, seeds)

    # -- training ------------------------------------------------------------

    def fit(self, X, y) -> "NeuralNetClassifier":
        if self.epochs < 1:
            raise InputError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        X = as_image_batch(X)
        if X.shape[0] == 0:
            raise InputError("cannot train on an empty dataset")
        self.initialize()
        if X.shape[1:] != self.arch_.input_shape:
            raise InputError(
                f"image shape {X.shape[1:]} does not match architecture "
                f"input {self.arch_.input_shape}")
        y = check_labels(y, self.n_classes_)
        if y.size != X.shape[0]:
            raise InputError(f"{X.shape[0]} images vs {y.size} labels")

        velocity = [np.zeros_like(p) for layer in self.layers_ for p in layer.params]
        shuffle_rng = np.random.default_rng(self.seed)
        n = X.shape[0]
        for epoch in range(self.epochs):
            order = shuffle_rng.permutation(n)
            for bi, lo in enumerate(range(0, n, self.batch_size)):
                idx = order[lo:lo + self.batch_size]
                xb, yb = X[idx][:, np.newaxis], y[idx]
                logits, caches = self._forward(xb, want_caches=True)
                if not np.isfinite(logits).all():
                    raise TrainingError("training diverged (non-finite loss)",
                                        epoch=epoch, batch=bi)
                probs = softmax(logits)
                d_logits = (probs - np.eye(self.n_classes_)[yb]) / idx.size
                grads = []
                g = d_logits
                for layer, cache in zip(reversed(self.layers_), reversed(caches)):
                    g, pg = layer.backward(g, cache, need_param_grads=True)
                    if pg is not None:
                        grads.extend(reversed(pg))
                grads.reverse()
                for v, p, grad in zip(velocity,
                                      (p for l in self.layers_ for p in l.params),
                                      grads):
                    v *= self.momentum
                    v -= self.learning_rate * grad
                    p += v
        self.meta_ = TrainingMeta(self.epochs, self.seed, self.learning_rate,
                                  self.momentum, self.batch_size)
        self._freeze()
        return self

    # -- persistence ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        from . import serialize
        return serialize.model_to_bytes(self)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "NeuralNetClassifier":
        from . import serialize
        return serialize.model_from_bytes(blob)

    @classmethod
    def load(cls, path) -> "NeuralNetClassifier":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
