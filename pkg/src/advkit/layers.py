"""Layer primitives and architecture descriptions.

Everything runs in float64. Each runtime layer implements a `forward` pass
that optionally records a cache, and a `backward` pass that maps output
gradients to input gradients (and, during training, parameter gradients).
Backward passes accept a gradient whose leading batch axis is larger than
the cached forward batch (used to push several output seeds through one
cached single-image forward pass, e.g. for per-class input gradients).

Convolutions are valid (no padding); pooling windows that do not fit are
truncated. Activations: "relu" or "identity".
"""

import json
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError

FEATURE_MAP_SCALES = {"half": 0.5, "normal": 1.0, "double": 2.0}
_ACTIVATIONS = ("relu", "identity")


# ---------------------------------------------------------------------------
# architecture description


@dataclass(frozen=True)
class Conv:
    out_maps: int
    kernel: int
    stride: int = 1
    activation: str = "relu"


@dataclass(frozen=True)
class MaxPool:
    size: int


@dataclass(frozen=True)
class Dense:
    units: int
    activation: str = "identity"


@dataclass(frozen=True)
class SoftmaxOut:
    """Marker for the terminal softmax over the last dense layer's units."""


@dataclass(frozen=True)
class Architecture:
    """Layer list plus the knobs that modify it (input shape, width scaling)."""

    layers: tuple
    input_shape: tuple = (28, 28)
    feature_map_scale: str = "normal"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        self.validate()

    def validate(self):
        if self.feature_map_scale not in FEATURE_MAP_SCALES:
            raise ConfigurationError(
                f"feature_map_scale must be one of {sorted(FEATURE_MAP_SCALES)}, "
                f"got {self.feature_map_scale!r}")
        if len(self.input_shape) != 2 or min(self.input_shape) < 1:
            raise ConfigurationError(f"bad input shape {self.input_shape}")
        if not self.layers or not isinstance(self.layers[-1], SoftmaxOut):
            raise ConfigurationError("last layer must be the softmax output")
        if sum(isinstance(l, SoftmaxOut) for l in self.layers) != 1:
            raise ConfigurationError("exactly one softmax output layer allowed")
        if not isinstance(self.layers[-2], Dense):
            raise ConfigurationError("softmax must follow a dense layer")
        for i, spec in enumerate(self.layers[:-1]):
            name = f"layer {i} ({type(spec).__name__})"
            if isinstance(spec, Conv):
                if spec.out_maps < 1 or spec.kernel < 1 or spec.stride < 1:
                    raise ConfigurationError(f"{name}: maps/kernel/stride must be >= 1")
                if spec.activation not in _ACTIVATIONS:
                    raise ConfigurationError(f"{name}: unknown activation {spec.activation!r}")
            elif isinstance(spec, MaxPool):
                if spec.size < 1:
                    raise ConfigurationError(f"{name}: pool size must be >= 1")
            elif isinstance(spec, Dense):
                if spec.units < 1:
                    raise ConfigurationError(f"{name}: units must be >= 1")
                if spec.activation not in _ACTIVATIONS:
                    raise ConfigurationError(f"{name}: unknown activation {spec.activation!r}")
            else:
                raise ConfigurationError(f"{name}: unsupported layer kind")
        # chain shapes once so inconsistent stacks fail at construction
        self.chain_shapes()

    @property
    def num_classes(self) -> int:
        return self.scaled_layers()[-2].units

    def scaled_layers(self) -> tuple:
        """Apply the width multiplier to every conv and the first dense layer.

        Widths are floored, with a minimum of 1. The final dense layer keeps
        its width when it is not the first one (it is the class count).
        """
        factor = FEATURE_MAP_SCALES[self.feature_map_scale]
        out, scaled_dense = [], False
        for spec in self.layers:
            if isinstance(spec, Conv):
                width = max(1, int(spec.out_maps * factor))
                out.append(Conv(width, spec.kernel, spec.stride, spec.activation))
            elif isinstance(spec, Dense) and not scaled_dense:
                scaled_dense = True
                if spec is self.layers[-2]:
                    out.append(spec)  # sole dense layer is the classifier head
                else:
                    out.append(Dense(max(1, int(spec.units * factor)), spec.activation))
            else:
                out.append(spec)
        return tuple(out)

    def chain_shapes(self) -> list:
        """Propagate (channels, height, width) through the stack; raises on a dead layer."""
        shape = (1,) + self.input_shape
        shapes = [shape]
        for i, spec in enumerate(self.scaled_layers()[:-1]):
            c, h, w = shape
            if isinstance(spec, Conv):
                ho = (h - spec.kernel) // spec.stride + 1
                wo = (w - spec.kernel) // spec.stride + 1
                if ho < 1 or wo < 1:
                    raise ConfigurationError(
                        f"layer {i} (Conv): kernel {spec.kernel} does not fit input {h}x{w}")
                shape = (spec.out_maps, ho, wo)
            elif isinstance(spec, MaxPool):
                ho, wo = h // spec.size, w // spec.size
                if ho < 1 or wo < 1:
                    raise ConfigurationError(
                        f"layer {i} (MaxPool): size {spec.size} does not fit input {h}x{w}")
                shape = (c, ho, wo)
            elif isinstance(spec, Dense):
                shape = (spec.units, 1, 1)
            shapes.append(shape)
        return shapes

    # -- canonical text form (used by the model file and cache keys) --

    def to_text(self) -> str:
        entries = []
        for spec in self.layers:
            if isinstance(spec, Conv):
                entries.append({"kind": "conv", "out_maps": spec.out_maps,
                                "kernel": spec.kernel, "stride": spec.stride,
                                "activation": spec.activation})
            elif isinstance(spec, MaxPool):
                entries.append({"kind": "maxpool", "size": spec.size})
            elif isinstance(spec, Dense):
                entries.append({"kind": "dense", "units": spec.units,
                                "activation": spec.activation})
            else:
                entries.append({"kind": "softmax"})
        doc = {"input_shape": list(self.input_shape),
               "feature_map_scale": self.feature_map_scale,
               "layers": entries}
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_text(cls, text: str) -> "Architecture":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"unparseable architecture descriptor: {exc}") from exc
        layers = []
        for entry in doc["layers"]:
            kind = entry.get("kind")
            if kind == "conv":
                layers.append(Conv(entry["out_maps"], entry["kernel"],
                                   entry.get("stride", 1), entry.get("activation", "relu")))
            elif kind == "maxpool":
                layers.append(MaxPool(entry["size"]))
            elif kind == "dense":
                layers.append(Dense(entry["units"], entry.get("activation", "identity")))
            elif kind == "softmax":
                layers.append(SoftmaxOut())
            else:
                raise ConfigurationError(f"unknown layer kind {kind!r} in descriptor")
        return cls(tuple(layers), tuple(doc["input_shape"]), doc["feature_map_scale"])


def cnn_architecture(feature_map_scale="normal", input_shape=(28, 28), num_classes=10):
    """Default convolutional stack: two conv/pool blocks and a 256-wide dense head."""
    return Architecture((
        Conv(32, 5, 1, "relu"),
        MaxPool(2),
        Conv(64, 5, 1, "relu"),
        MaxPool(2),
        Dense(256, "relu"),
        Dense(num_classes, "identity"),
        SoftmaxOut(),
    ), input_shape, feature_map_scale)


def mlp_architecture(feature_map_scale="normal", input_shape=(28, 28), num_classes=10):
    """Small fully-connected stack used as the fast architecture."""
    return Architecture((
        Dense(128, "relu"),
        Dense(num_classes, "identity"),
        SoftmaxOut(),
    ), input_shape, feature_map_scale)


NAMED_ARCHITECTURES = {"cnn": cnn_architecture, "mlp": mlp_architecture}


# ---------------------------------------------------------------------------
# runtime layers


def _relu(z):
    return np.maximum(z, 0.0)


class ConvLayer:
    """Valid (unpadded) correlation with square kernels, stride >= 1."""

    def __init__(self, spec: Conv, in_shape):
        c, h, w = in_shape
        self.spec = spec
        self.in_shape = in_shape
        ho = (h - spec.kernel) // spec.stride + 1
        wo = (w - spec.kernel) // spec.stride + 1
        self.out_shape = (spec.out_maps, ho, wo)
        self.weight = np.zeros((spec.out_maps, c, spec.kernel, spec.kernel))
        self.bias = np.zeros(spec.out_maps)

    def init_params(self, rng):
        fan_in = int(np.prod(self.weight.shape[1:]))
        limit = 1.0 / np.sqrt(fan_in)
        self.weight = rng.uniform(-limit, limit, self.weight.shape)
        self.bias = np.zeros(self.bias.shape)

    @property
    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, want_cache=False):
        n = x.shape[0]
        o, ho, wo = self.out_shape
        k, s = self.spec.kernel, self.spec.stride
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, -1)
        z = cols @ self.weight.reshape(o, -1).T
        z += self.bias
        z = z.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
        if self.spec.activation == "relu":
            a = _relu(z)
            cache = (cols, z > 0) if want_cache else None
        else:
            a = z
            cache = (cols, None) if want_cache else None
        return a, cache

    def backward(self, d_out, cache, need_param_grads=False):
        cols, mask = cache
        dz = d_out * mask if mask is not None else d_out
        b = dz.shape[0]
        o, ho, wo = self.out_shape
        c, h, w = self.in_shape
        k, s = self.spec.kernel, self.spec.stride
        dz_flat = dz.transpose(0, 2, 3, 1).reshape(-1, o)
        grads = None
        if need_param_grads:
            d_weight = (dz_flat.T @ cols).reshape(self.weight.shape)
            d_bias = dz.sum(axis=(0, 2, 3))
            grads = (d_weight, d_bias)
        # input gradient: one matmul against the kernel, then scatter-add each
        # kernel offset (cheaper than windowing the dilated output gradient)
        dcols = dz_flat @ self.weight.reshape(o, -1)
        dcols = dcols.reshape(b, ho, wo, c, k, k)
        dx = np.zeros((b, c, h, w))
        for u in range(k):
            for v in range(k):
                dx[:, :, u:u + ho * s:s, v:v + wo * s:s] += \
                    dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
        return dx, grads


class MaxPoolLayer:
    def __init__(self, spec: MaxPool, in_shape):
        c, h, w = in_shape
        self.spec = spec
        self.in_shape = in_shape
        self.out_shape = (c, h // spec.size, w // spec.size)

    def init_params(self, rng):
        pass

    @property
    def params(self):
        return []

    def forward(self, x, want_cache=False):
        n = x.shape[0]
        c, ho, wo = self.out_shape
        p = self.spec.size
        win = (x[:, :, :ho * p, :wo * p]
               .reshape(n, c, ho, p, wo, p)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, ho, wo, p * p))
        idx = win.argmax(axis=-1)  # ties resolve to the lowest window offset
        out = np.take_along_axis(win, idx[..., np.newaxis], axis=-1)[..., 0]
        return out, (idx if want_cache else None)

    def backward(self, d_out, cache, need_param_grads=False):
        idx = cache
        b = d_out.shape[0]
        c, ho, wo = self.out_shape
        _, h, w = self.in_shape
        p = self.spec.size
        scat = np.zeros((b, c, ho, wo, p * p))
        idx_b = np.broadcast_to(idx, (b,) + idx.shape[1:])
        np.put_along_axis(scat, idx_b[..., np.newaxis], d_out[..., np.newaxis], axis=-1)
        dx = np.zeros((b, c, h, w))
        dx[:, :, :ho * p, :wo * p] = (scat.reshape(b, c, ho, wo, p, p)
                                      .transpose(0, 1, 2, 4, 3, 5)
                                      .reshape(b, c, ho * p, wo * p))
        return dx, None


class DenseLayer:
    def __init__(self, spec: Dense, in_shape):
        self.spec = spec
        self.in_shape = in_shape
        self.in_features = int(np.prod(in_shape))
        self.out_shape = (spec.units, 1, 1)
        self.weight = np.zeros((spec.units, self.in_features))
        self.bias = np.zeros(spec.units)

    def init_params(self, rng):
        limit = 1.0 / np.sqrt(self.in_features)
        self.weight = rng.uniform(-limit, limit, self.weight.shape)
        self.bias = np.zeros(self.bias.shape)

    @property
    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, want_cache=False):
        xf = x.reshape(x.shape[0], -1)
        z = xf @ self.weight.T + self.bias
        if self.spec.activation == "relu":
            a = _relu(z)
            cache = (xf, z > 0, x.shape[1:]) if want_cache else None
        else:
            a = z
            cache = (xf, None, x.shape[1:]) if want_cache else None
        return a, cache

    def backward(self, d_out, cache, need_param_grads=False):
        xf, mask, in_shape = cache
        dz = d_out * mask if mask is not None else d_out
        grads = None
        if need_param_grads:
            grads = (dz.T @ xf, dz.sum(axis=0))
        dx = (dz @ self.weight).reshape((dz.shape[0],) + tuple(in_shape))
        return dx, grads


def build_layers(arch: Architecture) -> list:
    """Instantiate runtime layers (softmax excluded; the model applies it)."""
    layers = []
    shape = (1,) + arch.input_shape
    for spec in arch.scaled_layers()[:-1]:
        if isinstance(spec, Conv):
            layer = ConvLayer(spec, shape)
        elif isinstance(spec, MaxPool):
            layer = MaxPoolLayer(spec, shape)
        else:
            layer = DenseLayer(spec, shape)
        layers.append(layer)
        shape = layer.out_shape
    return layers
