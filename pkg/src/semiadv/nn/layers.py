import numpy as np

from semiadv.errors import ContractError
from semiadv.nn.tensor import Tensor, conv2d, max_pool2d, no_grad


class Layer:
    kind = "layer"

    def params(self):
        return {}

    def __call__(self, x):
        return self.forward(x)

    def spec(self):
        return {"kind": self.kind}


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features, rng=None):
        self.in_features, self.out_features = in_features, out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = np.sqrt(6.0 / in_features)  # He-uniform, suits the relu stacks used here
        self.weight = Tensor(rng.uniform(-bound, bound, (in_features, out_features)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ContractError(f"expects [B, {self.in_features}], got {list(x.shape)}")
        return x @ self.weight + self.bias

    def spec(self):
        return {"kind": self.kind, "in_features": self.in_features, "out_features": self.out_features}


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size=3, padding=1, rng=None):
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.padding = kernel_size, padding
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel_size * kernel_size
        bound = np.sqrt(6.0 / fan_in)
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weight = Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ContractError(f"expects [B, {self.in_channels}, H, W], got {list(x.shape)}")
        return conv2d(x, self.weight, self.bias, padding=self.padding)

    def spec(self):
        return {"kind": self.kind, "in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel_size": self.kernel_size, "padding": self.padding}


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, size=2):
        self.size = size

    def forward(self, x):
        if x.ndim != 4:
            raise ContractError(f"expects [B, C, H, W], got {list(x.shape)}")
        return max_pool2d(x, self.size)

    def spec(self):
        return {"kind": self.kind, "size": self.size}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        return x.relu()


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        return x.flatten()


_LAYERS = {cls.kind: cls for cls in (Dense, Conv2d, MaxPool2d, ReLU, Flatten)}


class Model:
    """An ordered stack of layers producing logits; the softmax head lives in
    :meth:`predict_proba` and in the losses."""

    def __init__(self, layers, input_shape, num_classes, arch=""):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.arch = arch

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if tuple(x.shape[1:]) != self.input_shape:
            raise ContractError(
                f"layer 0 ({self.layers[0].kind}): batch shape {list(x.shape)} does not match "
                f"model input [B, {', '.join(map(str, self.input_shape))}]"
            )
        for i, layer in enumerate(self.layers):
            try:
                x = layer(x)
            except ContractError as e:
                raise ContractError(f"layer {i} ({layer.kind}): {e}") from None
        return x

    def named_params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.params().items():
                out[f"{i}.{layer.kind}.{name}"] = p
        return out

    def parameters(self):
        return list(self.named_params().values())

    def num_params(self):
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.named_params().items()}

    def load_state_dict(self, state):
        params = self.named_params()
        if set(state) != set(params):
            raise ContractError(f"state keys {sorted(state)} do not match model {sorted(params)}")
        for k, p in params.items():
            if state[k].shape != p.data.shape:
                raise ContractError(f"{k}: shape {state[k].shape} != {p.data.shape}")
            p.data = np.array(state[k], dtype=np.float64)

    def predict_proba(self, x, batch_size=512):
        x = np.asarray(x, dtype=np.float64)
        with no_grad():
            return np.concatenate([self(x[i:i + batch_size]).softmax().data
                                   for i in range(0, len(x), batch_size)]) if len(x) else \
                np.zeros((0, self.num_classes))

    def predict(self, x):
        return self.predict_proba(x).argmax(axis=1)  # lowest index wins ties

    def config(self):
        return {"arch": self.arch, "input_shape": list(self.input_shape),
                "num_classes": self.num_classes, "layers": [layer.spec() for layer in self.layers]}

    @classmethod
    def from_config(cls, config):
        layers = []
        for spec in config["layers"]:
            spec = dict(spec)
            kind = spec.pop("kind")
            layers.append(_LAYERS[kind](**spec))
        return cls(layers, config["input_shape"], config["num_classes"], config.get("arch", ""))

    def copy(self):
        clone = Model.from_config(self.config())
        clone.load_state_dict(self.state_dict())
        return clone


def mlp(input_dim, num_classes, hidden=64, rng=None):
    """Two-hidden-layer perceptron."""
    rng = rng if rng is not None else np.random.default_rng(0)
    layers = [Dense(input_dim, hidden, rng), ReLU(), Dense(hidden, hidden, rng), ReLU(),
              Dense(hidden, num_classes, rng)]
    return Model(layers, (input_dim,), num_classes, arch="mlp")


def cnn(input_shape, num_classes, channels=8, hidden=64, rng=None):
    """Two conv/pool stages followed by a dense head. ``input_shape`` is (C, H, W)
    with H and W divisible by 4."""
    rng = rng if rng is not None else np.random.default_rng(0)
    c, h, w = input_shape
    layers = [Conv2d(c, channels, 3, 1, rng), ReLU(), MaxPool2d(2),
              Conv2d(channels, 2 * channels, 3, 1, rng), ReLU(), MaxPool2d(2),
              Flatten(), Dense(2 * channels * (h // 4) * (w // 4), hidden, rng), ReLU(),
              Dense(hidden, num_classes, rng)]
    return Model(layers, tuple(input_shape), num_classes, arch="cnn")


def build(arch, input_shape, num_classes, seed=0, width=None):
    rng = np.random.default_rng(seed)
    input_shape = tuple(input_shape)
    if arch == "mlp":
        dim = int(np.prod(input_shape))
        model = mlp(dim, num_classes, hidden=width or 64, rng=rng)
        if len(input_shape) > 1:
            model.layers.insert(0, Flatten())
            model.input_shape = input_shape
        return model
    if arch == "cnn":
        if len(input_shape) != 3:
            raise ContractError(f"cnn needs (C, H, W) inputs, got {input_shape}")
        return cnn(input_shape, num_classes, channels=width or 8, rng=rng)
    raise ContractError(f"unknown architecture {arch!r}")
