"""Dense feed-forward networks: layers, forward pass, backprop, JSON model files."""

import copy
import json
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NumericError, ParseError, ShapeError, ValidationError


class ActivationKind(str, Enum):
    SIGMOID = "sigmoid"
    RELU = "relu"
    IDENTITY = "identity"


def activate(kind, z):
    kind = ActivationKind(kind)
    if kind is ActivationKind.SIGMOID:
        return expit(z)
    if kind is ActivationKind.RELU:
        return np.maximum(z, 0.0)
    return z


def activation_grad(kind, a):
    """Derivative of the activation expressed through its output ``a``."""
    kind = ActivationKind(kind)
    if kind is ActivationKind.SIGMOID:
        return a * (1.0 - a)
    if kind is ActivationKind.RELU:
        return (a > 0).astype(float)
    return np.ones_like(a)


@dataclass
class Layer:
    weights: np.ndarray  # (n_out, n_in)
    bias: np.ndarray  # (n_out,)
    activation: ActivationKind = ActivationKind.SIGMOID

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=float, ndmin=2)
        self.bias = np.array(self.bias, dtype=float).reshape(-1)
        self.activation = ActivationKind(self.activation)
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be a matrix, got ndim={self.weights.ndim}")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ValidationError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weights.shape[0]}"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValidationError("layer parameters must be finite")

    @property
    def n_in(self):
        return self.weights.shape[1]

    @property
    def n_out(self):
        return self.weights.shape[0]

    def __call__(self, a):
        return activate(self.activation, a @ self.weights.T + self.bias)


@dataclass
class Network:
    """Hidden dense layers followed by a linear classifier feeding a softmax.

    The classifier layer always carries the identity activation; softmax is
    applied on top of its output by :func:`forward`.
    """

    input_dim: int
    hidden: list
    classifier: Layer

    def __post_init__(self):
        self.input_dim = int(self.input_dim)
        if self.input_dim < 1:
            raise ValidationError("input_dim must be positive")
        if not self.hidden:
            raise ValidationError("network needs at least one hidden layer")
        self.classifier.activation = ActivationKind.IDENTITY
        width = self.input_dim
        for i, layer in enumerate(self.hidden, start=1):
            if layer.n_in != width:
                raise ValidationError(
                    f"hidden layer {i} expects {layer.n_in} inputs but receives {width}"
                )
            width = layer.n_out
        if self.classifier.n_in != width:
            raise ValidationError(
                f"classifier expects {self.classifier.n_in} inputs but last hidden width is {width}"
            )

    @property
    def arch(self):
        return [self.input_dim] + [l.n_out for l in self.hidden] + [self.classifier.n_out]

    @property
    def hidden_arch(self):
        return [l.n_out for l in self.hidden]

    @property
    def n_classes(self):
        return self.classifier.n_out

    def layers(self):
        return list(self.hidden) + [self.classifier]

    def params(self):
        """Flat list ``[W1, b1, ..., Wc, bc]`` of the live parameter arrays."""
        out = []
        for layer in self.layers():
            out += [layer.weights, layer.bias]
        return out

    def copy(self):
        return copy.deepcopy(self)

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        if self.arch != other.arch:
            return False
        return all(
            a.activation == b.activation
            and np.array_equal(a.weights, b.weights)
            and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers(), other.layers())
        )


@dataclass
class ForwardTrace:
    activations: list  # [X, h1, ..., hL]
    logits: np.ndarray
    probabilities: np.ndarray

    @property
    def features(self):
        """h-level features: output of the last hidden layer."""
        return self.activations[-1]


@dataclass
class Gradients:
    hidden: list = field(default_factory=list)  # [(dW, db), ...]
    classifier: tuple = None

    def pairs(self):
        return list(self.hidden) + [self.classifier]

    def flat(self):
        out = []
        for dw, db in self.pairs():
            out += [dw, db]
        return out

    def __add__(self, other):
        return Gradients(
            [(a + c, b + d) for (a, b), (c, d) in zip(self.hidden, other.hidden)],
            (self.classifier[0] + other.classifier[0], self.classifier[1] + other.classifier[1]),
        )

    def scaled(self, s):
        return Gradients(
            [(s * a, s * b) for a, b in self.hidden],
            (s * self.classifier[0], s * self.classifier[1]),
        )


def softmax(logits):
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(net, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ShapeError(
            f"hidden layer 1 expects {net.input_dim} input columns, got shape {X.shape}"
        )
    acts = [X]
    a = X
    for i, layer in enumerate(net.hidden, start=1):
        if a.shape[1] != layer.n_in:
            raise ShapeError(f"hidden layer {i} expects {layer.n_in} inputs, got {a.shape[1]}")
        with np.errstate(over="ignore", invalid="ignore"):
            a = layer(a)
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite activation in hidden layer {i}")
        acts.append(a)
    with np.errstate(over="ignore", invalid="ignore"):
        logits = a @ net.classifier.weights.T + net.classifier.bias
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite classifier logits")
    return ForwardTrace(acts, logits, softmax(logits))


def backward(net, trace, d_logits=None, d_features=None):
    """Backpropagate upstream gradients through the network.

    ``d_logits`` is dLoss/dlogits (N, C); ``d_features`` an extra gradient
    arriving directly at the h-level features (N, n_L). The classifier
    gradient is zero when ``d_logits`` is None.
    """
    acts = trace.activations
    feats = acts[-1]
    if d_logits is not None:
        grad_c = (d_logits.T @ feats, d_logits.sum(axis=0))
        delta = d_logits @ net.classifier.weights
    else:
        grad_c = (np.zeros_like(net.classifier.weights), np.zeros_like(net.classifier.bias))
        delta = np.zeros_like(feats)
    if d_features is not None:
        delta = delta + d_features
    hidden = []
    for l in range(len(net.hidden) - 1, -1, -1):
        layer = net.hidden[l]
        dz = delta * activation_grad(layer.activation, acts[l + 1])
        hidden.append((dz.T @ acts[l], dz.sum(axis=0)))
        if l > 0:
            delta = dz @ layer.weights
    hidden.reverse()
    return Gradients(hidden, grad_c)


def apply_step(net, grads, eta):
    """Return a new network with parameters ``p - eta * g``."""
    hidden = [
        Layer(layer.weights - eta * dw, layer.bias - eta * db, layer.activation)
        for layer, (dw, db) in zip(net.hidden, grads.hidden)
    ]
    dw, db = grads.classifier
    clf = Layer(net.classifier.weights - eta * dw, net.classifier.bias - eta * db,
                ActivationKind.IDENTITY)
    return Network(net.input_dim, hidden, clf)


def random_layer(rng, n_in, n_out, activation):
    w = rng.standard_normal((n_out, n_in)) / np.sqrt(n_in)
    return Layer(w, np.zeros(n_out), activation)


def init_random(arch, activation=ActivationKind.SIGMOID, seed=0):
    """Random network for ``arch = [input_dim, hidden..., n_classes]``.

    Weights ~ N(0, 1/fan_in), biases zero.
    """
    try:
        arch = [int(w) for w in arch]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid architecture {arch!r}") from exc
    if len(arch) < 3 or any(w < 1 for w in arch):
        raise ConfigError(
            f"architecture needs input, >=1 hidden and class widths, all positive; got {arch}"
        )
    rng = np.random.default_rng(seed)
    hidden = [random_layer(rng, a, b, activation) for a, b in zip(arch[:-2], arch[1:-1])]
    clf = random_layer(rng, arch[-2], arch[-1], ActivationKind.IDENTITY)
    return Network(arch[0], hidden, clf)


# -- serialization ---------------------------------------------------------


def _layer_to_dict(layer):
    return {
        "rows": layer.n_out,
        "cols": layer.n_in,
        "activation": layer.activation.value,
        "weights": layer.weights.reshape(-1).tolist(),
        "bias": layer.bias.tolist(),
    }


def _layer_from_dict(d, where):
    try:
        rows, cols = int(d["rows"]), int(d["cols"])
        w = np.asarray(d["weights"], dtype=float)
        b = np.asarray(d["bias"], dtype=float)
        act = d.get("activation", "identity")
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: malformed layer record ({exc})") from exc
    if w.ndim != 1 or w.size != rows * cols:
        raise ValidationError(f"{where}: expected {rows}x{cols} weights, got {w.size} values")
    if b.ndim != 1 or b.size != rows:
        raise ValidationError(f"{where}: bias length {b.size} != rows {rows}")
    try:
        return Layer(w.reshape(rows, cols), b, ActivationKind(act))
    except ValueError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def model_to_dict(net):
    return {
        "input_dim": net.input_dim,
        "layers": [_layer_to_dict(l) for l in net.hidden],
        "classifier": _layer_to_dict(net.classifier),
    }


def model_from_dict(doc):
    if not isinstance(doc, dict):
        raise ValidationError("model document must be a JSON object")
    try:
        layers = doc["layers"]
        clf = doc["classifier"]
        input_dim = doc["input_dim"]
    except KeyError as exc:
        raise ValidationError(f"model document missing field {exc}") from exc
    hidden = [_layer_from_dict(d, f"layers[{i}]") for i, d in enumerate(layers)]
    return Network(input_dim, hidden, _layer_from_dict(clf, "classifier"))


def dumps_model(net):
    return json.dumps(model_to_dict(net), indent=1) + "\n"


def loads_model(text):
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"model file is not UTF-8 (byte offset {exc.start})") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ParseError(f"malformed model file at byte offset {offset}: {exc.msg}") from exc
    return model_from_dict(doc)


def atomic_write(path, data):
    """Write text or bytes to ``path`` via a temp file in the same directory."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(net, path):
    atomic_write(path, dumps_model(net))


def load_model(path):
    with open(path, "rb") as fh:
        return loads_model(fh.read())
