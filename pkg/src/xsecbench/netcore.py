"""Minimal dense-network engine.

Models are immutable stacks of dense layers. Inputs are 1-D float64 numpy
arrays (the "tensor" of the rest of the package); batched variants take 2-D
arrays with one sample per row. Forward passes and input gradients are routed
through :mod:`xsecbench.kernels`, which picks the compiled core when it was
built.

The *class score* used by gradient methods is the pre-softmax logit when the
final activation is softmax, and the network output otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .config import FLOAT_DIGITS, MODEL_FORMAT_VERSION
from .errors import DimensionError, NumericalError, ParseError, ValidationError, VersionError

ACTIVATIONS = ("identity", "relu", "sigmoid", "tanh", "softmax")
_ACT_CODE = {
    "identity": kernels.IDENTITY,
    "relu": kernels.RELU,
    "sigmoid": kernels.SIGMOID,
    "tanh": kernels.TANH,
    "softmax": kernels.SOFTMAX,
}


def as_vector(x, dim: Optional[int] = None, name: str = "x") -> np.ndarray:
    """Validate and convert ``x`` to a finite 1-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name}: expected a 1-D array, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionError(f"{name}: expected length {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains non-finite values")
    return arr


def as_batch(xs, dim: Optional[int] = None, name: str = "xs") -> np.ndarray:
    """Validate and convert ``xs`` to a finite, C-contiguous 2-D float64 array."""
    arr = np.ascontiguousarray(xs, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"{name}: expected a 2-D array, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise DimensionError(f"{name}: expected {dim} features, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains non-finite values")
    return arr


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True, order="C")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DenseLayer:
    """Affine map followed by an elementwise (or softmax) activation.

    ``weights`` has shape ``(out_dim, in_dim)``.
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        w = _frozen(self.weights)
        b = _frozen(self.bias)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise DimensionError(f"weights must be a non-empty 2-D array, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise DimensionError(f"bias shape {b.shape} does not match out_dim {w.shape[0]}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValidationError("layer parameters must be finite")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class Model:
    """Ordered stack of dense layers; ``n_classes`` is the last layer's width."""

    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValidationError("a model needs at least one layer")
        for k, (a, b) in enumerate(zip(layers, layers[1:])):
            if a.out_dim != b.in_dim:
                raise DimensionError(
                    f"layer {k} out_dim {a.out_dim} does not chain into layer {k + 1} in_dim {b.in_dim}"
                )
        for k, layer in enumerate(layers[:-1]):
            if layer.activation == "softmax":
                raise ValidationError(f"softmax is only allowed on the final layer (layer {k})")
        object.__setattr__(self, "layers", layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def n_classes(self) -> int:
        return self.layers[-1].out_dim

    @property
    def has_softmax(self) -> bool:
        return self.layers[-1].activation == "softmax"

    @cached_property
    def _packed(self):
        weights = [layer.weights for layer in self.layers]
        biases = [layer.bias for layer in self.layers]
        acts = np.array([_ACT_CODE[layer.activation] for layer in self.layers], dtype=np.int64)
        return weights, biases, acts

    def parameters(self) -> np.ndarray:
        """All weights and biases flattened into one vector (layer order, weights first)."""
        return np.concatenate([np.concatenate([l.weights.ravel(), l.bias]) for l in self.layers])

    def describe(self) -> str:
        dims = [self.in_dim] + [l.out_dim for l in self.layers]
        acts = ",".join(l.activation for l in self.layers)
        return f"dense {'-'.join(map(str, dims))} ({acts})"


def _check_class(model: Model, class_idx) -> int:
    c = int(class_idx)
    if not 0 <= c < model.n_classes:
        raise ValidationError(f"class index {c} out of range [0, {model.n_classes})")
    return c


# ---------------------------------------------------------------------------
# inference


def forward_batch(model: Model, xs) -> np.ndarray:
    """Post-activation outputs for every row of ``xs``."""
    X = as_batch(xs, model.in_dim)
    w, b, acts = model._packed
    return np.asarray(kernels.forward_batch(w, b, acts, X, True))


def forward(model: Model, x) -> np.ndarray:
    """Post-activation output of the last layer for one input.

    >>> m = Model((DenseLayer([[1.0, 2.0], [0.0, -1.0]], [1.0, 0.0]),))
    >>> forward(m, [1.0, 1.0]).tolist()
    [4.0, -1.0]
    """
    return forward_batch(model, as_vector(x, model.in_dim))[0]


def logits_batch(model: Model, xs) -> np.ndarray:
    """Class-score vectors: pre-softmax values for softmax heads, outputs otherwise."""
    X = as_batch(xs, model.in_dim)
    w, b, acts = model._packed
    return np.asarray(kernels.forward_batch(w, b, acts, X, not model.has_softmax))


def logits(model: Model, x) -> np.ndarray:
    return logits_batch(model, as_vector(x, model.in_dim))[0]


def class_scores_batch(model: Model, xs, class_idx: int) -> np.ndarray:
    c = _check_class(model, class_idx)
    return logits_batch(model, xs)[:, c]


def class_score(model: Model, x, class_idx: int) -> float:
    """Score of one class: the pre-softmax logit for softmax heads, else the output."""
    c = _check_class(model, class_idx)
    return float(logits(model, x)[c])


def probabilities_batch(model: Model, xs, class_idx: int) -> np.ndarray:
    """Output of ``class_idx`` after the final activation, for each row."""
    c = _check_class(model, class_idx)
    return forward_batch(model, xs)[:, c]


def predict_batch(model: Model, xs) -> np.ndarray:
    return np.argmax(forward_batch(model, xs), axis=1)


def predict(model: Model, x) -> int:
    return int(np.argmax(forward(model, x)))


def output_vjp(model: Model, xs, cotangent, on_logits: bool = True):
    """Vector-Jacobian product of the network w.r.t. its inputs.

    ``cotangent`` has one row per sample and one column per class. With
    ``on_logits`` it is applied to the class-score vector, otherwise to the
    post-activation output. Returns ``(values, grad_x)``.
    """
    X = as_batch(xs, model.in_dim)
    G = np.ascontiguousarray(cotangent, dtype=np.float64)
    if G.shape != (X.shape[0], model.n_classes):
        raise DimensionError(f"cotangent shape {G.shape} != ({X.shape[0]}, {model.n_classes})")
    w, b, acts = model._packed
    apply_last = not (on_logits and model.has_softmax)
    out, grad = kernels.vjp_batch(w, b, acts, X, G, apply_last)
    return np.asarray(out), np.asarray(grad)


def input_gradient_batch(model: Model, xs, class_idx) -> np.ndarray:
    """Gradient of the class score w.r.t. each input row.

    ``class_idx`` is a single class or one class per row. ReLU's derivative
    at exactly zero is taken as 0.
    """
    X = as_batch(xs, model.in_dim)
    classes = np.broadcast_to(np.asarray(class_idx, dtype=np.int64), (X.shape[0],))
    if classes.size and (classes.min() < 0 or classes.max() >= model.n_classes):
        raise ValidationError(f"class index out of range [0, {model.n_classes})")
    G = np.zeros((X.shape[0], model.n_classes))
    G[np.arange(X.shape[0]), classes] = 1.0
    return output_vjp(model, X, G, on_logits=True)[1]


def input_gradient(model: Model, x, class_idx: int) -> np.ndarray:
    c = _check_class(model, class_idx)
    return input_gradient_batch(model, as_vector(x, model.in_dim), c)[0]


def cross_entropy_batch(model: Model, xs, ys) -> np.ndarray:
    """Per-sample cross-entropy of softmax(class scores) against integer labels."""
    z = logits_batch(model, xs)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(z)), np.asarray(ys, dtype=np.int64)]


def loss_input_gradient_batch(model: Model, xs, ys):
    """Cross-entropy loss and its gradient w.r.t. each input row."""
    X = as_batch(xs, model.in_dim)
    ys = np.asarray(ys, dtype=np.int64)
    z = logits_batch(model, X)
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    loss = -np.log(p[np.arange(len(ys)), ys])
    G = p.copy()
    G[np.arange(len(ys)), ys] -= 1.0
    return loss, output_vjp(model, X, G, on_logits=True)[1]


# ---------------------------------------------------------------------------
# construction and training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.1
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError("epochs must be non-negative")
        if not 0.0 < self.learning_rate <= 10.0:
            raise ValidationError("learning_rate must lie in (0, 10]")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")


def _uniform_layer(rng: np.random.Generator, in_dim: int, out_dim: int, activation: str) -> DenseLayer:
    bound = 1.0 / np.sqrt(in_dim)
    w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    b = rng.uniform(-bound, bound, size=out_dim)
    return DenseLayer(w, b, activation)


def init_model(sizes: Sequence[int], hidden: str = "tanh", output: str = "softmax", seed: int = 0) -> Model:
    """Fresh model with layer widths ``sizes`` (input first), weights uniform in +-1/sqrt(in_dim)."""
    if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
        raise ValidationError(f"need at least two positive layer sizes, got {list(sizes)}")
    rng = np.random.default_rng(seed)
    n = len(sizes) - 1
    layers = [
        _uniform_layer(rng, sizes[k], sizes[k + 1], output if k == n - 1 else hidden)
        for k in range(n)
    ]
    return Model(tuple(layers))


def randomize_parameters(model: Model, seed: int) -> Model:
    """Same architecture, every parameter redrawn uniform in +-1/sqrt(in_dim)."""
    rng = np.random.default_rng(seed)
    return Model(tuple(_uniform_layer(rng, l.in_dim, l.out_dim, l.activation) for l in model.layers))


def _backprop_params(params, codes, softmax_head: bool, X: np.ndarray, y: np.ndarray):
    # Mean cross-entropy over the batch and its parameter gradients.
    acts, zs = [X], []
    a = X
    last = len(params) - 1
    for k, (w, b) in enumerate(params):
        z = a @ w.T + b
        zs.append(z)
        a = z if (k == last and softmax_head) else kernels._pure._activate(z, codes[k])
        acts.append(a)
    s = a - a.max(axis=1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=1, keepdims=True)
    n = X.shape[0]
    loss = float(-np.log(np.maximum(p[np.arange(n), y], 1e-300)).mean())
    g = p
    g[np.arange(n), y] -= 1.0
    g /= n
    grads = [None] * len(params)
    for k in range(last, -1, -1):
        if not (k == last and softmax_head):
            g = kernels._pure._activation_vjp(zs[k], acts[k + 1], g, codes[k])
        grads[k] = (g.T @ acts[k], g.sum(axis=0))
        g = g @ params[k][0]
    return loss, grads


def train_sgd(model: Model, xs, ys, cfg: TrainConfig) -> Model:
    """Mini-batch SGD on mean cross-entropy of softmax(class scores); returns a new model.

    Samples are reshuffled each epoch from a generator seeded with
    ``cfg.seed``, so identical data and config give bit-identical results.
    Raises :class:`NumericalError` if the loss or parameters become non-finite.
    """
    X = as_batch(xs, model.in_dim)
    y = np.asarray(ys, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValidationError("empty dataset")
    if y.shape != (X.shape[0],):
        raise DimensionError(f"{X.shape[0]} samples but {y.size} labels")
    if y.min() < 0 or y.max() >= model.n_classes:
        raise ValidationError(f"labels must lie in [0, {model.n_classes})")
    if cfg.batch_size > X.shape[0]:
        raise ValidationError(f"batch_size {cfg.batch_size} exceeds dataset size {X.shape[0]}")
    if cfg.epochs == 0:
        return model

    params = [(l.weights.copy(), l.bias.copy()) for l in model.layers]
    codes = [_ACT_CODE[l.activation] for l in model.layers]
    rng = np.random.default_rng(cfg.seed)
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        order = rng.permutation(X.shape[0])
        for start in range(0, X.shape[0], cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = _backprop_params(params, codes, model.has_softmax, X[idx], y[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"loss became non-finite in epoch {epoch}")
            for (w, b), (gw, gb) in zip(params, grads):
                w -= lr * gw
                b -= lr * gb
    if not all(np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in params):
        raise NumericalError("parameters became non-finite during training")
    return Model(tuple(DenseLayer(w, b, l.activation) for (w, b), l in zip(params, model.layers)))


def accuracy(model: Model, xs, ys) -> float:
    return float(np.mean(predict_batch(model, xs) == np.asarray(ys)))


# ---------------------------------------------------------------------------
# serialisation


def _fmt(values) -> str:
    return "[" + ", ".join(format(float(v), f".{FLOAT_DIGITS}g") for v in np.ravel(values)) + "]"


def dumps_model(model: Model, manifest: Optional[dict] = None) -> str:
    """Versioned JSON text; floats written with 17 significant digits."""
    lines = ["{", f'  "version": {MODEL_FORMAT_VERSION},', f'  "n_classes": {model.n_classes},']
    if manifest is not None:
        lines.append(f'  "manifest": {json.dumps(manifest, sort_keys=True)},')
    lines.append('  "layers": [')
    for k, layer in enumerate(model.layers):
        sep = "," if k < len(model.layers) - 1 else ""
        lines += [
            "    {",
            f'      "in": {layer.in_dim},',
            f'      "out": {layer.out_dim},',
            f'      "activation": "{layer.activation}",',
            f'      "w": {_fmt(layer.weights)},',
            f'      "b": {_fmt(layer.bias)}',
            "    }" + sep,
        ]
    lines += ["  ]", "}", ""]
    return "\n".join(lines)


def _field(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{where}: missing field {key!r}")
    return obj[key]


def _floats(values, n: int, where: str) -> np.ndarray:
    if not isinstance(values, list) or len(values) != n:
        got = len(values) if isinstance(values, list) else type(values).__name__
        raise ParseError(f"{where}: expected {n} numbers, got {got}")
    for i, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(f"{where}[{i}]: not a number: {v!r}")
    return np.array(values, dtype=np.float64)


def loads_model(text: str) -> Model:
    """Parse a model from :func:`dumps_model` output.

    Raises :class:`ParseError` naming the line or field at fault, and
    :class:`VersionError` for an unsupported format version.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError("top level: expected an object")
    version = _field(doc, "version", "top level")
    if version != MODEL_FORMAT_VERSION:
        raise VersionError(f"unsupported model format version {version!r} (expected {MODEL_FORMAT_VERSION})")
    n_classes = _field(doc, "n_classes", "top level")
    raw_layers = _field(doc, "layers", "top level")
    if not isinstance(raw_layers, list) or not raw_layers:
        raise ParseError("layers: expected a non-empty list")
    layers = []
    for k, raw in enumerate(raw_layers):
        where = f"layers[{k}]"
        n_in, n_out = _field(raw, "in", where), _field(raw, "out", where)
        if not (isinstance(n_in, int) and isinstance(n_out, int) and n_in > 0 and n_out > 0):
            raise ParseError(f"{where}: in/out must be positive integers")
        act = _field(raw, "activation", where)
        w = _floats(_field(raw, "w", where), n_in * n_out, where + ".w").reshape(n_out, n_in)
        b = _floats(_field(raw, "b", where), n_out, where + ".b")
        try:
            layers.append(DenseLayer(w, b, act))
        except (ValidationError, DimensionError) as exc:
            raise ParseError(f"{where}: {exc}") from exc
    try:
        model = Model(tuple(layers))
    except (ValidationError, DimensionError) as exc:
        raise ParseError(f"layers: {exc}") from exc
    if n_classes != model.n_classes:
        raise ParseError(f"n_classes: declared {n_classes!r} but last layer has {model.n_classes} outputs")
    return model


def save_model(model: Model, path, manifest: Optional[dict] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_model(model, manifest))


def load_model(path) -> Model:
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())
