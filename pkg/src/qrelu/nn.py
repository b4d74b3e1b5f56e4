"""Dense ReLU multilayer perceptron with explicit forward/backward passes.

All sample data flow through 2-D row-major float64 arrays (one row per
sample).  Per-feature parameters (biases, batchnorm scale/shift, running
statistics) are 1-D float64 arrays.  There is no autograd: every layer
implements its own backward rule, and :func:`grad_check` validates the
whole stack against central finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

MODEL_FORMAT_VERSION = 1

BATCHNORM_EPS = 1e-5
BATCHNORM_MOMENTUM = 0.9


class ShapeError(ValueError):
    """Array dimensions are incompatible with the requested operation."""


class DegenerateBatchError(ValueError):
    """Train-mode batch too small for batch normalization statistics."""


class ModelFormatError(ValueError):
    """Model file is malformed; the message carries the offending field path."""


class ModelVersionError(ModelFormatError):
    """Model file declares an unsupported format version."""


def as_matrix(a, name: str = "array") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting other ranks."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ShapeError(f"{name} must be 2-D (batch, features), got ndim={out.ndim}")
    return out


# ---------------------------------------------------------------------------
# Layer specifications (architecture description, no parameters)


@dataclass(frozen=True)
class Linear:
    in_dim: int
    out_dim: int

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"linear dims must be positive, got {self.in_dim}x{self.out_dim}")


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class BatchNorm:
    width: int

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"batchnorm width must be positive, got {self.width}")


@dataclass(frozen=True)
class Dropout:
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.rate}")


LayerSpec = Linear | ReLU | BatchNorm | Dropout


# ---------------------------------------------------------------------------
# Parameter-bearing layers


class _LinearLayer:
    kind = "linear"

    def __init__(self, w: np.ndarray, b: np.ndarray):
        self.w = w  # (out, in)
        self.b = b  # (out,)

    def spec(self) -> Linear:
        return Linear(self.w.shape[1], self.w.shape[0])

    def params(self):
        return {"w": self.w, "b": self.b}

    def forward(self, x, training, rng):
        if x.shape[1] != self.w.shape[1]:
            raise ShapeError(
                f"linear layer expects {self.w.shape[1]} input features, got {x.shape[1]}"
            )
        return x @ self.w.T + self.b, x

    def backward(self, dy, cache):
        x = cache
        return dy @ self.w, {"w": dy.T @ x, "b": dy.sum(axis=0)}


class _ReluLayer:
    kind = "relu"

    def spec(self) -> ReLU:
        return ReLU()

    def params(self):
        return {}

    def forward(self, x, training, rng):
        return np.maximum(x, 0.0), x > 0.0

    def backward(self, dy, cache):
        return dy * cache, {}


class _BatchNormLayer:
    kind = "batchnorm"

    def __init__(self, gamma, beta, running_mean, running_var):
        self.gamma = gamma
        self.beta = beta
        self.running_mean = running_mean
        self.running_var = running_var

    def spec(self) -> BatchNorm:
        return BatchNorm(self.gamma.shape[0])

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def forward(self, x, training, rng):
        width = self.gamma.shape[0]
        if x.shape[1] != width:
            raise ShapeError(f"batchnorm expects width {width}, got {x.shape[1]}")
        if training:
            if x.shape[0] < 2:
                raise DegenerateBatchError(
                    "train-mode batchnorm needs a batch of at least 2 samples"
                )
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + BATCHNORM_EPS)
            xhat = (x - mean) * inv_std
            m = BATCHNORM_MOMENTUM
            self.running_mean = m * self.running_mean + (1.0 - m) * mean
            self.running_var = m * self.running_var + (1.0 - m) * var
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + BATCHNORM_EPS)
            xhat = (x - self.running_mean) * inv_std
        return self.gamma * xhat + self.beta, (xhat, inv_std, training)

    def backward(self, dy, cache):
        xhat, inv_std, was_training = cache
        dgamma = (dy * xhat).sum(axis=0)
        dbeta = dy.sum(axis=0)
        dxhat = dy * self.gamma
        if was_training:
            # gradient through the batch statistics
            dx = inv_std * (
                dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)
            )
        else:
            dx = dxhat * inv_std
        return dx, {"gamma": dgamma, "beta": dbeta}


class _DropoutLayer:
    kind = "dropout"

    def __init__(self, rate: float):
        self.rate = rate

    def spec(self) -> Dropout:
        return Dropout(self.rate)

    def params(self):
        return {}

    def forward(self, x, training, rng):
        if not training or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError("train-mode dropout requires an rng stream")
        # inverted dropout: survivors are rescaled so eval needs no correction
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, dy, cache):
        if cache is None:
            return dy, {}
        return dy * cache, {}


_SPEC_BUILDERS = {
    "linear": _LinearLayer,
    "relu": _ReluLayer,
    "batchnorm": _BatchNormLayer,
    "dropout": _DropoutLayer,
}


class MlpModel:
    """Ordered stack of linear / batchnorm / relu / dropout layers.

    A model is single-writer: training mutates it from one logical thread.
    Eval-mode forward (``training == False``) is a pure function of the
    inputs and is safe to call concurrently.
    """

    def __init__(self, layers, input_dim, output_dim):
        self.layers = layers
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.training = False

    def train_mode(self) -> "MlpModel":
        self.training = True
        return self

    def eval_mode(self) -> "MlpModel":
        self.training = False
        return self

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable parameters keyed '<layer_index>.<name>' (live references)."""
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out[f"{i}.{name}"] = arr
        return out

    def specs(self) -> list[LayerSpec]:
        return [layer.spec() for layer in self.layers]

    @property
    def has_batchnorm(self) -> bool:
        return any(layer.kind == "batchnorm" for layer in self.layers)

    @property
    def has_dropout(self) -> bool:
        return any(layer.kind == "dropout" and layer.rate > 0.0 for layer in self.layers)


def _validate_chain(specs) -> tuple[int | None, int | None]:
    """Check width compatibility through the stack; return (input, output) dims.

    Dims are None for stacks with no width-fixing layer (e.g. a bare ReLU),
    which accept any input width.
    """
    if not specs:
        raise ValueError("layer spec list must be nonempty")
    input_dim = None
    width = None
    for i, spec in enumerate(specs):
        if isinstance(spec, Linear):
            if width is not None and spec.in_dim != width:
                raise ShapeError(
                    f"layer {i}: linear expects in_dim {width} from the previous "
                    f"layer, got {spec.in_dim}"
                )
            if input_dim is None:
                input_dim = spec.in_dim
            width = spec.out_dim
        elif isinstance(spec, BatchNorm):
            if width is not None and spec.width != width:
                raise ShapeError(
                    f"layer {i}: batchnorm width {spec.width} does not match "
                    f"incoming width {width}"
                )
            if input_dim is None:
                input_dim = spec.width
            width = spec.width
        elif isinstance(spec, (ReLU, Dropout)):
            pass
        else:
            raise TypeError(f"layer {i}: unknown spec {spec!r}")
    return input_dim, width


def init_model(specs, seed: int) -> MlpModel:
    """Build a model from layer specs with He-initialized linear weights.

    Linear weights are drawn from N(0, 2/fan_in); biases start at zero.
    Batchnorm starts as the identity transform with unit running variance.
    Deterministic given ``seed``.
    """
    input_dim, output_dim = _validate_chain(specs)
    rng = np.random.default_rng(seed)
    layers = []
    for spec in specs:
        if isinstance(spec, Linear):
            std = np.sqrt(2.0 / spec.in_dim)
            w = rng.standard_normal((spec.out_dim, spec.in_dim)) * std
            b = np.zeros(spec.out_dim)
            layers.append(_LinearLayer(w, b))
        elif isinstance(spec, BatchNorm):
            layers.append(
                _BatchNormLayer(
                    gamma=np.ones(spec.width),
                    beta=np.zeros(spec.width),
                    running_mean=np.zeros(spec.width),
                    running_var=np.ones(spec.width),
                )
            )
        elif isinstance(spec, ReLU):
            layers.append(_ReluLayer())
        elif isinstance(spec, Dropout):
            layers.append(_DropoutLayer(spec.rate))
    return MlpModel(layers, input_dim, output_dim)


def default_architecture(input_dim: int, output_dim: int, *, hidden: int = 200,
                         dropout_rate: float = 0.1) -> list[LayerSpec]:
    """Two hidden layers with batchnorm, ReLU, and dropout after each linear."""
    return [
        Linear(input_dim, hidden),
        BatchNorm(hidden),
        ReLU(),
        Dropout(dropout_rate),
        Linear(hidden, hidden),
        BatchNorm(hidden),
        ReLU(),
        Dropout(dropout_rate),
        Linear(hidden, output_dim),
    ]


def forward(model: MlpModel, x, rng=None):
    """Run the stack on a batch; returns (output, per-layer caches).

    Train mode samples dropout masks from ``rng`` and updates batchnorm
    running statistics; eval mode is deterministic and side-effect free.
    """
    out = as_matrix(x, "input")
    if model.input_dim is not None and out.shape[1] != model.input_dim:
        raise ShapeError(
            f"model expects {model.input_dim} input features, got {out.shape[1]}"
        )
    caches = []
    for layer in model.layers:
        out, cache = layer.forward(out, model.training, rng)
        caches.append(cache)
    if not np.isfinite(out).all():
        raise FloatingPointError("forward pass produced non-finite outputs")
    return out, caches


def predict(model: MlpModel, x, chunk: int = 8192) -> np.ndarray:
    """Eval-mode forward in chunks, without retaining caches.

    Ignores the model's current mode flag; never mutates running statistics.
    """
    x = as_matrix(x, "input")
    outs = []
    for start in range(0, x.shape[0], chunk):
        out = x[start:start + chunk]
        for layer in model.layers:
            out, _ = layer.forward(out, False, None)
        outs.append(out)
    result = np.vstack(outs)
    if not np.isfinite(result).all():
        raise FloatingPointError("forward pass produced non-finite outputs")
    return result


def backward(model: MlpModel, caches, dloss_dy) -> dict[str, np.ndarray]:
    """Backpropagate a loss gradient; returns gradients keyed like parameters().

    ``caches`` must come from a matching :func:`forward` call in the same
    mode; dropout masks and batchnorm batch statistics are reused exactly.
    """
    if caches is None or len(caches) != len(model.layers):
        raise ValueError("stale or missing forward cache")
    d = as_matrix(dloss_dy, "dloss_dy")
    grads: dict[str, np.ndarray] = {}
    for i in reversed(range(len(model.layers))):
        d, layer_grads = model.layers[i].backward(d, caches[i])
        for name, g in layer_grads.items():
            grads[f"{i}.{name}"] = g
    return grads


def grad_check(model: MlpModel, loss_fn, x, y, h: float = 1e-5,
               max_coords: int = 100, seed: int = 0) -> float:
    """Compare backward() to central finite differences; return max relative error.

    ``loss_fn(y, output) -> (loss, dloss_doutput)``.  Checks a random
    subsample of ``max_coords`` parameter coordinates (all, if fewer).
    If the model is in train mode with dropout, masks are frozen by reseeding
    the same dropout stream for every forward evaluation.
    """
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")

    def run_forward():
        rng = np.random.default_rng(0x5EED) if model.training else None
        return forward(model, x, rng)

    out, caches = run_forward()
    _, dly = loss_fn(y, out)
    grads = backward(model, caches, dly)

    coords = []
    for key, arr in model.parameters().items():
        for flat_index in range(arr.size):
            coords.append((key, flat_index))
    if len(coords) > max_coords:
        picker = np.random.default_rng(seed)
        chosen = picker.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in chosen]

    params = model.parameters()
    worst = 0.0
    for key, flat_index in coords:
        arr = params[key]
        orig = arr.flat[flat_index]
        arr.flat[flat_index] = orig + h
        loss_plus = loss_fn(y, run_forward()[0])[0]
        arr.flat[flat_index] = orig - h
        loss_minus = loss_fn(y, run_forward()[0])[0]
        arr.flat[flat_index] = orig
        numeric = (loss_plus - loss_minus) / (2.0 * h)
        analytic = grads[key].flat[flat_index]
        rel = abs(numeric - analytic) / max(1e-8, abs(numeric) + abs(analytic))
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Serialization: JSON, exact float round-trip via repr-based encoding


def _layer_to_doc(layer):
    if layer.kind == "linear":
        return {"kind": "linear", "w": layer.w.tolist(), "b": layer.b.tolist()}
    if layer.kind == "batchnorm":
        return {
            "kind": "batchnorm",
            "gamma": layer.gamma.tolist(),
            "beta": layer.beta.tolist(),
            "running_mean": layer.running_mean.tolist(),
            "running_var": layer.running_var.tolist(),
        }
    if layer.kind == "relu":
        return {"kind": "relu"}
    if layer.kind == "dropout":
        return {"kind": "dropout", "rate": layer.rate}
    raise TypeError(f"unknown layer kind {layer.kind!r}")


def save_model(model: MlpModel, path) -> None:
    """Write the model as JSON; floats round-trip bit-exactly."""
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "layers": [_layer_to_doc(layer) for layer in model.layers],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def _want(doc, key, types, path):
    if not isinstance(doc, dict) or key not in doc:
        raise ModelFormatError(f"missing field {path}.{key}")
    value = doc[key]
    if not isinstance(value, types):
        raise ModelFormatError(f"field {path}.{key} has wrong type {type(value).__name__}")
    return value


def _float_vector(doc, key, path, width=None):
    raw = _want(doc, key, list, path)
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"field {path}.{key} is not numeric: {exc}") from None
    if arr.ndim != 1:
        raise ModelFormatError(f"field {path}.{key} must be a flat list")
    if width is not None and arr.shape[0] != width:
        raise ModelFormatError(f"field {path}.{key} has length {arr.shape[0]}, expected {width}")
    if not np.isfinite(arr).all():
        raise ModelFormatError(f"field {path}.{key} contains non-finite values")
    return arr


def _layer_from_doc(doc, i):
    path = f"layers[{i}]"
    kind = _want(doc, "kind", str, path)
    if kind == "linear":
        raw_w = _want(doc, "w", list, path)
        try:
            w = np.asarray(raw_w, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ModelFormatError(f"field {path}.w is not numeric: {exc}") from None
        if w.ndim != 2:
            raise ModelFormatError(f"field {path}.w must be a nested (out x in) list")
        if not np.isfinite(w).all():
            raise ModelFormatError(f"field {path}.w contains non-finite values")
        b = _float_vector(doc, "b", path, width=w.shape[0])
        return _LinearLayer(w, b)
    if kind == "batchnorm":
        gamma = _float_vector(doc, "gamma", path)
        width = gamma.shape[0]
        layer = _BatchNormLayer(
            gamma=gamma,
            beta=_float_vector(doc, "beta", path, width),
            running_mean=_float_vector(doc, "running_mean", path, width),
            running_var=_float_vector(doc, "running_var", path, width),
        )
        if not (layer.running_var > 0.0).all():
            raise ModelFormatError(f"field {path}.running_var must be strictly positive")
        return layer
    if kind == "relu":
        return _ReluLayer()
    if kind == "dropout":
        rate = _want(doc, "rate", (int, float), path)
        if not 0.0 <= rate < 1.0:
            raise ModelFormatError(f"field {path}.rate must lie in [0, 1)")
        return _DropoutLayer(float(rate))
    raise ModelFormatError(f"field {path}.kind has unknown value {kind!r}")


def load_model(path) -> MlpModel:
    """Load a model saved by :func:`save_model`; eval mode by default."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("top-level document must be an object")
    version = _want(doc, "version", int, "$")
    if version != MODEL_FORMAT_VERSION:
        raise ModelVersionError(
            f"unsupported model version {version}, expected {MODEL_FORMAT_VERSION}"
        )
    raw_layers = _want(doc, "layers", list, "$")
    layers = [_layer_from_doc(entry, i) for i, entry in enumerate(raw_layers)]
    model = MlpModel(layers, doc.get("input_dim"), doc.get("output_dim"))
    input_dim, output_dim = _validate_chain(model.specs())
    if model.input_dim != input_dim or model.output_dim != output_dim:
        raise ModelFormatError(
            f"declared dims ({model.input_dim}, {model.output_dim}) do not match "
            f"layer shapes ({input_dim}, {output_dim})"
        )
    return model
