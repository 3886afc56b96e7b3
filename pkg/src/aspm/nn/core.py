"""Layer specs, parameter handling, forward and backward passes.

Activations are channel-last: ``(batch, length, channels)`` for the
convolutional part and ``(batch, features)`` after flattening.  All math
runs in float64 unless the parameters are supplied in another dtype.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

INPUT_LENGTH = 60

WEIGHTED = ("dense", "conv1d", "softmax_output")
KINDS = WEIGHTED + ("maxpool1d", "relu", "dropout", "flatten")


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    size: int = 0          # units, filters or classes
    kernel: int = 0
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in WEIGHTED and self.size <= 0:
            raise ValueError(f"{self.kind} needs a positive size")
        if self.kind == "conv1d" and (self.kernel <= 0 or self.kernel % 2 == 0):
            raise ValueError("conv1d kernel must be a positive odd number")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.size:
            d["size"] = self.size
        if self.kernel:
            d["kernel"] = self.kernel
        if self.kind == "dropout":
            d["rate"] = self.rate
        return d


def dense(units: int) -> LayerSpec:
    return LayerSpec("dense", size=units)


def conv1d(filters: int, kernel: int = 5) -> LayerSpec:
    return LayerSpec("conv1d", size=filters, kernel=kernel)


def maxpool1d() -> LayerSpec:
    return LayerSpec("maxpool1d")


def relu() -> LayerSpec:
    return LayerSpec("relu")


def dropout(rate: float = 0.5) -> LayerSpec:
    return LayerSpec("dropout", rate=rate)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def softmax_output(classes: int = 2) -> LayerSpec:
    return LayerSpec("softmax_output", size=classes)


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple
    input_length: int = INPUT_LENGTH
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        layer_shapes(self)

    def to_dict(self) -> dict:
        return {"name": self.name, "input_length": self.input_length,
                "layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(tuple(LayerSpec(**layer) for layer in d["layers"]),
                   int(d.get("input_length", INPUT_LENGTH)), d.get("name", ""))


def layer_shapes(spec: ModelSpec) -> list[tuple[tuple, tuple]]:
    """Per-layer ``(input_shape, output_shape)`` excluding the batch axis."""
    shape: tuple = (spec.input_length,)
    out = []
    if not spec.layers or spec.layers[-1].kind != "softmax_output":
        raise ShapeError("the last layer must be softmax_output")
    for i, layer in enumerate(spec.layers):
        k = layer.kind
        if k == "conv1d":
            if len(shape) == 1:
                shape = (shape[0], 1)
            new = (shape[0], layer.size)
        elif k == "maxpool1d":
            if len(shape) != 2 or shape[0] < 2:
                raise ShapeError(f"layer {i}: maxpool1d needs (length>=2, channels), got {shape}")
            new = (shape[0] // 2, shape[1])
        elif k == "flatten":
            new = (int(np.prod(shape)),)
        elif k in ("dense", "softmax_output"):
            if len(shape) != 1:
                raise ShapeError(f"layer {i}: {k} needs a flat input, got {shape}")
            new = (layer.size,)
        else:
            new = shape
        if k == "softmax_output" and i != len(spec.layers) - 1:
            raise ShapeError("softmax_output must be the last layer")
        out.append((shape, new))
        shape = new
    return out


def param_shapes(spec: ModelSpec) -> list[Optional[tuple[tuple, tuple]]]:
    shapes = []
    for layer, (shp_in, _) in zip(spec.layers, layer_shapes(spec)):
        if layer.kind == "conv1d":
            shapes.append(((layer.kernel, shp_in[1], layer.size), (layer.size,)))
        elif layer.kind in ("dense", "softmax_output"):
            shapes.append(((shp_in[0], layer.size), (layer.size,)))
        else:
            shapes.append(None)
    return shapes


def param_count(spec: ModelSpec) -> int:
    return sum(int(np.prod(w)) + int(np.prod(b)) for w, b in filter(None, param_shapes(spec)))


def init_params(spec: ModelSpec, rng: np.random.Generator) -> list:
    """He-uniform weights scaled by fan-in, zero biases."""
    params = []
    for shapes in param_shapes(spec):
        if shapes is None:
            params.append(None)
            continue
        w_shape, b_shape = shapes
        fan_in = int(np.prod(w_shape[:-1]))
        limit = np.sqrt(6.0 / fan_in)
        params.append((rng.uniform(-limit, limit, w_shape), np.zeros(b_shape)))
    return params


def copy_params(params: list) -> list:
    return [None if p is None else (p[0].copy(), p[1].copy()) for p in params]


def iter_tensors(params: list):
    for p in params:
        if p is not None:
            yield p[0]
            yield p[1]


def check_params(spec: ModelSpec, params: list) -> None:
    expected = param_shapes(spec)
    if len(params) != len(expected):
        raise ShapeError(f"expected {len(expected)} layer entries, got {len(params)}")
    for i, (exp, got) in enumerate(zip(expected, params)):
        if (exp is None) != (got is None):
            raise ShapeError(f"layer {i}: parameter presence mismatch")
        if exp is not None and (tuple(got[0].shape) != exp[0] or tuple(got[1].shape) != exp[1]):
            raise ShapeError(f"layer {i}: expected shapes {exp}, got {got[0].shape}, {got[1].shape}")


# ---------------------------------------------------------------------------
# Layer kernels
# ---------------------------------------------------------------------------

def _conv_forward(x, w, b):
    # same-padded cross-correlation via im2col; columns are ordered (tap, channel)
    n, length, c = x.shape
    k = w.shape[0]
    pad = k // 2
    xp = np.zeros((n, length + 2 * pad, c), dtype=x.dtype)
    xp[:, pad:pad + length] = x
    cols = sliding_window_view(xp, k, axis=1).transpose(0, 1, 3, 2).reshape(n * length, k * c)
    # for n == 1 the reshape can yield an overlapping-stride view that BLAS rejects
    cols = np.ascontiguousarray(cols)
    out = (cols @ w.reshape(k * c, -1)).reshape(n, length, -1)
    out += b
    return out, cols


def _conv_backward(dy, cols, w, x_shape, need_dx=True):
    n, length, c = x_shape
    k = w.shape[0]
    pad = k // 2
    dyf = dy.reshape(n * length, -1)
    dw = (cols.T @ dyf).reshape(w.shape)
    db = dyf.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dyf @ w.reshape(k * c, -1).T).reshape(n, length, k, c)
    dxp = np.zeros((n, length + 2 * pad, c), dtype=dy.dtype)
    for j in range(k):
        dxp[:, j:j + length] += dcols[:, :, j]
    return dxp[:, pad:pad + length], dw, db


def _pool_forward(x):
    n, length, c = x.shape
    half = length // 2
    a = x[:, 0:2 * half:2]
    b = x[:, 1:2 * half:2]
    first = a >= b
    return np.where(first, a, b), first


def _pool_backward(dy, first, x_shape):
    half = x_shape[1] // 2
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, 0:2 * half:2] = np.where(first, dy, 0.0)
    dx[:, 1:2 * half:2] = np.where(first, 0.0, dy)
    return dx


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)
    aux: list = field(default_factory=list)


def forward(params: list, spec: ModelSpec, x: np.ndarray, training: bool = False,
            rng: np.random.Generator | None = None):
    """Return ``(logits, cache)``.  Dropout is active only when ``training``."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != spec.input_length:
        raise ShapeError(f"expected input of shape (n, {spec.input_length}), got {x.shape}")
    if len(params) != len(spec.layers):
        raise ShapeError("parameter list does not match the spec")
    if training and rng is None:
        rng = np.random.default_rng()
    cache = ForwardCache()
    h = x
    for layer, p in zip(spec.layers, params):
        k = layer.kind
        cache.inputs.append(h)
        aux = None
        if k == "conv1d":
            if h.ndim == 2:
                h = h[:, :, None]
                cache.inputs[-1] = h
            if h.shape[2] != p[0].shape[1]:
                raise ShapeError(f"conv1d expects {p[0].shape[1]} channels, got {h.shape[2]}")
            h, aux = _conv_forward(h, p[0], p[1])
        elif k in ("dense", "softmax_output"):
            if h.shape[1] != p[0].shape[0]:
                raise ShapeError(f"{k} expects {p[0].shape[0]} features, got {h.shape[1]}")
            h = h @ p[0] + p[1]
        elif k == "relu":
            h = np.maximum(h, 0.0)
        elif k == "maxpool1d":
            h, aux = _pool_forward(h)
        elif k == "flatten":
            h = h.reshape(h.shape[0], -1)
        elif k == "dropout":
            if training and layer.rate > 0:
                aux = (rng.random(h.shape) >= layer.rate) / (1.0 - layer.rate)
                h = h * aux
        cache.aux.append(aux)
    return h, cache


def backward(params: list, spec: ModelSpec, cache: ForwardCache, dlogits: np.ndarray) -> list:
    grads: list = [None] * len(spec.layers)
    d = dlogits
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, p, x, aux = spec.layers[i], params[i], cache.inputs[i], cache.aux[i]
        k = layer.kind
        if k == "conv1d":
            d, dw, db = _conv_backward(d, aux, p[0], x.shape, need_dx=i > 0)
            grads[i] = (dw, db)
        elif k in ("dense", "softmax_output"):
            grads[i] = (x.T @ d, d.sum(axis=0))
            if i > 0:
                d = d @ p[0].T
        elif k == "relu":
            d = d * (x > 0)
        elif k == "maxpool1d":
            d = _pool_backward(d, aux, x.shape)
        elif k == "flatten":
            d = d.reshape(x.shape)
        elif k == "dropout":
            if aux is not None:
                d = d * aux
    return grads


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropy, computed stably from logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    return logsum - z[np.arange(len(labels)), labels]


def loss_and_grads(params: list, spec: ModelSpec, x: np.ndarray, labels: np.ndarray,
                   sample_weight: np.ndarray | None = None, training: bool = False,
                   rng: np.random.Generator | None = None):
    """Weighted mean cross-entropy ``sum(w_i * ce_i) / n`` and its gradients."""
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("sample weights must be non-negative")
    logits, cache = forward(params, spec, x, training=training, rng=rng)
    if np.any((labels < 0) | (labels >= logits.shape[1])):
        raise ValueError("labels out of range")
    loss = float(np.dot(w, cross_entropy(logits, labels)) / n)
    d = softmax(logits)
    d[np.arange(n), labels] -= 1.0
    d *= (w / n)[:, None]
    return loss, backward(params, spec, cache, d)


def predict_proba(params: list, spec: ModelSpec, x: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    x = np.asarray(x)
    if len(x) == 0:
        return np.empty((0, spec.layers[-1].size))
    parts = [softmax(forward(params, spec, x[i:i + batch_size])[0])
             for i in range(0, len(x), batch_size)]
    return np.concatenate(parts)
