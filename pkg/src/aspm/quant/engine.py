"""Float and int8 inference engines.

Both engines run the same layer list as :mod:`aspm.nn`.  The float engine
stores float32 weights.  The int8 engine stores per-tensor affine int8
weights, quantizes the input of every weighted layer with calibrated
activation parameters, accumulates in int32 and applies one float rescale
per layer.  Biases stay float32 and are added after the rescale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..nn.core import ModelSpec, ShapeError, check_params, softmax

QMIN, QMAX = -128, 127
SCALE_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# Affine quantization of single tensors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int


def choose_qparams(lo: float, hi: float) -> QuantParams:
    """Asymmetric int8 parameters for the real range ``[lo, hi]``.

    The range is widened to include 0 so that real zero maps to an integer
    exactly.  A degenerate range falls back to a scale of ``1e-8``.
    """
    lo = min(float(lo), 0.0)
    hi = max(float(hi), 0.0)
    scale = (hi - lo) / (QMAX - QMIN)
    scale = float(np.float32(max(scale, SCALE_FLOOR)))
    zp = int(np.clip(np.round(QMIN - lo / scale), QMIN, QMAX))
    return QuantParams(scale, zp)


def tensor_qparams(w: np.ndarray) -> QuantParams:
    w = np.asarray(w)
    return choose_qparams(w.min(initial=0.0), w.max(initial=0.0))


def quantize_tensor(w: np.ndarray, qp: QuantParams) -> np.ndarray:
    q = np.round(np.asarray(w, dtype=np.float64) / qp.scale) + qp.zero_point
    return np.clip(q, QMIN, QMAX).astype(np.int8)


def dequantize_tensor(q: np.ndarray, qp: QuantParams) -> np.ndarray:
    return (q.astype(np.float64) - qp.zero_point) * qp.scale


# ---------------------------------------------------------------------------
# Integer kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _quantize_centered(h, inv_scale, zp):
    # real -> int8 grid, returned relative to the zero point so that real 0 is 0
    flat = h.ravel()
    out = np.empty(flat.size, np.int16)
    for i in range(flat.size):
        q = np.rint(flat[i] * inv_scale) + zp
        if q < -128.0:
            q = -128.0
        elif q > 127.0:
            q = 127.0
        out[i] = np.int16(q) - zp
    return out.reshape(h.shape)


@numba.njit(cache=True)
def _gemm_i32(a, w):
    # a: (m, k) int16, w: (k, n) int16 -> (m, n) int32
    m, kk = a.shape
    n = w.shape[1]
    out = np.zeros((m, n), np.int32)
    for i in range(m):
        for k in range(kk):
            av = np.int32(a[i, k])
            if av == 0:
                continue
            for o in range(n):
                out[i, o] += av * np.int32(w[k, o])
    return out


@numba.njit(cache=True)
def _conv_i32(a, w, taps):
    # same-padded conv on (batch, length, channels) int16 input; w rows are (tap, channel)
    nb, length, c = a.shape
    n = w.shape[1]
    pad = taps // 2
    out = np.zeros((nb, length, n), np.int32)
    for b in range(nb):
        for i in range(length):
            for j in range(taps):
                src = i + j - pad
                if src < 0 or src >= length:
                    continue
                for ch in range(c):
                    av = np.int32(a[b, src, ch])
                    if av == 0:
                        continue
                    row = j * c + ch
                    for o in range(n):
                        out[b, i, o] += av * np.int32(w[row, o])
    return out


def _pool(h):
    half = h.shape[1] // 2
    return np.maximum(h[:, 0:2 * half:2], h[:, 1:2 * half:2])


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

def _check_input(spec: ModelSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_length:
        raise ShapeError(f"expected input of shape (n, {spec.input_length}), got {x.shape}")
    return x


class FloatModel:
    """Float32 inference model, as written by :func:`export_float`."""

    kind = "float"

    def __init__(self, spec: ModelSpec, params: list):
        check_params(spec, params)
        self.spec = spec
        self.params = [None if p is None else
                       (np.ascontiguousarray(p[0], dtype=np.float32),
                        np.ascontiguousarray(p[1], dtype=np.float32)) for p in params]
        # weights pre-flattened to 2-D once, so inference does no reshaping
        self._mats = [None if p is None else p[0].reshape(-1, p[0].shape[-1]) for p in self.params]
        for p in self.params:
            if p is not None:
                p[0].flags.writeable = False
                p[1].flags.writeable = False

    def layer_forward(self, i: int, h: np.ndarray) -> np.ndarray:
        layer, p, mat = self.spec.layers[i], self.params[i], self._mats[i]
        k = layer.kind
        if k == "conv1d":
            if h.ndim == 2:
                h = h[:, :, None]
            n, length, c = h.shape
            taps = layer.kernel
            pad = taps // 2
            xp = np.zeros((n, length + 2 * pad, c), np.float32)
            xp[:, pad:pad + length] = h
            cols = np.concatenate([xp[:, j:j + length] for j in range(taps)], axis=2)
            h = (cols.reshape(n * length, taps * c) @ mat).reshape(n, length, -1)
            h += p[1]
        elif k in ("dense", "softmax_output"):
            h = h @ mat + p[1]
        elif k == "relu":
            h = np.maximum(h, 0.0)
        elif k == "maxpool1d":
            h = _pool(h)
        elif k == "flatten":
            h = h.reshape(h.shape[0], -1)
        return h

    def logits(self, x) -> np.ndarray:
        h = _check_input(self.spec, x)
        for i in range(len(self.spec.layers)):
            h = self.layer_forward(i, h)
        return h

    def predict_proba(self, x) -> np.ndarray:
        return softmax(self.logits(x).astype(np.float64))

    @property
    def weight_bytes(self) -> int:
        """Raw parameter payload in bytes (format overhead excluded)."""
        return sum(t.nbytes for p in self.params if p is not None for t in p)


@dataclass(frozen=True)
class QLayer:
    weight: np.ndarray          # int8, same shape as the float weight
    weight_qp: QuantParams
    bias: np.ndarray            # float32
    input_qp: QuantParams       # calibrated activation parameters


class QuantizedModel:
    """Int8 inference model with per-tensor affine weights and activations."""

    kind = "int8"

    def __init__(self, spec: ModelSpec, layers: list):
        shapes = [None if q is None else (q.weight, q.bias) for q in layers]
        check_params(spec, shapes)
        self.spec = spec
        self.layers = layers
        self._prep = []
        for q in layers:
            if q is None:
                self._prep.append(None)
                continue
            q.weight.flags.writeable = False
            q.bias.flags.writeable = False
            w = q.weight.reshape(-1, q.weight.shape[-1]).astype(np.int16) - q.weight_qp.zero_point
            self._prep.append((np.ascontiguousarray(w, dtype=np.int16),
                               np.float32(q.input_qp.scale * q.weight_qp.scale),
                               np.float32(1.0 / q.input_qp.scale),
                               np.int16(q.input_qp.zero_point)))

    def logits(self, x) -> np.ndarray:
        h = _check_input(self.spec, x)
        for layer, q, prep in zip(self.spec.layers, self.layers, self._prep):
            k = layer.kind
            if k in ("conv1d", "dense", "softmax_output"):
                w, rescale, inv_scale, zp = prep
                a = _quantize_centered(h, inv_scale, zp)
                if k == "conv1d":
                    if a.ndim == 2:
                        a = a[:, :, None]
                    acc = _conv_i32(a, w, layer.kernel)
                else:
                    acc = _gemm_i32(a, w)
                h = acc.astype(np.float32) * rescale + q.bias
            elif k == "relu":
                h = np.maximum(h, 0.0)
            elif k == "maxpool1d":
                h = _pool(h)
            elif k == "flatten":
                h = h.reshape(h.shape[0], -1)
        return h

    def predict_proba(self, x) -> np.ndarray:
        return softmax(self.logits(x).astype(np.float64))

    def dequantized_params(self) -> list:
        return [None if q is None else (dequantize_tensor(q.weight, q.weight_qp),
                                        q.bias.astype(np.float64)) for q in self.layers]

    @property
    def weight_bytes(self) -> int:
        """int8 payload, f32 biases and per-tensor scale/zero-point metadata."""
        total = 0
        for q in self.layers:
            if q is not None:
                # weight scale f32 + zp i8, activation scale f32 + zp i8
                total += q.weight.nbytes + q.bias.nbytes + 2 * 5
        return total


# ---------------------------------------------------------------------------
# Conversion
# ---------------------------------------------------------------------------

def _spec_params(model):
    if isinstance(model, FloatModel):
        return model.spec, model.params
    spec = getattr(model, "spec", None)
    params = getattr(model, "params", None)
    if spec is None or params is None:
        raise TypeError("model must expose .spec and .params")
    return spec, params


def to_float_model(model) -> FloatModel:
    if isinstance(model, FloatModel):
        return model
    return FloatModel(*_spec_params(model))


def calibrate(spec: ModelSpec, params: list, periods) -> list:
    """Min/max of the input to every weighted layer over the calibration set."""
    x = np.asarray(periods, dtype=np.float32)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("calibration set must be a non-empty (n, length) array")
    fm = FloatModel(spec, params)
    ranges = [None] * len(spec.layers)
    h = _check_input(spec, x)
    for i, layer in enumerate(spec.layers):
        if layer.kind in ("conv1d", "dense", "softmax_output"):
            ranges[i] = (float(h.min()), float(h.max()))
        h = fm.layer_forward(i, h)
    return ranges


def quantize(model, calibration_periods) -> QuantizedModel:
    """Post-training int8 quantization of a float model.

    Parameters
    ----------
    model : FloatModel or any object with ``spec`` and ``params``
    calibration_periods : (n, 60) array
        Periods used to collect activation ranges; must be non-empty.
    """
    spec, params = _spec_params(model)
    ranges = calibrate(spec, params, calibration_periods)
    layers = []
    for p, r in zip(params, ranges):
        if p is None:
            layers.append(None)
            continue
        wqp = tensor_qparams(p[0])
        layers.append(QLayer(quantize_tensor(p[0], wqp), wqp,
                             np.asarray(p[1], dtype=np.float32).copy(), choose_qparams(*r)))
    return QuantizedModel(spec, layers)
