"""Versioned little-endian model files.

Layout::

    b"ASPM"  u16 version  u16 kind (0 float, 1 int8)
    u32 descriptor length, UTF-8 JSON descriptor (spec plus activation params)
    u32 tensor count, then per tensor:
        u8 dtype (0 f32, 1 i8)  u8 ndim  ndim * u32 dims
        [i8 only: f32 scale, i8 zero_point]
        payload, little-endian, C order
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..nn.core import ModelSpec
from .engine import FloatModel, QLayer, QuantizedModel, QuantParams, to_float_model

MAGIC = b"ASPM"
VERSION = 1
KIND_FLOAT, KIND_INT8 = 0, 1
DTYPE_F32, DTYPE_I8 = 0, 1
_KIND_NAMES = {KIND_FLOAT: "float", KIND_INT8: "int8"}
_DTYPES = {DTYPE_F32: np.dtype("<f4"), DTYPE_I8: np.dtype("i1")}


class ModelFileError(ValueError):
    """Base class for unreadable model files."""


class CorruptModelError(ModelFileError):
    pass


class BadMagicError(ModelFileError):
    pass


class VersionError(ModelFileError):
    pass


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def _tensor_bytes(arr: np.ndarray, qp: QuantParams | None = None) -> bytes:
    if qp is None:
        data = np.ascontiguousarray(arr, dtype="<f4")
        head = struct.pack("<BB", DTYPE_F32, data.ndim)
    else:
        data = np.ascontiguousarray(arr, dtype="i1")
        head = struct.pack("<BB", DTYPE_I8, data.ndim)
    head += struct.pack(f"<{data.ndim}I", *data.shape)
    if qp is not None:
        head += struct.pack("<fb", qp.scale, qp.zero_point)
    return head + data.tobytes()


def _assemble(kind: int, descriptor: dict, tensors: list[bytes]) -> bytes:
    desc = json.dumps(descriptor, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = (MAGIC + struct.pack("<HHI", VERSION, kind, len(desc)) + desc
            + struct.pack("<I", len(tensors)) + b"".join(tensors))
    return body + struct.pack("<I", zlib.crc32(body))


def float_model_bytes(model) -> bytes:
    fm = to_float_model(model)
    tensors = [_tensor_bytes(t) for p in fm.params if p is not None for t in p]
    return _assemble(KIND_FLOAT, {"spec": fm.spec.to_dict()}, tensors)


def quantized_model_bytes(qm: QuantizedModel) -> bytes:
    tensors, acts = [], []
    for i, q in enumerate(qm.layers):
        if q is None:
            continue
        tensors.append(_tensor_bytes(q.weight, q.weight_qp))
        tensors.append(_tensor_bytes(q.bias))
        acts.append({"layer": i, "scale": q.input_qp.scale, "zero_point": q.input_qp.zero_point})
    return _assemble(KIND_INT8, {"spec": qm.spec.to_dict(), "activations": acts}, tensors)


def export_float(params_or_model, spec: ModelSpec | None = None, path=None) -> Path:
    """Write a float32 model file.

    Accepts either ``(params, spec, path)`` or ``(model, None, path)``
    where ``model`` exposes ``spec`` and ``params``.
    """
    if spec is not None:
        model = FloatModel(spec, params_or_model)
    else:
        model = to_float_model(params_or_model)
    if path is None:
        raise ValueError("an output path is required")
    path = Path(path)
    path.write_bytes(float_model_bytes(model))
    return path


def save(model, path) -> Path:
    """Write a float or int8 model to ``path``."""
    path = Path(path)
    if isinstance(model, QuantizedModel):
        path.write_bytes(quantized_model_bytes(model))
    else:
        path.write_bytes(float_model_bytes(model))
    return path


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------

class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise CorruptModelError(f"unexpected end of file at byte {self.pos} (need {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _parse(buf: bytes) -> tuple[int, dict, list]:
    if len(buf) < len(MAGIC):
        raise CorruptModelError("file too short to hold a header")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    r = _Reader(buf)
    r.take(4)
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise VersionError(f"unsupported format version {version}; this reader handles {VERSION}")
    if len(buf) < 4 + 2 + 2 + 4 + 4 + 4:
        raise CorruptModelError("file too short to hold a header")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise CorruptModelError("checksum mismatch")
    r.buf = buf[:-4]
    (kind, desc_len) = r.unpack("<HI")
    if kind not in _KIND_NAMES:
        raise CorruptModelError(f"unknown model kind {kind}")
    try:
        descriptor = json.loads(r.take(desc_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptModelError(f"unreadable descriptor: {exc}") from None
    (count,) = r.unpack("<I")
    tensors = []
    for _ in range(count):
        dtype, ndim = r.unpack("<BB")
        if dtype not in _DTYPES:
            raise CorruptModelError(f"unknown tensor dtype tag {dtype}")
        shape = r.unpack(f"<{ndim}I")
        qp = None
        if dtype == DTYPE_I8:
            scale, zp = r.unpack("<fb")
            qp = QuantParams(float(scale), int(zp))
        dt = _DTYPES[dtype]
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(n * dt.itemsize), dtype=dt).reshape(shape)
        tensors.append((arr.astype(dt.newbyteorder("=")), qp))
    if r.pos != len(r.buf):
        raise CorruptModelError(f"{len(r.buf) - r.pos} trailing bytes after the last tensor")
    return kind, descriptor, tensors


def _build(kind: int, descriptor: dict, tensors: list):
    try:
        spec = ModelSpec.from_dict(descriptor["spec"])
        pairs = [(tensors[i], tensors[i + 1]) for i in range(0, len(tensors), 2)]
        weighted = [i for i, layer in enumerate(spec.layers) if layer.kind in
                    ("conv1d", "dense", "softmax_output")]
        if len(pairs) != len(weighted) or len(tensors) % 2:
            raise CorruptModelError("tensor count does not match the layer list")
        if kind == KIND_FLOAT:
            params = [None] * len(spec.layers)
            for i, ((w, _), (b, _)) in zip(weighted, pairs):
                params[i] = (w, b)
            return FloatModel(spec, params)
        acts = {a["layer"]: QuantParams(float(a["scale"]), int(a["zero_point"]))
                for a in descriptor["activations"]}
        layers = [None] * len(spec.layers)
        for i, ((w, wqp), (b, _)) in zip(weighted, pairs):
            if wqp is None:
                raise CorruptModelError(f"layer {i}: weights must be int8 in a quantized file")
            layers[i] = QLayer(w, wqp, b, acts[i])
        return QuantizedModel(spec, layers)
    except ModelFileError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModelError(f"inconsistent model description: {exc}") from None


def loads(buf: bytes):
    kind, descriptor, tensors = _parse(bytes(buf))
    return _build(kind, descriptor, tensors)


def load(path):
    """Read a model file and return a :class:`FloatModel` or :class:`QuantizedModel`."""
    return loads(Path(path).read_bytes())


def describe(path) -> str:
    """Human-readable header and tensor inventory."""
    buf = Path(path).read_bytes()
    kind, descriptor, tensors = _parse(buf)
    spec = descriptor["spec"]
    lines = [f"magic: {MAGIC.decode()}", f"version: {VERSION}", f"kind: {_KIND_NAMES[kind]}",
             f"name: {spec.get('name', '')}", f"input_length: {spec['input_length']}",
             f"file_bytes: {len(buf)}", "layers:"]
    for i, layer in enumerate(spec["layers"]):
        extra = "".join(f" {k}={layer[k]}" for k in ("size", "kernel", "rate") if layer.get(k))
        lines.append(f"  [{i}] {layer['kind']}{extra}")
    lines.append(f"tensors: {len(tensors)}")
    total = 0
    for j, (arr, qp) in enumerate(tensors):
        total += arr.size
        dt = "i8" if qp is not None else "f32"
        q = "" if qp is None else f" scale={qp.scale!r} zero_point={qp.zero_point}"
        lines.append(f"  #{j} {dt} shape={tuple(arr.shape)} bytes={arr.nbytes}{q}")
    lines.append(f"parameters: {total}")
    return "\n".join(lines) + "\n"
