from .bench import FULL_NIGHT_PERIODS, BenchResult, bench_inference
from .engine import (
    FloatModel, QLayer, QuantizedModel, QuantParams, calibrate, choose_qparams,
    dequantize_tensor, quantize, quantize_tensor, tensor_qparams, to_float_model,
)
from .fileformat import (
    MAGIC, VERSION, BadMagicError, CorruptModelError, ModelFileError, VersionError, describe,
    export_float, float_model_bytes, load, loads, quantized_model_bytes, save,
)

__all__ = [
    "FULL_NIGHT_PERIODS", "BenchResult", "bench_inference", "FloatModel", "QLayer",
    "QuantizedModel", "QuantParams", "calibrate", "choose_qparams", "dequantize_tensor",
    "quantize", "quantize_tensor", "tensor_qparams", "to_float_model", "MAGIC", "VERSION",
    "BadMagicError", "CorruptModelError", "ModelFileError", "VersionError", "describe",
    "export_float", "float_model_bytes", "load", "loads", "quantized_model_bytes", "save",
]
