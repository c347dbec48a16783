"""Uniform scalar quantization with unit bins centred on the integers."""

import numpy as np

from .errors import NumericError


def quantize(y) -> np.ndarray:
    """Round to the nearest integer; exact halves go away from zero."""
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise NumericError("cannot quantize non-finite values", term="code")
    return (np.sign(y) * np.floor(np.abs(y) + 0.5)).astype(np.int64)


def dequantize(q) -> np.ndarray:
    return np.asarray(q, dtype=np.float64)
