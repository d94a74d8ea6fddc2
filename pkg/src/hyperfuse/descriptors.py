"""On-disk descriptor encoding shared by feature files and cloud sidecars.

Descriptors are unit-norm 128-vectors with components in [0, 1); on disk each
component is stored as ``min(255, round(512 * d))``. In memory they are
floats ``u8 / 512``, so a decode/encode cycle is lossless.
"""
import numpy as np

DESCRIPTOR_DIM = 128
QUANT_SCALE = 512.0


def quantize(desc: np.ndarray) -> np.ndarray:
    d = np.asarray(desc, dtype=np.float64)
    return np.clip(np.rint(d * QUANT_SCALE), 0, 255).astype(np.uint8)


def dequantize(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) / QUANT_SCALE
