"""Blockwise symmetric absmax 4-bit quantization.

Blocks run over the row-major flattening of the matrix. Each block keeps
one float scale ``absmax / 7`` and signed codes in [-7, 7], stored two per
byte. Rounding is to nearest, so every element is reproduced within half a
quantization step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _kernels

QMAX = 7


@dataclass(frozen=True)
class QuantizedMatrix:
    shape: tuple[int, int]
    block_size: int
    packed: np.ndarray   # uint8, two codes per byte
    scales: np.ndarray   # float64, one per block

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def codes(self) -> np.ndarray:
        return _kernels.unpack_nibbles(self.packed, self.size)

    @property
    def nbytes(self) -> int:
        return self.packed.nbytes + self.scales.nbytes


def quantize_4bit(W: np.ndarray, block_size: int = 64) -> QuantizedMatrix:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {W.shape}")
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    if not np.all(np.isfinite(W)):
        raise ValueError("cannot quantize non-finite values")
    codes, scales = _kernels.quantize_blocks(W.ravel(), block_size)
    return QuantizedMatrix(W.shape, block_size, _kernels.pack_nibbles(codes), scales)


def dequantize(Q: QuantizedMatrix) -> np.ndarray:
    flat = _kernels.dequantize_blocks(Q.codes, Q.scales, Q.block_size)
    return flat.reshape(Q.shape)


def block_absmax(W: np.ndarray, block_size: int) -> np.ndarray:
    """Per-element absmax of the block each element belongs to."""
    flat = np.abs(np.asarray(W, dtype=np.float64).ravel())
    n_blocks = -(-flat.size // block_size)
    padded = np.zeros(n_blocks * block_size)
    padded[: flat.size] = flat
    per_block = padded.reshape(n_blocks, block_size).max(axis=1)
    return np.repeat(per_block, block_size)[: flat.size].reshape(np.shape(W))
