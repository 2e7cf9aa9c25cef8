"""Low-rank adapters over frozen (quantized) weight matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quant import QuantizedMatrix, dequantize


@dataclass
class LoraAdapter:
    """Trainable delta ``A @ B.T`` for a base matrix of shape (d, k).

    ``A`` is (d, r), ``B`` is (k, r); the delta is applied with scale
    ``alpha / r``.
    """

    target: str
    A: np.ndarray
    B: np.ndarray
    alpha: float

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape[0], self.B.shape[0]

    def delta(self) -> np.ndarray:
        return self.scale * (self.A @ self.B.T)

    def copy(self) -> "LoraAdapter":
        return LoraAdapter(self.target, self.A.copy(), self.B.copy(), self.alpha)


def orthonormal_columns(d: int, r: int, rng: np.random.Generator) -> np.ndarray:
    """Gram-Schmidt over Gaussian draws (modified, with one reorthogonalization pass)."""
    G = rng.standard_normal((d, r))
    Qm = np.zeros((d, r))
    for j in range(r):
        v = G[:, j].copy()
        for _ in range(2):
            for i in range(j):
                v -= (Qm[:, i] @ v) * Qm[:, i]
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            raise np.linalg.LinAlgError("degenerate Gaussian draw")
        Qm[:, j] = v / norm
    return Qm


def init_lora(d: int, k: int, r: int, rng: np.random.Generator,
              target: str = "", alpha: float | None = None) -> LoraAdapter:
    """Orthonormal A, zero B: the adapter starts as an exact no-op."""
    if r < 1 or r > min(d, k):
        raise ValueError(f"rank {r} must lie in [1, min({d}, {k})]")
    A = orthonormal_columns(d, r, rng)
    B = np.zeros((k, r))
    return LoraAdapter(target, A, B, float(r if alpha is None else alpha))


def apply_adapted(Q: QuantizedMatrix | np.ndarray, adapter: LoraAdapter | None, x: np.ndarray) -> np.ndarray:
    """``W x + scale * A (B^T x)`` without forming ``A B^T``.

    ``x`` may be a vector of length k or a (..., k) batch of row vectors.
    """
    W = dequantize(Q) if isinstance(Q, QuantizedMatrix) else np.asarray(Q)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"input dim {x.shape[-1]} != matrix cols {W.shape[1]}")
    y = x @ W.T
    if adapter is not None:
        if adapter.shape != W.shape:
            raise ValueError(f"adapter shape {adapter.shape} != base shape {W.shape}")
        y = y + adapter.scale * ((x @ adapter.B) @ adapter.A.T)
    return y


def fit_lora(target_delta: np.ndarray, r: int, iters: int = 50, seed: int = 0,
             tol: float = 1e-14) -> LoraAdapter:
    """Alternating least squares for ``A B^T ~= target_delta`` (scale 1).

    Each half-step solves the normal equations exactly, so for ``r`` equal
    to the full rank the first sweep already reconstructs the target.
    """
    D = np.asarray(target_delta, dtype=np.float64)
    d, k = D.shape
    rng = np.random.default_rng(seed)
    A = orthonormal_columns(d, r, rng)
    B = np.zeros((k, r))
    prev = np.inf
    for _ in range(iters):
        B = np.linalg.solve(A.T @ A, A.T @ D).T
        A = np.linalg.solve(B.T @ B, B.T @ D.T).T
        err = np.linalg.norm(D - A @ B.T)
        if err < tol or prev - err < tol:
            break
        prev = err
    return LoraAdapter("fit", A, B, float(r))
