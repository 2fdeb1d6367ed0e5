"""Dense third-order tensor algebra under the t-product.

Tensors are plain ``numpy`` arrays of shape ``(d1, d2, d3)``; ``A[:, :, t]``
is the t-th frontal slice and ``A[j, k, :]`` is a tube.  Frequency-domain
tensors are complex arrays of the same shape holding the mode-3 DFT of
every tube (slice ``t`` of the transform is ``Ahat[:, :, t]``).

Indices are 0-based throughout the Python API.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = [
    "as_tensor3",
    "unfold",
    "fold",
    "bcirc",
    "bdiag",
    "dft3",
    "idft3",
    "is_conjugate_symmetric",
    "tprod",
    "tprod_bcirc",
    "conj_transpose",
    "identity_tensor",
    "column_basis",
    "tube_basis",
    "inner",
    "fro_norm",
    "spectral_norm",
    "norms",
    "ConjugateSymmetryError",
]

# bcirc materialises a (d1*d3) x (d2*d3) matrix; only meant for small checks
BCIRC_MAX_SIDE = 4096
# relative imaginary residue tolerated when returning to the real domain
REAL_TOL = 1e-10


class ConjugateSymmetryError(ValueError):
    """Inverse transform of a spectrum that does not come from a real tensor."""


def as_tensor3(a, name: str = "tensor") -> np.ndarray:
    """Validate and convert to a finite float64 array with three axes."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"{name} must have 3 axes, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name} has an empty dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def unfold(A: np.ndarray) -> np.ndarray:
    """Stack the frontal slices vertically into a (d1*d3, d2) matrix."""
    A = np.asarray(A)
    d1, d2, d3 = A.shape
    return A.transpose(2, 0, 1).reshape(d3 * d1, d2)


def fold(M: np.ndarray, dims) -> np.ndarray:
    """Inverse of :func:`unfold` for a tensor of shape ``dims``."""
    d1, d2, d3 = dims
    M = np.asarray(M)
    if M.shape != (d1 * d3, d2):
        raise ValueError(f"cannot fold matrix of shape {M.shape} into {tuple(dims)}")
    return M.reshape(d3, d1, d2).transpose(1, 2, 0)


def bcirc(A: np.ndarray) -> np.ndarray:
    """Block-circulant matrix whose (i, j) block is slice ``(i - j) mod d3``."""
    A = np.asarray(A)
    d1, d2, d3 = A.shape
    if d1 * d3 > BCIRC_MAX_SIDE or d2 * d3 > BCIRC_MAX_SIDE:
        raise ValueError(
            f"bcirc of shape {A.shape} exceeds the {BCIRC_MAX_SIDE} size guard"
        )
    out = np.zeros((d1 * d3, d2 * d3), dtype=A.dtype)
    for i in range(d3):
        for j in range(d3):
            out[i * d1:(i + 1) * d1, j * d2:(j + 1) * d2] = A[:, :, (i - j) % d3]
    return out


def bdiag(A: np.ndarray) -> np.ndarray:
    """Block-diagonal matrix with the frontal slices of ``A`` on the diagonal."""
    A = np.asarray(A)
    return scipy.linalg.block_diag(*[A[:, :, t] for t in range(A.shape[2])])


def dft3(A: np.ndarray) -> np.ndarray:
    """Unnormalised DFT of every tube, ``omega = exp(-2*pi*i/d3)``."""
    return np.fft.fft(np.asarray(A, dtype=np.float64), axis=2)


def idft3(Ahat: np.ndarray, real: bool = True) -> np.ndarray:
    """Inverse mode-3 DFT.

    With ``real=True`` the imaginary part is dropped if it is at most
    ``1e-10 * ||A||_F``; anything larger means the spectrum was not
    conjugate symmetric and raises :class:`ConjugateSymmetryError`.
    """
    A = np.fft.ifft(np.asarray(Ahat, dtype=np.complex128), axis=2)
    if not real:
        return A
    scale = np.linalg.norm(A.real)
    resid = np.linalg.norm(A.imag)
    if resid > REAL_TOL * max(scale, 1.0):
        raise ConjugateSymmetryError(
            f"imaginary residue {resid:.3e} exceeds tolerance (||A||_F = {scale:.3e})"
        )
    return A.real.copy()


def is_conjugate_symmetric(Ahat: np.ndarray, tol: float = 1e-10) -> bool:
    """True if slice t and slice ``(-t) mod d3`` are complex conjugates."""
    Ahat = np.asarray(Ahat)
    d3 = Ahat.shape[2]
    mirror = Ahat[:, :, (-np.arange(d3)) % d3]
    scale = max(np.linalg.norm(Ahat), 1.0)
    return bool(np.linalg.norm(Ahat - mirror.conj()) <= tol * scale)


def tprod(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """t-product ``A * B`` computed slice-wise in the frequency domain."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 3 or B.ndim != 3:
        raise ValueError("tprod expects two third-order tensors")
    if A.shape[1] != B.shape[0] or A.shape[2] != B.shape[2]:
        raise ValueError(f"tprod dimension mismatch: {A.shape} * {B.shape}")
    d3 = A.shape[2]
    Ah = np.fft.rfft(A, axis=2)
    Bh = np.fft.rfft(B, axis=2)
    Ch = np.einsum("ijt,jkt->ikt", Ah, Bh)
    return np.fft.irfft(Ch, n=d3, axis=2)


def tprod_bcirc(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Reference t-product ``fold(bcirc(A) @ unfold(B))``; small tensors only."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[0] or A.shape[2] != B.shape[2]:
        raise ValueError(f"tprod dimension mismatch: {A.shape} * {B.shape}")
    return fold(bcirc(A) @ unfold(B), (A.shape[0], B.shape[1], A.shape[2]))


def conj_transpose(A: np.ndarray) -> np.ndarray:
    """Transpose every frontal slice and reverse the order of slices 2..d3."""
    A = np.asarray(A)
    d3 = A.shape[2]
    return A.transpose(1, 0, 2).conj()[:, :, (-np.arange(d3)) % d3]


def identity_tensor(d: int, d3: int) -> np.ndarray:
    I = np.zeros((d, d, d3))
    I[:, :, 0] = np.eye(d)
    return I


def column_basis(j: int, d: int, d3: int) -> np.ndarray:
    """``d x 1 x d3`` tensor with a single one at ``(j, 0, 0)``."""
    e = np.zeros((d, 1, d3))
    e[j, 0, 0] = 1.0
    return e


def tube_basis(k: int, d3: int) -> np.ndarray:
    """``1 x 1 x d3`` tube with a single one at position ``k``."""
    e = np.zeros((1, 1, d3))
    e[0, 0, k] = 1.0
    return e


def inner(A: np.ndarray, B: np.ndarray) -> float:
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape != B.shape:
        raise ValueError(f"inner product of mismatched shapes {A.shape}, {B.shape}")
    return float(np.vdot(A, B).real)


def fro_norm(A: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(A).ravel()))


def spectral_norm(A: np.ndarray) -> float:
    """Largest singular value over all frequency slices."""
    Ah = dft3(A) if np.isrealobj(A) else np.fft.fft(A, axis=2)
    s = np.linalg.svd(np.moveaxis(Ah, 2, 0), compute_uv=False)
    return float(s.max())


def norms(A: np.ndarray) -> dict:
    A = np.asarray(A, dtype=np.float64)
    return {
        "fro": fro_norm(A),
        "spectral": spectral_norm(A),
        "max": float(np.abs(A).max()),
        "l1": float(np.abs(A).sum()),
    }
