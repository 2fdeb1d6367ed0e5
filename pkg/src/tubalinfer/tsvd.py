"""t-SVD, tubal rank, rank-r retraction and spectral diagnostics.

All routines work on the half spectrum returned by ``numpy.fft.rfft``: for a
real tensor the slices ``t`` and ``d3 - t`` are complex conjugates, so only
``d3 // 2 + 1`` matrix SVDs are needed.  The self-conjugate slices (``t = 0``
and ``t = d3 / 2`` for even ``d3``) are real matrices and are decomposed in
real arithmetic so that the inverse transform stays real.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import as_tensor3, conj_transpose, fro_norm, tprod

__all__ = [
    "TsvdFactors",
    "SpectrumDiagnostics",
    "tsvd",
    "tubal_rank",
    "truncate_rank",
    "project_rank",
    "slice_singular_values",
    "row_norms",
    "projector_row_distance",
    "incoherence",
    "alignment",
    "diagnostics",
]

DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class TsvdFactors:
    """Skinny t-SVD ``T ~ U * S * V^dagger`` of tubal rank ``r``.

    ``U`` is ``d1 x r x d3``, ``S`` is ``r x r x d3`` f-diagonal, ``V`` is
    ``d2 x r x d3``, all real.  ``svals[i, t]`` is the i-th singular value of
    frequency slice ``t`` (nonincreasing in ``i``).
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    svals: np.ndarray
    r: int
    tol: float = DEFAULT_TOL

    @property
    def dims(self):
        return (self.U.shape[0], self.V.shape[0], self.U.shape[2])

    def reconstruct(self) -> np.ndarray:
        return tprod(self.U, tprod(self.S, conj_transpose(self.V)))

    @property
    def lambda_min(self) -> float:
        s = self.svals[self.svals > self.tol * max(self.svals.max(initial=0.0), 1e-300)]
        return float(s.min()) if s.size else 0.0

    @property
    def lambda_max(self) -> float:
        return float(self.svals.max(initial=0.0))


@dataclass(frozen=True)
class SpectrumDiagnostics:
    lambda_min: float
    lambda_max: float
    kappa0: float
    mu_max: float
    alpha_M: float | None = None
    row_dist_U: float | None = None
    row_dist_V: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _self_conjugate(d3: int) -> list[int]:
    idx = [0]
    if d3 % 2 == 0 and d3 > 1:
        idx.append(d3 // 2)
    return idx


def _half_svd(T: np.ndarray):
    """SVD of every slice of ``rfft(T)``; returns arrays stacked on axis 0."""
    d3 = T.shape[2]
    Th = np.moveaxis(np.fft.rfft(T, axis=2), 2, 0)
    U, s, Vh = np.linalg.svd(Th, full_matrices=False)
    for t in _self_conjugate(d3):
        ur, sr, vr = np.linalg.svd(Th[t].real, full_matrices=False)
        U[t], s[t], Vh[t] = ur, sr, vr
    return U, s, Vh


def _mirror_weights(d3: int) -> np.ndarray:
    """Multiplicity of each half-spectrum slice inside the full spectrum."""
    w = np.full(d3 // 2 + 1, 2.0)
    for t in _self_conjugate(d3):
        w[t] = 1.0
    return w


def _full_svals(s_half: np.ndarray, d3: int) -> np.ndarray:
    """Expand half-spectrum singular values (h, m) to (m, d3)."""
    t = np.arange(d3)
    half_idx = np.minimum(t, d3 - t)
    return s_half[half_idx].T


def slice_singular_values(T: np.ndarray) -> np.ndarray:
    """Singular values of every frequency slice as an ``(min(d1,d2), d3)`` array."""
    T = as_tensor3(T)
    Th = np.moveaxis(np.fft.rfft(T, axis=2), 2, 0)
    s = np.linalg.svd(Th, compute_uv=False)
    return _full_svals(s, T.shape[2])


def tubal_rank(T: np.ndarray, tol: float = DEFAULT_TOL) -> int:
    """Maximum rank over frequency slices, thresholded at ``tol * sigma_max``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    s = slice_singular_values(T)
    smax = s.max(initial=0.0)
    if smax == 0.0:
        return 0
    return int((s > tol * smax).sum(axis=0).max())


def tsvd(T: np.ndarray, tol: float = DEFAULT_TOL, r: int | None = None) -> TsvdFactors:
    """Skinny t-SVD of ``T``.

    The rank defaults to the tubal rank at relative tolerance ``tol``; pass
    ``r`` to keep a fixed number of components instead (this is the rank-r
    truncation used by the retraction step).
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    T = as_tensor3(T)
    d1, d2, d3 = T.shape
    U, s, Vh = _half_svd(T)
    if r is None:
        smax = s.max(initial=0.0)
        r = 0 if smax == 0.0 else int((s > tol * smax).sum(axis=1).max())
    if not 0 <= r <= min(d1, d2):
        raise ValueError(f"rank {r} outside [0, {min(d1, d2)}]")
    Uh = np.moveaxis(U[:, :, :r], 0, 2)
    Vhh = np.moveaxis(Vh[:, :r, :].conj().transpose(0, 2, 1), 0, 2)
    Uo = np.fft.irfft(Uh, n=d3, axis=2)
    Vo = np.fft.irfft(Vhh, n=d3, axis=2)
    svals = _full_svals(s[:, :r], d3)
    S = np.zeros((r, r, d3))
    for i in range(r):
        S[i, i, :] = np.fft.ifft(svals[i]).real
    return TsvdFactors(U=Uo, S=S, V=Vo, svals=svals, r=r, tol=tol)


def project_rank(T: np.ndarray, r: int) -> np.ndarray:
    """Keep the top ``r`` singular triplets of every frequency slice."""
    T = np.asarray(T, dtype=np.float64)
    d1, d2, d3 = T.shape
    if not 1 <= r <= min(d1, d2):
        raise ValueError(f"rank {r} outside [1, {min(d1, d2)}]")
    U, s, Vh = _half_svd(T)
    Th = np.einsum("tir,tr,trj->ijt", U[:, :, :r], s[:, :r], Vh[:, :r, :])
    return np.fft.irfft(Th, n=d3, axis=2)


def truncate_rank(T: np.ndarray, r: int) -> tuple[np.ndarray, TsvdFactors]:
    """Best tubal-rank-``r`` approximation and its factors."""
    T = as_tensor3(T)
    if not 1 <= r <= min(T.shape[:2]):
        raise ValueError(f"rank {r} outside [1, {min(T.shape[:2])}]")
    f = tsvd(T, r=r)
    return f.reconstruct(), f


def row_norms(F: np.ndarray, kind: str = "fro") -> np.ndarray:
    """Norm of every horizontal slice ``e_j^dagger F``.

    ``kind="fro"`` is the Frobenius norm in the original domain;
    ``kind="spectral"`` is the tensor spectral norm, i.e. the largest row
    norm over frequency slices.
    """
    F = np.asarray(F, dtype=np.float64)
    if kind == "fro":
        return np.sqrt((F ** 2).sum(axis=(1, 2)))
    if kind == "spectral":
        Fh = np.fft.rfft(F, axis=2)
        return np.sqrt((np.abs(Fh) ** 2).sum(axis=1)).max(axis=1)
    raise ValueError(f"unknown norm kind {kind!r}")


def projector_row_distance(F_est: np.ndarray, F_ref: np.ndarray) -> float:
    """``max_j || e_j^dagger (F_est F_est^dagger - F_ref F_ref^dagger) ||``."""
    A = np.moveaxis(np.fft.rfft(np.asarray(F_est, dtype=np.float64), axis=2), 2, 0)
    B = np.moveaxis(np.fft.rfft(np.asarray(F_ref, dtype=np.float64), axis=2), 2, 0)
    P = A @ A.conj().transpose(0, 2, 1) - B @ B.conj().transpose(0, 2, 1)
    rows = np.sqrt((np.abs(P) ** 2).sum(axis=2))
    return float(rows.max())


def incoherence(U: np.ndarray, V: np.ndarray) -> float:
    """Smallest ``mu`` with ``max_j ||e_j^dagger U|| <= mu sqrt(r/d1)`` and likewise for V."""
    d1, r, _ = U.shape
    d2 = V.shape[0]
    mu_u = row_norms(U, "spectral").max() * np.sqrt(d1 / r)
    mu_v = row_norms(V, "spectral").max() * np.sqrt(d2 / r)
    return float(max(mu_u, mu_v))


def alignment(U: np.ndarray, V: np.ndarray, M: np.ndarray) -> float:
    """Largest ``alpha`` with ``||U^dagger M||_F >= alpha ||M||_F sqrt(r/d1)`` and
    ``||M V||_F >= alpha ||M||_F sqrt(r/d2)``."""
    M = np.asarray(M, dtype=np.float64)
    mf = fro_norm(M)
    if mf == 0.0:
        raise ValueError("alignment is undefined for an all-zero mask")
    d1, r, _ = U.shape
    d2 = V.shape[0]
    a_u = fro_norm(tprod(conj_transpose(U), M)) / (mf * np.sqrt(r / d1))
    a_v = fro_norm(tprod(M, V)) / (mf * np.sqrt(r / d2))
    return float(min(a_u, a_v))


def diagnostics(
    T: np.ndarray,
    r: int,
    M=None,
    reference: TsvdFactors | None = None,
    tol: float = DEFAULT_TOL,
) -> SpectrumDiagnostics:
    """Spectral quantities of ``T`` at rank ``r``.

    ``M`` may be a dense array or anything with a ``to_dense(dims)`` method.
    When ``reference`` factors are supplied the projector row distances of
    the rank-r factors of ``T`` against them are reported.
    """
    T = as_tensor3(T)
    f = tsvd(T, tol=tol, r=r)
    lmin, lmax = f.lambda_min, f.lambda_max
    alpha = None
    if M is not None:
        dense = M.to_dense(T.shape) if hasattr(M, "to_dense") else np.asarray(M)
        alpha = alignment(f.U, f.V, dense)
    rdu = rdv = None
    if reference is not None:
        rdu = projector_row_distance(f.U, reference.U)
        rdv = projector_row_distance(f.V, reference.V)
    return SpectrumDiagnostics(
        lambda_min=lmin,
        lambda_max=lmax,
        kappa0=lmax / lmin if lmin > 0 else float("inf"),
        mu_max=incoherence(f.U, f.V),
        alpha_M=alpha,
        row_dist_U=rdu,
        row_dist_V=rdv,
    )
