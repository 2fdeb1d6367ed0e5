"""Sample-splitting debiasing, retraction and inference for linear forms.

Pipeline for observations ``{(X_i, y_i)}``:

1. split the sample into halves ``D1`` (first ``ceil(n/2)`` after a seeded
   shuffle) and ``D2``;
2. fit an initial estimate on each half;
3. debias each initial estimate with the *other* half,
   ``T_unbs = T_init + (d*/|D|) sum_{i in D} (y_i - <T_init, X_i>) X_i``;
4. retract each debiased tensor to tubal rank ``r``;
5. average the two retracted tensors.

The variance of ``<T_hat, M>`` is estimated by ``sigma_hat^2 s_hat^2 d*/n``
with cross-fitted residuals for ``sigma_hat`` and the estimated singular
factors for ``s_hat``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtri

from .init_solver import SolverConfig, complete
from .sampling import ObservationSet
from .tensor_core import conj_transpose, fro_norm, tprod
from .tsvd import TsvdFactors, row_norms, truncate_rank

__all__ = [
    "LinearFunctionalMask",
    "DebiasState",
    "InferenceReport",
    "split",
    "debias",
    "run_algorithm1",
    "linear_form",
    "estimate_sigma",
    "projected_mask_norm_sq",
    "estimate_sM",
    "oracle_sM",
    "entrywise_sM",
    "normal_quantile",
    "confidence_interval",
    "observation_interval",
    "standard_error",
    "standardized_stat",
    "error_split",
    "infer",
]


@dataclass(frozen=True, eq=False)
class LinearFunctionalMask:
    """Sparse test tensor ``M`` given as 0-based ``(j, k, l)`` indices and weights.

    Repeated indices are merged by summing their weights.
    """

    idx: np.ndarray
    weights: np.ndarray
    name: str = ""

    def __post_init__(self):
        idx = np.asarray(self.idx, dtype=np.int64).reshape(-1, 3)
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if idx.shape[0] != w.shape[0]:
            raise ValueError("mask indices and weights differ in length")
        if idx.shape[0] == 0:
            raise ValueError("mask must have at least one entry")
        if idx.min() < 0:
            raise ValueError("negative mask index")
        uniq, inv = np.unique(idx, axis=0, return_inverse=True)
        merged = np.zeros(len(uniq))
        np.add.at(merged, inv.ravel(), w)
        object.__setattr__(self, "idx", uniq)
        object.__setattr__(self, "weights", merged)

    @classmethod
    def entries(cls, items: Sequence, name: str = "") -> "LinearFunctionalMask":
        """Build from ``(j, k, l)`` or ``(j, k, l, w)`` tuples (weight defaults to 1)."""
        idx, w = [], []
        for it in items:
            idx.append(it[:3])
            w.append(it[3] if len(it) > 3 else 1.0)
        return cls(np.array(idx), np.array(w), name)

    @classmethod
    def from_dense(cls, M: np.ndarray, name: str = "") -> "LinearFunctionalMask":
        M = np.asarray(M, dtype=np.float64)
        nz = np.argwhere(M != 0)
        return cls(nz, M[tuple(nz.T)], name)

    @property
    def fro(self) -> float:
        return float(np.linalg.norm(self.weights))

    @property
    def l1(self) -> float:
        return float(np.abs(self.weights).sum())

    def check(self, dims) -> None:
        if np.any(self.idx.max(axis=0) >= np.asarray(dims)):
            raise ValueError(f"mask index out of range for dims {tuple(dims)}")

    def to_dense(self, dims) -> np.ndarray:
        self.check(dims)
        M = np.zeros(tuple(dims))
        M[tuple(self.idx.T)] = self.weights
        return M

    def scaled(self, c: float) -> "LinearFunctionalMask":
        return LinearFunctionalMask(self.idx, c * self.weights, self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "entries": [[int(j), int(k), int(l), float(w)]
                        for (j, k, l), w in zip(self.idx, self.weights)],
        }


@dataclass(frozen=True, eq=False)
class DebiasState:
    """Every intermediate of the two cross-fitted branches."""

    D1: ObservationSet
    D2: ObservationSet
    T_init: tuple[np.ndarray, np.ndarray]
    T_unbs: tuple[np.ndarray, np.ndarray]
    factors: tuple[TsvdFactors, TsvdFactors]
    T_proj: tuple[np.ndarray, np.ndarray]
    T_hat: np.ndarray
    r: int

    @property
    def n0(self) -> int:
        return self.D1.n

    @property
    def n(self) -> int:
        return self.D1.n + self.D2.n

    @property
    def dims(self):
        return self.D1.dims

    @property
    def dstar(self) -> int:
        return self.D1.dstar


@dataclass
class InferenceReport:
    estimate: float
    sigma_hat: float
    s_hat: float
    std_error: float
    ci_low: float
    ci_high: float
    ci_obs_low: float
    ci_obs_high: float
    alpha: float
    z: float
    n: int
    dstar: int
    mask: str = ""
    truth: float | None = None
    s_oracle: float | None = None
    standardized: float | None = None
    err_rn: float | None = None
    err_init: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def split(obs: ObservationSet, rng: np.random.Generator | int | None = None):
    """Shuffle and split into halves of sizes ``ceil(n/2)`` and ``floor(n/2)``."""
    if obs.n < 2:
        raise ValueError("need at least two observations to split")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    perm = rng.permutation(obs.n)
    n0 = (obs.n + 1) // 2
    return obs.subset(perm[:n0]), obs.subset(perm[n0:])


def debias(T_init: np.ndarray, heldout: ObservationSet) -> np.ndarray:
    """One-step correction of ``T_init`` using the held-out observations."""
    if heldout.n == 0:
        raise ValueError("held-out sample is empty")
    T_init = np.asarray(T_init, dtype=np.float64)
    res = heldout.y - heldout.gather(T_init)
    return T_init + (heldout.dstar / heldout.n) * heldout.scatter_sum(res)


def run_algorithm1(
    obs: ObservationSet,
    r: int,
    solver: SolverConfig | None = None,
    seed: int | None = None,
    initializer: Callable[[ObservationSet], np.ndarray] | None = None,
) -> DebiasState:
    """Split, initialise, cross-debias, retract and average.

    ``initializer`` maps an :class:`ObservationSet` to an initial tensor;
    by default it is :func:`tubalinfer.init_solver.complete` with ``solver``.
    """
    if obs.n < 2:
        raise ValueError("need at least two observations")
    if initializer is None:
        cfg = solver if solver is not None else SolverConfig(r=r)
        initializer = lambda half: complete(half, cfg)  # noqa: E731
    if seed is None:
        seed = obs.seed if obs.seed is not None else 0
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2]))
    D1, D2 = split(obs, rng)
    init1 = np.asarray(initializer(D1), dtype=np.float64)
    init2 = np.asarray(initializer(D2), dtype=np.float64)
    unbs1 = debias(init1, D2)
    unbs2 = debias(init2, D1)
    proj1, f1 = truncate_rank(unbs1, r)
    proj2, f2 = truncate_rank(unbs2, r)
    return DebiasState(
        D1=D1, D2=D2,
        T_init=(init1, init2),
        T_unbs=(unbs1, unbs2),
        factors=(f1, f2),
        T_proj=(proj1, proj2),
        T_hat=(proj1 + proj2) / 2.0,
        r=r,
    )


def linear_form(T: np.ndarray, M: LinearFunctionalMask) -> float:
    T = np.asarray(T)
    M.check(T.shape)
    return float(T[tuple(M.idx.T)] @ M.weights)


def estimate_sigma(state: DebiasState) -> float:
    """Cross-fitted residual estimate of the noise level (both sums over n)."""
    r1 = state.D2.y - state.D2.gather(state.T_init[0])
    r2 = state.D1.y - state.D1.gather(state.T_init[1])
    return math.sqrt((r1 @ r1 + r2 @ r2) / state.n)


def projected_mask_norm_sq(U: np.ndarray, V: np.ndarray, M: LinearFunctionalMask) -> float:
    """``||U^dagger M||_F^2 + ||M V||_F^2`` from the sparse mask.

    Only the rows (for ``M V``) and columns (for ``U^dagger M``) touched by
    the mask are formed, slice by slice in the frequency domain.
    """
    d1, r, d3 = U.shape
    M.check((d1, V.shape[0], d3))
    j, k, l = M.idx.T
    phase = np.exp(-2j * np.pi * np.outer(l, np.arange(d3)) / d3)
    coef = M.weights[:, None] * phase
    Uh = np.fft.fft(U, axis=2)
    Vh = np.fft.fft(V, axis=2)

    rows, inv = np.unique(j, return_inverse=True)
    MV = np.zeros((len(rows), r, d3), dtype=complex)
    np.add.at(MV, inv.ravel(), coef[:, None, :] * Vh[k])
    cols, inv = np.unique(k, return_inverse=True)
    UM = np.zeros((len(cols), r, d3), dtype=complex)
    np.add.at(UM, inv.ravel(), coef[:, None, :] * Uh[j].conj())
    return float(((np.abs(MV) ** 2).sum() + (np.abs(UM) ** 2).sum()) / d3)


def _dense_mask_norm_sq(U, V, Md) -> float:
    return fro_norm(tprod(conj_transpose(U), Md)) ** 2 + fro_norm(tprod(Md, V)) ** 2


def estimate_sM(state: DebiasState, M: LinearFunctionalMask) -> float:
    """Plug-in ``s_hat`` averaged over the two branches' factors."""
    if M.fro == 0.0:
        raise ValueError("mask is identically zero")
    tot = sum(projected_mask_norm_sq(f.U, f.V, M) for f in state.factors)
    return math.sqrt(tot / 2.0)


def oracle_sM(factors: TsvdFactors, M: LinearFunctionalMask) -> float:
    """``s_M`` computed from known (true) singular factors."""
    return math.sqrt(projected_mask_norm_sq(factors.U, factors.V, M))


def entrywise_sM(state: DebiasState) -> np.ndarray:
    """``s_hat`` for every single-entry mask, as a ``d1 x d2`` array.

    For ``M = e_j e_k^T`` at any slice, ``||U^dagger M||_F = ||U[j]||_F`` and
    ``||M V||_F = ||V[k]||_F``, so the slice index drops out.
    """
    tot = 0.0
    for f in state.factors:
        tot = tot + row_norms(f.U)[:, None] ** 2 + row_norms(f.V)[None, :] ** 2
    return np.sqrt(tot / 2.0)


def normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError("probability must lie in (0, 1)")
    return float(ndtri(p))


def _z(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return normal_quantile(1.0 - alpha / 2.0)


def standard_error(sigma_hat: float, s_hat: float, dstar: int, n: int) -> float:
    if n < 1:
        raise ValueError("n must be positive")
    return sigma_hat * s_hat * math.sqrt(dstar / n)


def confidence_interval(estimate, sigma_hat, s_hat, dstar, n, alpha=0.05):
    """Interval for the latent functional ``<T, M>``."""
    half = _z(alpha) * standard_error(sigma_hat, s_hat, dstar, n)
    return estimate - half, estimate + half


def observation_interval(estimate, sigma_hat, s_hat, dstar, n, alpha=0.05):
    """Wider interval for a noisy reading ``<T, M> + xi``."""
    half = _z(alpha) * (standard_error(sigma_hat, s_hat, dstar, n) + sigma_hat)
    return estimate - half, estimate + half


def standardized_stat(state: DebiasState, M: LinearFunctionalMask, truth: np.ndarray,
                      sigma_hat: float | None = None) -> float:
    if truth is None:
        raise ValueError("the standardized statistic needs the true tensor")
    s_hat = estimate_sM(state, M)
    if s_hat == 0.0:
        raise ValueError("s_hat is zero; the statistic is undefined")
    if sigma_hat is None:
        sigma_hat = estimate_sigma(state)
    se = standard_error(sigma_hat, s_hat, state.dstar, state.n)
    return (linear_form(state.T_hat, M) - linear_form(truth, M)) / se


def error_split(state: DebiasState, M: LinearFunctionalMask, truth: np.ndarray):
    """Average over branches of ``<E_rn, M>`` and ``<E_init, M>``.

    ``E_rn`` is the inverse-propensity weighted noise of the held-out half and
    ``E_init = T_unbs - T - E_rn``.
    """
    truth = np.asarray(truth, dtype=np.float64)
    rn = ini = 0.0
    for unbs, held in zip(state.T_unbs, (state.D2, state.D1)):
        xi = held.y - held.gather(truth)
        E_rn = (held.dstar / held.n) * held.scatter_sum(xi)
        rn += linear_form(E_rn, M)
        ini += linear_form(unbs - truth - E_rn, M)
    return rn / 2.0, ini / 2.0


def infer(
    state: DebiasState,
    M: LinearFunctionalMask,
    alpha: float = 0.05,
    truth: np.ndarray | None = None,
    true_factors: TsvdFactors | None = None,
) -> InferenceReport:
    """Point estimate, plug-in standard error and both intervals for ``<T, M>``."""
    z = _z(alpha)
    est = linear_form(state.T_hat, M)
    sig = estimate_sigma(state)
    s_hat = estimate_sM(state, M)
    lo, hi = confidence_interval(est, sig, s_hat, state.dstar, state.n, alpha)
    olo, ohi = observation_interval(est, sig, s_hat, state.dstar, state.n, alpha)
    rep = InferenceReport(
        estimate=est, sigma_hat=sig, s_hat=s_hat,
        std_error=standard_error(sig, s_hat, state.dstar, state.n),
        ci_low=lo, ci_high=hi, ci_obs_low=olo, ci_obs_high=ohi,
        alpha=alpha, z=z, n=state.n, dstar=state.dstar, mask=M.name,
    )
    if truth is not None:
        rep.truth = linear_form(truth, M)
        if rep.std_error > 0:
            rep.standardized = (est - rep.truth) / rep.std_error
        rep.err_rn, rep.err_init = error_split(state, M, truth)
    if true_factors is not None:
        rep.s_oracle = oracle_sM(true_factors, M)
    return rep
