"""Initial low-tubal-rank completion for the debiasing pipeline.

The debiasing step only needs an initial estimate that is entrywise accurate
at the noise scale; any solver will do.  This module provides a spectral
start followed by projected gradient descent on the observed squared loss,
with the rank-r t-SVD truncation as the projection.

Step-size safety: with ``c`` the largest multiplicity of an observed index,
any step ``eta <= n / (d* c)`` is a majorise-minimise step, so the
objective cannot increase.  Backtracking starts from ``cfg.eta`` and halves
until the objective decreases or this safe step is reached.

When observations are few relative to the degrees of freedom of a rank-r
tensor, running to convergence fits the noise.  Setting
``SolverConfig.validation`` holds out that fraction of the observations,
picks the iteration count with the smallest held-out error, and reruns on
all observations for that many iterations.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .sampling import ObservationSet
from .tsvd import project_rank

__all__ = [
    "SolverConfig",
    "InitQualityReport",
    "SolverDivergence",
    "spectral_init",
    "refine",
    "complete",
    "select_iterations",
    "quality_report",
    "write_trace",
]


class SolverDivergence(FloatingPointError):
    """The objective became NaN or infinite."""


@dataclass(frozen=True)
class SolverConfig:
    r: int
    max_iters: int = 300
    step: str = "backtracking"
    eta: float = 1.0
    tol: float = 1e-7
    seed: int = 0
    validation: float = 0.0
    patience: int = 5

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("rank must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.step not in ("backtracking", "fixed"):
            raise ValueError("step must be 'backtracking' or 'fixed'")
        if not 0.0 <= self.validation < 1.0:
            raise ValueError("validation fraction must lie in [0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass(frozen=True)
class InitQualityReport:
    max_abs_error: float
    fro_error: float
    gamma_hat: float
    iterations: int | None = None
    final_objective: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def spectral_init(obs: ObservationSet, r: int) -> np.ndarray:
    """Rank-r truncation of the inverse-propensity weighted observations."""
    if obs.n < 1:
        raise ValueError("spectral_init needs at least one observation")
    Z = (obs.dstar / obs.n) * obs.scatter_sum(obs.y)
    return project_rank(Z, r)


def _objective(T, obs):
    res = obs.gather(T) - obs.y
    return float(res @ res), res


def refine(
    init: np.ndarray,
    obs: ObservationSet,
    cfg: SolverConfig,
    trace: list | None = None,
    callback=None,
) -> np.ndarray:
    """Projected gradient iterations ``T <- P_r(T - eta * G)``.

    ``G = (d*/n) sum_i (<T, X_i> - y_i) X_i``.  When ``trace`` is a list,
    ``(iteration, objective, step)`` tuples are appended to it.
    ``callback(iteration, T)`` runs after every accepted step; a true
    return value stops the iterations.
    """
    T = np.array(init, dtype=np.float64)
    if T.shape != obs.dims:
        raise ValueError(f"init shape {T.shape} does not match observations {obs.dims}")
    scale = obs.dstar / obs.n
    mult = np.bincount(obs.flat).max()
    eta_safe = 1.0 / (scale * mult)
    f, res = _objective(T, obs)
    if trace is not None:
        trace.append((0, f, 0.0))
    eta = cfg.eta
    for it in range(1, cfg.max_iters + 1):
        if f == 0.0:
            break
        G = scale * obs.scatter_sum(res)
        while True:
            cand = project_rank(T - eta * G, cfg.r)
            f_new, res_new = _objective(cand, obs)
            if not np.isfinite(f_new):
                raise SolverDivergence(f"objective is {f_new} at iteration {it}")
            if cfg.step == "fixed" or f_new <= f or eta <= eta_safe:
                break
            eta = max(eta / 2.0, eta_safe)
        if f_new > f and cfg.step == "backtracking":
            # rounding at the safe step; treat as converged
            break
        decrease = (f - f_new) / f
        T, f, res = cand, f_new, res_new
        if trace is not None:
            trace.append((it, f, eta))
        if callback is not None and callback(it, T):
            break
        if decrease < cfg.tol:
            break
        if cfg.step == "backtracking":
            eta = min(2.0 * eta, cfg.eta)
    return T


def select_iterations(obs: ObservationSet, cfg: SolverConfig) -> int:
    """Iteration count minimising the error on a held-out fraction of ``obs``.

    Stops once the held-out error has not improved for ``cfg.patience``
    iterations.  Returns 0 when the spectral start is already best.
    """
    n_val = int(round(cfg.validation * obs.n))
    if n_val < 1 or obs.n - n_val < 1:
        raise ValueError("validation split leaves an empty part")
    perm = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3])).permutation(obs.n)
    val, train = obs.subset(perm[:n_val]), obs.subset(perm[n_val:])
    start = spectral_init(train, cfg.r)
    best = [float(np.mean((val.gather(start) - val.y) ** 2)), 0]

    def watch(it, T):
        err = float(np.mean((val.gather(T) - val.y) ** 2))
        if err < best[0]:
            best[:] = [err, it]
        return it - best[1] >= cfg.patience

    refine(start, train, cfg, callback=watch)
    return best[1]


def complete(obs: ObservationSet, cfg: SolverConfig, trace: list | None = None) -> np.ndarray:
    """Spectral start followed by :func:`refine`.

    With ``cfg.validation > 0`` the iteration budget is first chosen by
    :func:`select_iterations`.
    """
    start = spectral_init(obs, cfg.r)
    if cfg.validation > 0:
        k = select_iterations(obs, cfg)
        if k == 0:
            return start
        cfg = replace(cfg, max_iters=k)
    return refine(start, obs, cfg, trace=trace)


def quality_report(est, truth, sigma: float, iterations=None, final_objective=None) -> InitQualityReport:
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise ValueError("estimate and truth shapes differ")
    err = est - truth
    max_err = float(np.abs(err).max())
    if sigma > 0:
        gamma = max_err / sigma
    else:
        gamma = 0.0 if max_err == 0.0 else float("inf")
    return InitQualityReport(max_err, float(np.linalg.norm(err)), gamma,
                             iterations, final_objective)


def write_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective", "step"])
        for row in trace:
            w.writerow(row)
