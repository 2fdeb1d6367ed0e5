"""Ground-truth generation and the uniform-with-replacement observation model.

Random streams come from ``numpy.random.default_rng`` (PCG64) seeded with a
``SeedSequence`` built from ``[seed, stream]``: stream 0 draws the ground
truth, stream 1 the observations.  Replicates in the Monte-Carlo harness use
``SeedSequence.spawn`` children, so they can run in any order or in parallel
and still reproduce bit-for-bit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .tensor_core import as_tensor3

__all__ = [
    "NOISE_FAMILIES",
    "GeneratorConfig",
    "ObservationSet",
    "generate_ground_truth",
    "draw_noise",
    "noise_mgf",
    "sample_observations",
    "observed_mask_tensor",
]

log = logging.getLogger(__name__)

NOISE_FAMILIES = ("gaussian", "uniform", "rademacher")

TRUTH_STREAM = 0
SAMPLE_STREAM = 1


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic experiment parameters.

    ``fraction`` is ``n / (d1 d2 d3)``; values above 1 are allowed because
    sampling is with replacement.  ``amp_variation`` and ``phase_drift``
    control the per-frequency modulation of the loading matrices.
    """

    dims: tuple[int, int, int]
    r: int
    sigma: float = 0.5
    fraction: float = 0.4
    noise: str = "gaussian"
    seed: int = 0
    amp_variation: float = 0.1
    phase_drift: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        if self.r < 1:
            raise ValueError("rank must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.fraction <= 0:
            raise ValueError("fraction must be positive")
        if self.noise not in NOISE_FAMILIES:
            raise ValueError(f"noise must be one of {NOISE_FAMILIES}")

    @property
    def n(self) -> int:
        return int(round(self.fraction * np.prod(self.dims)))


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observed triples ``(j, k, l) -> y`` with 0-based indices.

    Duplicated indices are allowed (sampling is with replacement).
    """

    dims: tuple[int, int, int]
    idx: np.ndarray
    y: np.ndarray
    sigma_xi: float = float("nan")
    seed: int | None = None
    truth: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        idx = np.asarray(self.idx, dtype=np.int64).reshape(-1, 3)
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if idx.shape[0] != y.shape[0]:
            raise ValueError("idx and y lengths differ")
        dims = tuple(int(d) for d in self.dims)
        if idx.size and (idx.min() < 0 or np.any(idx.max(axis=0) >= np.array(dims))):
            raise ValueError("observation index out of range")
        idx.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "idx", idx)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def dstar(self) -> int:
        return int(np.prod(self.dims))

    @property
    def flat(self) -> np.ndarray:
        """Linear (C-order) index of every observation."""
        return np.ravel_multi_index(tuple(self.idx.T), self.dims)

    def subset(self, rows) -> "ObservationSet":
        rows = np.asarray(rows)
        return ObservationSet(self.dims, self.idx[rows], self.y[rows],
                              self.sigma_xi, self.seed, self.truth)

    def scatter_sum(self, values: np.ndarray) -> np.ndarray:
        """Dense tensor ``sum_i values[i] X_i`` (duplicates accumulate)."""
        out = np.bincount(self.flat, weights=values, minlength=self.dstar)
        return out.reshape(self.dims)

    def gather(self, T: np.ndarray) -> np.ndarray:
        """``<T, X_i>`` for every observation."""
        return np.asarray(T).ravel()[self.flat]


def _rng(seed, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def _group_indicator(d: int, r: int) -> np.ndarray:
    """0/1 matrix assigning rows to ``r`` contiguous groups of size ``d // r``."""
    size = d // r
    groups = np.minimum(np.arange(d) // size, r - 1)
    U = np.zeros((d, r))
    U[np.arange(d), groups] = 1.0
    return U


def generate_ground_truth(cfg: GeneratorConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Tubal-rank-``r`` tensor built slice by slice in the frequency domain.

    Each slice is ``U @ V_t^H`` with ``U`` a fixed row-group indicator and
    ``V_t`` a complex Gaussian loading modulated by an amplitude factor in
    ``1 +/- amp_variation`` and a phase random walk with steps in
    ``+/- phase_drift``.  Self-conjugate slices use real loadings so the
    inverse transform is real.  The result is scaled to unit entry std.
    """
    d1, d2, d3 = cfg.dims
    r = cfg.r
    if r > min(d1, d2):
        raise ValueError(f"rank {r} exceeds min(d1, d2) = {min(d1, d2)}")
    if rng is None:
        rng = _rng(cfg.seed, TRUTH_STREAM)
    U = _group_indicator(d1, r)
    h = d3 // 2 + 1
    G = (rng.standard_normal((h, d2, r)) + 1j * rng.standard_normal((h, d2, r))) / np.sqrt(2)
    amp = 1.0 + cfg.amp_variation * rng.uniform(-1, 1, size=(h, 1, r))
    steps = cfg.phase_drift * rng.uniform(-1, 1, size=(h, 1, r))
    phase = np.cumsum(steps, axis=0)
    V = G * amp * np.exp(1j * phase)
    real_slices = [0] + ([d3 // 2] if d3 % 2 == 0 and d3 > 1 else [])
    for t in real_slices:
        V[t] = np.sqrt(2) * V[t].real
    Th = np.einsum("ir,tkr->ikt", U, V.conj())
    T = np.fft.irfft(Th, n=d3, axis=2)
    return T / T.std()


def draw_noise(family: str, sigma: float, size, rng: np.random.Generator) -> np.ndarray:
    """Mean-zero noise with variance ``sigma**2``, sub-Gaussian with parameter ``sigma**2``."""
    if family == "gaussian":
        return sigma * rng.standard_normal(size)
    if family == "uniform":
        a = sigma * np.sqrt(3.0)
        return rng.uniform(-a, a, size)
    if family == "rademacher":
        return sigma * (2.0 * rng.integers(0, 2, size) - 1.0)
    raise ValueError(f"unknown noise family {family!r}")


def noise_mgf(family: str, sigma: float, s) -> np.ndarray:
    """Closed-form moment generating function ``E exp(s xi)``."""
    s = np.asarray(s, dtype=np.float64)
    if family == "gaussian":
        return np.exp(0.5 * (s * sigma) ** 2)
    if family == "uniform":
        x = s * sigma * np.sqrt(3.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.sinh(x) / x
        return np.where(x == 0, 1.0, out)
    if family == "rademacher":
        return np.cosh(s * sigma)
    raise ValueError(f"unknown noise family {family!r}")


def sample_observations(
    T: np.ndarray,
    cfg: GeneratorConfig,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
) -> ObservationSet:
    """Draw ``round(fraction * d*)`` uniform indices with replacement and add noise."""
    T = as_tensor3(T)
    if T.shape != cfg.dims:
        raise ValueError(f"tensor shape {T.shape} does not match config dims {cfg.dims}")
    if rng is None:
        seed = cfg.seed if seed is None else seed
        rng = _rng(seed, SAMPLE_STREAM)
    n = cfg.n
    idx = np.column_stack([rng.integers(0, d, size=n) for d in cfg.dims])
    xi = draw_noise(cfg.noise, cfg.sigma, n, rng)
    y = T[idx[:, 0], idx[:, 1], idx[:, 2]] + xi
    return ObservationSet(cfg.dims, idx, y, sigma_xi=cfg.sigma,
                          seed=cfg.seed if seed is None else seed, truth=T)


def observed_mask_tensor(obs: ObservationSet) -> np.ndarray:
    """Dense tensor of observed values, ``NaN`` where nothing was observed.

    When an index was drawn more than once the last value in ``obs`` wins.
    """
    out = np.full(obs.dims, np.nan)
    if obs.n == 0:
        return out
    flat = obs.flat
    rev = flat[::-1]
    uniq, first_in_rev = np.unique(rev, return_index=True)
    last = obs.n - 1 - first_in_rev
    dup = obs.n - uniq.size
    if dup:
        log.info("observed_mask_tensor: %d duplicate observations overwritten", dup)
    out.flat[uniq] = obs.y[last]
    return out
