"""Monte-Carlo driver, normality check, perturbation scaling and grid pipeline.

A Monte-Carlo run keeps one ground-truth tensor fixed and, per replicate,
draws fresh sampling and noise, runs the cross-fitted estimator and records
every stage (``Init-1``, ``Init-2``, ``Proj-1``, ``Proj-2``, ``Final``) on
every test mask.  Replicate ``i`` is seeded from the ``i``-th child of
``SeedSequence([seed, 4])``, so results do not depend on worker count or
completion order.
"""
from __future__ import annotations

import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .debias import (
    LinearFunctionalMask,
    entrywise_sM,
    estimate_sigma,
    estimate_sM,
    linear_form,
    normal_quantile,
    run_algorithm1,
    standard_error,
)
from .init_solver import SolverConfig, complete
from .io import load_tensor, save_tensor, write_csv
from .sampling import (
    GeneratorConfig,
    ObservationSet,
    draw_noise,
    generate_ground_truth,
    sample_observations,
)
from .tsvd import projector_row_distance, tsvd

__all__ = [
    "STAGES",
    "SCHEMA_VERSION",
    "ExperimentSpec",
    "McSummary",
    "desk_masks",
    "run_monte_carlo",
    "write_outputs",
    "normality_check",
    "perturbation_scaling",
    "grid_pipeline",
]

log = logging.getLogger(__name__)

STAGES = ("Init-1", "Init-2", "Proj-1", "Proj-2", "Final")
SCHEMA_VERSION = "tubalinfer-mc/1"
MAX_FAILURE_RATE = 0.05
HIST_EDGES = np.linspace(-4.0, 4.0, 41)
GAIN_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def desk_masks(dims) -> list[LinearFunctionalMask]:
    """Four test masks: a corner entry, an interior entry, two entries on the
    same slice, and three consecutive entries of one tube."""
    d1, d2, d3 = dims
    j2, k2, l2 = (min(int(round(0.4 * d)), d - 1) for d in dims)
    if d3 < 3:
        raise ValueError("the tube mask needs d3 >= 3")
    return [
        LinearFunctionalMask.entries([(0, 0, 0)], name="M1"),
        LinearFunctionalMask.entries([(j2, k2, l2)], name="M2"),
        LinearFunctionalMask.entries([(0, 0, 0), (j2, k2, 0)], name="M3"),
        LinearFunctionalMask.entries([(0, 0, 0), (0, 0, 1), (0, 0, 2)], name="M4"),
    ]


@dataclass
class ExperimentSpec:
    dims: tuple[int, int, int] = (60, 60, 30)
    r: int = 3
    sigma: float = 0.5
    fraction: float = 0.4
    R: int = 300
    masks: list = field(default_factory=list)
    solver: SolverConfig | None = None
    seed: int = 2024
    out: str | None = None
    noise: str = "gaussian"
    alpha: float = 0.05
    workers: int = 1
    full_refine: bool = False
    init: str = "solver"

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.R < 1:
            raise ValueError("R must be >= 1")
        if not self.masks:
            self.masks = desk_masks(self.dims)
        for M in self.masks:
            M.check(self.dims)
        if self.solver is None:
            self.solver = SolverConfig(r=self.r, validation=0.1)
        if self.solver.r != self.r:
            raise ValueError("solver rank differs from experiment rank")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.init not in ("solver", "oracle"):
            raise ValueError("init must be 'solver' or 'oracle'")

    @property
    def generator(self) -> GeneratorConfig:
        return GeneratorConfig(self.dims, self.r, self.sigma, self.fraction,
                               noise=self.noise, seed=self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["masks"] = [M.to_dict() for M in self.masks]
        d["solver"] = asdict(self.solver)
        d["dims"] = list(self.dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        """Build from JSON; mask entries are 1-based ``[j, k, l, w]`` lists."""
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment fields: {sorted(unknown)}")
        masks = []
        for i, m in enumerate(d.pop("masks", []) or []):
            entries = [(e[0] - 1, e[1] - 1, e[2] - 1, *e[3:]) for e in m["entries"]]
            masks.append(LinearFunctionalMask.entries(entries, name=m.get("name", f"M{i + 1}")))
        solver = d.pop("solver", None)
        if isinstance(solver, dict):
            solver = SolverConfig(**{"r": int(d.get("r", 3)), **solver})
        return cls(masks=masks, solver=solver, **d)


@dataclass
class McSummary:
    spec: dict
    n_ok: int
    n_failed: int
    stage_metrics: dict            # mask -> stage -> {bias, sd, mse}
    tensor_rmse: dict              # stage -> mean RMSE over replicates
    ci: dict                       # mask -> interval statistics
    standardized: dict             # mask -> list of statistics
    ks: dict                       # mask -> KS distance
    gains: dict                    # "init_proj"/"proj_final" -> quantile -> mean
    rmse_by_rep: dict = field(repr=False, default_factory=dict)
    sq_err_by_rep: dict = field(repr=False, default_factory=dict)
    sigma_hat: list = field(repr=False, default_factory=list)
    elapsed: float = 0.0

    def final_beats_init_rate(self) -> float:
        """Fraction of replicates where the final RMSE is below both initial RMSEs."""
        f = np.asarray(self.rmse_by_rep["Final"])
        i = np.minimum(self.rmse_by_rep["Init-1"], self.rmse_by_rep["Init-2"])
        return float(np.mean(f < i))

    def median_sq_err(self, mask: str, stage: str) -> float:
        """Median squared error, pooling the two branches for Init and Proj."""
        if stage in ("Init", "Proj"):
            v = np.concatenate([self.sq_err_by_rep[mask][stage + "-1"],
                                self.sq_err_by_rep[mask][stage + "-2"]])
        else:
            v = np.asarray(self.sq_err_by_rep[mask][stage])
        return float(np.median(v))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("rmse_by_rep")
        d.pop("sq_err_by_rep")
        d["sigma_hat_mean"] = float(np.mean(self.sigma_hat)) if self.sigma_hat else None
        d.pop("sigma_hat")
        d.pop("elapsed")  # wall time would break byte-identical reruns
        return d


def _replicate_seeds(seed: int, R: int) -> list[int]:
    children = np.random.SeedSequence([int(seed), 4]).spawn(R)
    return [int(c.generate_state(1)[0]) for c in children]


def _one_replicate(spec: ExperimentSpec, T: np.ndarray, rep_seed: int) -> dict:
    gcfg = replace(spec.generator, seed=rep_seed)
    obs = sample_observations(T, gcfg, seed=rep_seed)
    solver = replace(spec.solver, seed=rep_seed)
    initializer = (lambda half: T) if spec.init == "oracle" else None
    state = run_algorithm1(obs, spec.r, solver, seed=rep_seed, initializer=initializer)
    sig = estimate_sigma(state)
    z = normal_quantile(1.0 - spec.alpha / 2.0)
    tensors = dict(zip(STAGES, (*state.T_init, *state.T_proj, state.T_hat)))
    out = {
        "rmse": {s: float(np.sqrt(np.mean((X - T) ** 2))) for s, X in tensors.items()},
        "sigma_hat": sig,
        "masks": {},
    }
    noise_rng = np.random.default_rng(np.random.SeedSequence([rep_seed, 5]))
    y_noise = draw_noise(spec.noise, spec.sigma, len(spec.masks), noise_rng)
    for M, xi in zip(spec.masks, y_noise):
        truth = linear_form(T, M)
        s_hat = estimate_sM(state, M)
        se = standard_error(sig, s_hat, state.dstar, state.n)
        est = linear_form(state.T_hat, M)
        y_M = truth + xi
        out["masks"][M.name] = {
            "err": {s: linear_form(X, M) - truth for s, X in tensors.items()},
            "width": 2 * z * se,
            "covered": abs(est - truth) <= z * se,
            "obs_width": 2 * z * (se + sig),
            "obs_covered": abs(est - y_M) <= z * (se + sig),
            "standardized": (est - truth) / se if se > 0 else float("nan"),
        }
    gains = {}
    e_init = [np.abs(state.T_init[a] - T) for a in range(2)]
    e_proj = [np.abs(state.T_proj[a] - T) for a in range(2)]
    e_final = np.abs(state.T_hat - T)
    gains["init_proj"] = np.quantile(np.concatenate([(e_init[a] - e_proj[a]).ravel() for a in range(2)]),
                                     GAIN_QUANTILES).tolist()
    gains["proj_final"] = np.quantile(np.concatenate([(e_proj[a] - e_final).ravel() for a in range(2)]),
                                      GAIN_QUANTILES).tolist()
    if spec.full_refine:
        full = complete(obs, solver)
        gains["refine_final"] = np.quantile((np.abs(full - T) - e_final).ravel(),
                                            GAIN_QUANTILES).tolist()
    out["gains"] = gains
    return out


def _safe_replicate(args):
    spec, T, rep_seed = args
    try:
        return _one_replicate(spec, T, rep_seed)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        log.warning("replicate seed %d failed: %s", rep_seed, exc)
        return None


def run_monte_carlo(spec: ExperimentSpec, truth: np.ndarray | None = None) -> McSummary:
    """Run ``spec.R`` replicates against one fixed ground truth and aggregate.

    Bias is the mean error, SD the population standard deviation (``ddof=0``)
    so that ``MSE = bias^2 + SD^2`` holds exactly.
    """
    t0 = time.perf_counter()
    T = generate_ground_truth(spec.generator) if truth is None else np.asarray(truth, dtype=float)
    seeds = _replicate_seeds(spec.seed, spec.R)
    jobs = [(spec, T, s) for s in seeds]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_safe_replicate, jobs))
    else:
        results = [_safe_replicate(j) for j in jobs]
    ok = [r for r in results if r is not None]
    n_failed = len(results) - len(ok)
    if not ok or n_failed > MAX_FAILURE_RATE * spec.R:
        raise RuntimeError(f"{n_failed} of {spec.R} replicates failed")

    names = [M.name for M in spec.masks]
    stage_metrics, sq_err, ci, zstats, ks = {}, {}, {}, {}, {}
    R = len(ok)
    for name in names:
        stage_metrics[name] = {}
        sq_err[name] = {}
        for s in STAGES:
            e = np.array([r["masks"][name]["err"][s] for r in ok])
            bias, sd = float(e.mean()), float(e.std())
            stage_metrics[name][s] = {"bias": bias, "sd": sd, "mse": float(np.mean(e ** 2))}
            sq_err[name][s] = (e ** 2).tolist()
        rec = [r["masks"][name] for r in ok]
        w = np.array([x["width"] for x in rec])
        ow = np.array([x["obs_width"] for x in rec])
        cov = float(np.mean([x["covered"] for x in rec]))
        ocov = float(np.mean([x["obs_covered"] for x in rec]))
        ci[name] = {
            "width_mean": float(w.mean()),
            "width_se": float(w.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0,
            "coverage": cov,
            "coverage_se": math.sqrt(cov * (1 - cov) / R),
            "obs_width_mean": float(ow.mean()),
            "obs_width_se": float(ow.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0,
            "obs_coverage": ocov,
            "obs_coverage_se": math.sqrt(ocov * (1 - ocov) / R),
        }
        zs = [x["standardized"] for x in rec]
        zstats[name] = zs
        finite = [v for v in zs if np.isfinite(v)]
        ks[name] = float(stats.kstest(finite, "norm").statistic) if finite else float("nan")
    gains = {}
    for key in ok[0]["gains"]:
        g = np.array([r["gains"][key] for r in ok])
        gains[key] = {f"q{int(100 * q):02d}": float(v) for q, v in zip(GAIN_QUANTILES, g.mean(axis=0))}
    summary = McSummary(
        spec=spec.to_dict(),
        n_ok=R,
        n_failed=n_failed,
        stage_metrics=stage_metrics,
        tensor_rmse={s: float(np.mean([r["rmse"][s] for r in ok])) for s in STAGES},
        ci=ci,
        standardized=zstats,
        ks=ks,
        gains=gains,
        rmse_by_rep={s: [r["rmse"][s] for r in ok] for s in STAGES},
        sq_err_by_rep=sq_err,
        sigma_hat=[r["sigma_hat"] for r in ok],
        elapsed=time.perf_counter() - t0,
    )
    if spec.out:
        write_outputs(summary, spec.out)
    return summary


def _provenance() -> dict:
    return {
        "package_version": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }


def write_outputs(summary: McSummary, out) -> dict:
    """Write table1.csv, table2.csv, hist_<mask>.csv and summary.json under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, per_stage in summary.stage_metrics.items():
        for s in STAGES:
            m = per_stage[s]
            rows.append([name, s, m["bias"], m["sd"], m["mse"]])
    for s in STAGES:
        rows.append(["tensor_rmse", s, "", "", summary.tensor_rmse[s]])
    write_csv(out / "table1.csv", ["mask", "stage", "bias", "sd", "mse"], rows, SCHEMA_VERSION)
    rows = [[name, c["width_mean"], c["width_se"], c["coverage"], c["coverage_se"],
             c["obs_width_mean"], c["obs_width_se"], c["obs_coverage"], c["obs_coverage_se"]]
            for name, c in summary.ci.items()]
    write_csv(out / "table2.csv",
              ["mask", "ci_width", "ci_width_se", "coverage", "coverage_se",
               "obs_ci_width", "obs_ci_width_se", "obs_coverage", "obs_coverage_se"],
              rows, SCHEMA_VERSION)
    paths = {"table1": str(out / "table1.csv"), "table2": str(out / "table2.csv")}
    for name, zs in summary.standardized.items():
        finite = [v for v in zs if np.isfinite(v)]
        counts, _ = np.histogram(finite, bins=HIST_EDGES)
        width = HIST_EDGES[1] - HIST_EDGES[0]
        dens = counts / (max(len(finite), 1) * width)
        rows = [[float(a), float(b), int(c), float(d)]
                for a, b, c, d in zip(HIST_EDGES[:-1], HIST_EDGES[1:], counts, dens)]
        p = out / f"hist_{name}.csv"
        write_csv(p, ["left", "right", "count", "density"], rows, SCHEMA_VERSION)
        paths[f"hist_{name}"] = str(p)
    doc = {"schema": SCHEMA_VERSION, "provenance": _provenance(), **summary.to_dict()}
    (out / "summary.json").write_text(json.dumps(doc, indent=2, default=float))
    paths["summary"] = str(out / "summary.json")
    return paths


def normality_check(values) -> dict:
    """KS distance to N(0, 1), moments, and a 40-bin histogram on [-4, 4]."""
    x = np.asarray(values, dtype=np.float64).ravel()
    x = x[np.isfinite(x)]
    if x.size < 30:
        raise ValueError(f"normality_check needs at least 30 finite values, got {x.size}")
    counts, edges = np.histogram(x, bins=HIST_EDGES)
    return {
        "ks_stat": float(stats.kstest(x, "norm").statistic),
        "mean": float(x.mean()),
        "std": float(x.std(ddof=1)),
        "n": int(x.size),
        "bin_edges": edges.tolist(),
        "counts": counts.tolist(),
    }


def perturbation_scaling(
    dims=(40, 40, 20),
    r: int = 3,
    sigma: float = 0.5,
    fractions=(0.2, 0.4, 0.8),
    reps: int = 50,
    seed: int = 7,
    init: str = "oracle",
    solver: SolverConfig | None = None,
    out=None,
) -> dict:
    """Row-wise projector distance of the retracted factors versus sample size.

    For each fraction, ``reps`` replicates run the cross-fitted estimator
    and measure ``max_j ||e_j^T (U_hat U_hat^T - U U^T)||`` for the first
    branch (likewise for V).  ``init="oracle"`` starts both branches at the
    truth, isolating the sampling perturbation; ``init="solver"`` uses the
    completion solver.  The slope is a least-squares fit of log distance on
    log n.
    """
    if init not in ("oracle", "solver"):
        raise ValueError("init must be 'oracle' or 'solver'")
    gcfg = GeneratorConfig(dims, r, sigma, fractions[0], seed=seed)
    T = generate_ground_truth(gcfg)
    ref = tsvd(T, r=r)
    solver = solver or SolverConfig(r=r, validation=0.1)
    table = []
    for frac in fractions:
        du, dv = [], []
        for s in _replicate_seeds(seed + int(round(1000 * frac)), reps):
            obs = sample_observations(T, replace(gcfg, fraction=frac), seed=s)
            initializer = (lambda half: T) if init == "oracle" else None
            st = run_algorithm1(obs, r, replace(solver, seed=s), seed=s, initializer=initializer)
            f = st.factors[0]
            du.append(projector_row_distance(f.U, ref.U))
            dv.append(projector_row_distance(f.V, ref.V))
        table.append({"fraction": frac, "n": replace(gcfg, fraction=frac).n,
                      "row_dist_U": float(np.median(du)), "row_dist_V": float(np.median(dv))})
    logn = np.log([t["n"] for t in table])

    def slope(key):
        dist = np.array([t[key] for t in table])
        if len(table) < 2 or np.any(dist <= 0):
            return float("nan")
        return float(np.polyfit(logn, np.log(dist), 1)[0])

    result = {"table": table, "slope_U": slope("row_dist_U"), "slope_V": slope("row_dist_V")}
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_csv(Path(out) / "perturb.csv", ["fraction", "n", "row_dist_U", "row_dist_V"],
                  [[t["fraction"], t["n"], t["row_dist_U"], t["row_dist_V"]] for t in table],
                  SCHEMA_VERSION)
    return result


def _slice_mean_fill(observed: np.ndarray) -> np.ndarray:
    """Replace NaNs by the mean of the observed entries in the same frontal slice."""
    seen = ~np.isnan(observed)
    counts = seen.sum(axis=(0, 1))
    means = np.where(seen, observed, 0.0).sum(axis=(0, 1)) / np.maximum(counts, 1)
    return np.where(np.isnan(observed), means[None, None, :], observed)


def grid_pipeline(
    source,
    r: int,
    mask_fraction: float = 0.6,
    mask=None,
    alpha: float = 0.05,
    out=None,
    seed: int = 0,
    solver: SolverConfig | None = None,
) -> dict:
    """Impute a gridded tensor and attach per-entry confidence bounds.

    ``source`` is a path to a TNS3 file or an array; NaN entries are treated
    as missing.  Unless ``mask`` (a boolean array or TNS3 file, nonzero =
    observed) is given, ``mask_fraction`` of the entries are hidden at random.
    Every observed entry enters once.  The per-entry standard error uses
    ``s_hat(j, k)`` from the row norms of the branch factors.
    """
    X = load_tensor(source) if isinstance(source, (str, os.PathLike)) else np.asarray(source, dtype=float)
    if X.ndim != 3:
        raise ValueError("grid input must be a third-order tensor")
    if not 1 <= r <= min(X.shape[:2]):
        raise ValueError(f"rank {r} outside [1, {min(X.shape[:2])}]")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 6]))
    if mask is not None:
        keep = (load_tensor(mask) if isinstance(mask, (str, os.PathLike)) else np.asarray(mask)) != 0
        if keep.shape != X.shape:
            raise ValueError("mask shape differs from the input tensor")
    else:
        if not 0.0 <= mask_fraction < 1.0:
            raise ValueError("mask_fraction must lie in [0, 1)")
        keep = rng.random(X.shape) >= mask_fraction
    keep &= ~np.isnan(X)
    idx = np.argwhere(keep)
    if len(idx) < 2:
        raise ValueError("fewer than two observed entries")
    obs = ObservationSet(X.shape, idx, X[keep], seed=seed)
    solver = solver or SolverConfig(r=r, validation=0.1, seed=seed)
    state = run_algorithm1(obs, r, solver, seed=seed)
    sig = estimate_sigma(state)
    z = normal_quantile(1.0 - alpha / 2.0)
    se = standard_error(sig, 1.0, state.dstar, state.n) * entrywise_sM(state)[:, :, None]
    se = np.broadcast_to(se, X.shape)
    T_hat = state.T_hat
    lo, hi = T_hat - z * se, T_hat + z * se

    observed = np.where(keep, X, np.nan)
    baseline = _slice_mean_fill(observed)
    hidden = ~keep & ~np.isnan(X)
    summary = {
        "schema": SCHEMA_VERSION,
        "dims": list(X.shape),
        "r": r,
        "alpha": alpha,
        "n_observed": int(obs.n),
        "sigma_hat": sig,
        "ci_width_mean": float(np.mean(hi - lo)),
        "ci_width_min": float(np.min(hi - lo)),
    }
    if hidden.any():
        summary["rmse_hidden"] = float(np.sqrt(np.mean((T_hat - X)[hidden] ** 2)))
        summary["rmse_baseline"] = float(np.sqrt(np.mean((baseline - X)[hidden] ** 2)))
        summary["hidden_coverage"] = float(np.mean((lo <= X)[hidden] & (X <= hi)[hidden]))
    absx = np.abs(np.where(np.isnan(X), T_hat, X))
    w = (hi - lo).ravel()
    if w.std() > 0 and absx.std() > 0:
        summary["width_abs_corr"] = float(np.corrcoef(w, absx.ravel())[0, 1])
    result = {"imputed": T_hat, "ci_low": lo, "ci_high": hi, "summary": summary}
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        save_tensor(out / "imputed.tns3", T_hat)
        save_tensor(out / "ci_low.tns3", lo)
        save_tensor(out / "ci_high.tns3", hi)
        (out / "grid_summary.json").write_text(json.dumps(summary, indent=2))
        result["paths"] = {k: str(out / f"{k}.tns3") for k in ("imputed", "ci_low", "ci_high")}
        result["paths"]["summary"] = str(out / "grid_summary.json")
    return result
