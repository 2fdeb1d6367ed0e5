"""Command line entry point: ``tubalinfer <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Indices on the command line and in files are 1-based.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .debias import LinearFunctionalMask, infer, run_algorithm1
from .harness import ExperimentSpec, grid_pipeline, perturbation_scaling, run_monte_carlo
from .init_solver import SolverConfig, complete, quality_report, write_trace
from .io import load_observations, load_tensor, save_factors, save_observations, save_tensor
from .sampling import NOISE_FAMILIES, GeneratorConfig, generate_ground_truth, sample_observations
from .tsvd import diagnostics, tsvd

log = logging.getLogger("tubalinfer")


class UsageError(Exception):
    """Bad flag values detected after argparse (exit code 2)."""


def parse_mask(text: str, name: str = "mask") -> LinearFunctionalMask:
    """Parse ``"j,k,l:w;j,k,l:w"`` (1-based, weight optional) into a mask."""
    items = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        loc, _, w = part.partition(":")
        try:
            j, k, l = (int(v) for v in loc.split(","))
            weight = float(w) if w.strip() else 1.0
        except ValueError:
            raise UsageError(f"bad mask item {part!r}; expected j,k,l:w") from None
        if min(j, k, l) < 1:
            raise UsageError(f"mask indices are 1-based, got {part!r}")
        items.append((j - 1, k - 1, l - 1, weight))
    if not items:
        raise UsageError("empty mask")
    return LinearFunctionalMask.entries(items, name=name)


def load_mask_file(path) -> list[LinearFunctionalMask]:
    """JSON array of ``{"name": ..., "entries": [[j, k, l, w], ...]}`` (1-based)."""
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        doc = [doc]
    masks = []
    for i, m in enumerate(doc):
        entries = [(e[0] - 1, e[1] - 1, e[2] - 1, *e[3:]) for e in m["entries"]]
        if any(min(e[:3]) < 0 for e in entries):
            raise UsageError(f"{path}: mask indices are 1-based")
        masks.append(LinearFunctionalMask.entries(entries, name=m.get("name", f"M{i + 1}")))
    return masks


def _solver_from(args) -> SolverConfig:
    return SolverConfig(r=args.rank, max_iters=args.max_iters, step=args.step,
                        eta=args.eta, tol=args.tol, seed=args.seed,
                        validation=args.validation)


def _add_common(p, out_default="out"):
    p.add_argument("--seed", type=int, default=0, help="base random seed (default: 0)")
    p.add_argument("--out", default=out_default, help="output directory (default: %(default)s)")
    p.add_argument("--format", choices=("json", "csv"), default="json",
                   help="report format (default: json)")


def _add_solver(p):
    g = p.add_argument_group("solver")
    g.add_argument("--max-iters", type=int, default=300, help="iteration cap (default: 300)")
    g.add_argument("--step", choices=("backtracking", "fixed"), default="backtracking",
                   help="step rule (default: backtracking)")
    g.add_argument("--eta", type=float, default=1.0, help="initial or fixed step size (default: 1.0)")
    g.add_argument("--tol", type=float, default=1e-7,
                   help="stop when the relative objective decrease is below this (default: 1e-7)")
    g.add_argument("--validation", type=float, default=0.1,
                   help="held-out fraction used to choose the iteration count; 0 disables (default: 0.1)")


def _add_masks(p):
    p.add_argument("--mask", help='linear form as "j,k,l:w;..." with 1-based indices')
    p.add_argument("--mask-file", help="JSON array of masks; one report per mask")


def _masks_from(args, required=True) -> list[LinearFunctionalMask]:
    if args.mask and args.mask_file:
        raise UsageError("give either --mask or --mask-file, not both")
    if args.mask:
        return [parse_mask(args.mask)]
    if args.mask_file:
        return load_mask_file(args.mask_file)
    if required:
        raise UsageError("a mask is required (--mask or --mask-file)")
    return []


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tubalinfer",
                                 description="Low-tubal-rank tensor completion with confidence intervals.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a ground truth and noisy observations")
    p.add_argument("--d1", type=int, default=60, help="rows (default: 60)")
    p.add_argument("--d2", type=int, default=60, help="columns (default: 60)")
    p.add_argument("--d3", type=int, default=30, help="slices (default: 30)")
    p.add_argument("--rank", type=int, default=3, help="tubal rank (default: 3)")
    p.add_argument("--sigma", type=float, default=0.5, help="noise standard deviation (default: 0.5)")
    p.add_argument("--frac", type=float, default=0.4, help="n / (d1 d2 d3) (default: 0.4)")
    p.add_argument("--noise", choices=NOISE_FAMILIES, default="gaussian", help="noise family (default: gaussian)")
    _add_common(p)

    p = sub.add_parser("complete", help="fit a rank-r completion to observations")
    p.add_argument("--obs", required=True, help="observation file (JSON lines)")
    p.add_argument("--rank", type=int, required=True, help="tubal rank")
    p.add_argument("--truth", help="optional true tensor (TNS3) for a quality report")
    p.add_argument("--trace", action="store_true", help="write the solver trace as trace.csv")
    _add_solver(p)
    _add_common(p)

    p = sub.add_parser("infer", help="run the cross-fitted estimator and report intervals")
    p.add_argument("--obs", required=True, help="observation file (JSON lines)")
    p.add_argument("--rank", type=int, required=True, help="tubal rank")
    p.add_argument("--tensor", help="optional true tensor (TNS3) for diagnostics")
    p.add_argument("--alpha", type=float, default=0.05, help="1 - confidence level (default: 0.05)")
    p.add_argument("--save-factors", action="store_true", help="also write branch factors and the estimate")
    _add_masks(p)
    _add_solver(p)
    _add_common(p)

    p = sub.add_parser("mc", help="Monte-Carlo coverage experiment")
    p.add_argument("--spec", help="JSON experiment spec; the other experiment flags are ignored when it is given")
    p.add_argument("--d1", type=int, default=60, help="rows (default: %(default)s)")
    p.add_argument("--d2", type=int, default=60, help="columns (default: %(default)s)")
    p.add_argument("--d3", type=int, default=30, help="slices (default: %(default)s)")
    p.add_argument("--rank", type=int, default=3, help="tubal rank (default: %(default)s)")
    p.add_argument("--sigma", type=float, default=0.5, help="noise standard deviation (default: %(default)s)")
    p.add_argument("--frac", type=float, default=0.4, help="n / (d1 d2 d3) (default: %(default)s)")
    p.add_argument("--noise", choices=NOISE_FAMILIES, default="gaussian", help="noise family (default: %(default)s)")
    p.add_argument("--reps", type=int, default=300, help="replicates R (default: 300)")
    p.add_argument("--alpha", type=float, default=0.05, help="1 - confidence level (default: %(default)s)")
    p.add_argument("--threads", type=int, default=1, help="worker processes (default: 1)")
    _add_masks(p)
    _add_solver(p)
    _add_common(p)

    p = sub.add_parser("diagnose", help="spectral diagnostics of a tensor")
    p.add_argument("--tensor", required=True, help="tensor file (TNS3)")
    p.add_argument("--rank", type=int, required=True, help="tubal rank")
    p.add_argument("--reference", help="reference tensor (TNS3) for projector row distances")
    _add_masks(p)
    _add_common(p)

    p = sub.add_parser("grid", help="impute a gridded tensor with per-entry intervals")
    p.add_argument("--tensor", required=True, help="input tensor (TNS3); NaN marks missing entries")
    p.add_argument("--rank", type=int, required=True, help="tubal rank")
    p.add_argument("--mask-fraction", type=float, default=0.6,
                   help="fraction of entries hidden at random (default: 0.6)")
    p.add_argument("--observed", help="TNS3 indicator of observed entries; overrides --mask-fraction")
    p.add_argument("--alpha", type=float, default=0.05, help="1 - confidence level (default: %(default)s)")
    _add_solver(p)
    _add_common(p)

    p = sub.add_parser("perturb", help="projector distance versus sample size")
    p.add_argument("--d1", type=int, default=40, help="rows (default: %(default)s)")
    p.add_argument("--d2", type=int, default=40, help="columns (default: %(default)s)")
    p.add_argument("--d3", type=int, default=20, help="slices (default: %(default)s)")
    p.add_argument("--rank", type=int, default=3, help="tubal rank (default: %(default)s)")
    p.add_argument("--sigma", type=float, default=0.5, help="noise standard deviation (default: %(default)s)")
    p.add_argument("--fracs", default="0.2,0.4,0.8", help="comma-separated fractions (default: %(default)s)")
    p.add_argument("--reps", type=int, default=50, help="replicates (default: %(default)s)")
    p.add_argument("--init", choices=("oracle", "solver"), default="oracle", help="initializer for both branches (default: %(default)s)")
    _add_common(p)
    return ap


def _emit(rows: list[dict], out: Path, stem: str, fmt: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out / f"{stem}.json"
        text = json.dumps(rows if len(rows) != 1 else rows[0], indent=2, default=float)
    else:
        path = out / f"{stem}.csv"
        buf = _io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        text = buf.getvalue()
    path.write_text(text + ("\n" if not text.endswith("\n") else ""))
    print(text)
    return path


def cmd_simulate(args) -> int:
    try:
        cfg = GeneratorConfig((args.d1, args.d2, args.d3), args.rank, args.sigma, args.frac,
                              noise=args.noise, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    T = generate_ground_truth(cfg)
    obs = sample_observations(T, cfg)
    save_tensor(out / "truth.tns3", T)
    save_observations(out / "obs.jsonl", obs)
    meta = {"dims": list(cfg.dims), "r": cfg.r, "sigma": cfg.sigma, "fraction": cfg.fraction,
            "noise": cfg.noise, "seed": cfg.seed, "n": obs.n}
    (out / "simulate.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(json.dumps(meta))
    return 0


def cmd_complete(args) -> int:
    cfg = _solver_from(args)
    obs = load_observations(args.obs)
    trace = [] if args.trace else None
    T = complete(obs, cfg, trace=trace)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_tensor(out / "completed.tns3", T)
    if trace is not None:
        write_trace(trace, out / "trace.csv")
    row = {"n": obs.n, "dims": list(obs.dims)}
    if args.truth:
        truth = load_tensor(args.truth)
        row.update(quality_report(T, truth, obs.sigma_xi).to_dict())
    _emit([row], out, "complete", args.format)
    return 0


def cmd_infer(args) -> int:
    masks = _masks_from(args)
    if not 0 < args.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    cfg = _solver_from(args)
    obs = load_observations(args.obs)
    for M in masks:
        try:
            M.check(obs.dims)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    truth = load_tensor(args.tensor) if args.tensor else None
    state = run_algorithm1(obs, args.rank, cfg, seed=args.seed)
    ref = tsvd(truth, r=args.rank) if truth is not None else None
    rows = [infer(state, M, args.alpha, truth=truth, true_factors=ref).to_dict() for M in masks]
    out = Path(args.out)
    if args.save_factors:
        out.mkdir(parents=True, exist_ok=True)
        save_tensor(out / "estimate.tns3", state.T_hat)
        for a, f in enumerate(state.factors, start=1):
            save_factors(out / f"factors{a}", f)
    _emit(rows, out, "report", args.format)
    return 0


def cmd_mc(args) -> int:
    try:
        if args.spec:
            spec = ExperimentSpec.from_dict(json.loads(Path(args.spec).read_text()))
            spec.out = args.out
            spec.workers = args.threads
        else:
            masks = _masks_from(args, required=False)
            spec = ExperimentSpec(dims=(args.d1, args.d2, args.d3), r=args.rank, sigma=args.sigma,
                                  fraction=args.frac, R=args.reps, masks=masks,
                                  solver=_solver_from(args), seed=args.seed, out=args.out,
                                  noise=args.noise, alpha=args.alpha, workers=args.threads)
    except (ValueError, TypeError, KeyError) as exc:
        raise UsageError(f"invalid experiment spec: {exc}") from None
    s = run_monte_carlo(spec)
    rows = [{"mask": name, **c} for name, c in s.ci.items()]
    print(f"# {s.n_ok} replicates ok, {s.n_failed} failed, {s.elapsed:.1f} s", file=sys.stderr)
    _emit(rows, Path(args.out), "coverage", args.format)
    return 0


def cmd_diagnose(args) -> int:
    T = load_tensor(args.tensor)
    masks = _masks_from(args, required=False)
    ref = tsvd(load_tensor(args.reference), r=args.rank) if args.reference else None
    rows = []
    for M in masks or [None]:
        d = diagnostics(T, args.rank, M=M, reference=ref).to_dict()
        d["mask"] = M.name if M is not None else ""
        rows.append(d)
    _emit(rows, Path(args.out), "diagnostics", args.format)
    return 0


def cmd_grid(args) -> int:
    res = grid_pipeline(args.tensor, args.rank, mask_fraction=args.mask_fraction,
                        mask=args.observed, alpha=args.alpha, out=args.out, seed=args.seed,
                        solver=_solver_from(args))
    print(json.dumps(res["summary"], indent=2))
    return 0


def cmd_perturb(args) -> int:
    try:
        fracs = [float(v) for v in args.fracs.split(",")]
    except ValueError:
        raise UsageError("--fracs must be comma-separated numbers") from None
    res = perturbation_scaling((args.d1, args.d2, args.d3), args.rank, args.sigma, fracs,
                               reps=args.reps, seed=args.seed, init=args.init, out=args.out)
    rows = [dict(t, slope_U=res["slope_U"], slope_V=res["slope_V"]) for t in res["table"]]
    _emit(rows, Path(args.out), "perturb_summary", args.format)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "complete": cmd_complete,
    "infer": cmd_infer,
    "mc": cmd_mc,
    "diagnose": cmd_diagnose,
    "grid": cmd_grid,
    "perturb": cmd_perturb,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if hasattr(args, "max_iters"):
            try:
                _solver_from(args)  # validate solver flags before any work
            except ValueError as exc:
                raise UsageError(str(exc)) from None
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tubalinfer: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"tubalinfer: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
