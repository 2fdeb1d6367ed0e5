"""
A small coverage study
======================

Repeat sampling, estimation and interval construction many times against
one fixed tensor and count how often the intervals contain the truth.
This is a reduced version of the desk experiment used by the acceptance
suite (which uses 60x60x30 and 300 replicates).
"""
from tubalinfer.harness import ExperimentSpec, run_monte_carlo
from tubalinfer.init_solver import SolverConfig

spec = ExperimentSpec(dims=(30, 30, 12), r=2, sigma=0.5, fraction=1.0, R=60, seed=3,
                      solver=SolverConfig(r=2, validation=0.1))
summary = run_monte_carlo(spec)

print(f"{summary.n_ok} replicates, {summary.n_failed} failed, {summary.elapsed:.0f} s")
print("mean tensor RMSE by stage:")
for stage, v in summary.tensor_rmse.items():
    print(f"  {stage:>7}: {v:.3f}")
print("interval coverage (functional / observation) and mean width:")
for name, c in summary.ci.items():
    print(f"  {name}: {c['coverage']:.2f} +- {c['coverage_se']:.2f} / {c['obs_coverage']:.2f}"
          f"   width {c['width_mean']:.3f}")
print("KS distance of the standardized statistic to N(0,1):",
      {k: round(v, 3) for k, v in summary.ks.items()})
