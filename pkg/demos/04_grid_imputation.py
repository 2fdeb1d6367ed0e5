"""
Imputing a gridded space-time field with per-entry intervals
============================================================

Rows and columns are spatial locations and the third mode is time.  We
hide 60% of the grid, fill it back in, and attach a 95% interval to every
cell.  A per-time-step mean fill is the naive baseline.
"""
import numpy as np

from tubalinfer.harness import grid_pipeline

rng = np.random.default_rng(4)
d1, d2, d3 = 100, 80, 24
t = np.arange(d3)

# a few smooth spatial modes, each with its own daily cycle
x, y = np.meshgrid(np.linspace(0, 1, d2), np.linspace(0, 1, d1))
modes = [np.sin(np.pi * x) * np.cos(np.pi * y), x * y, np.exp(-((x - 0.3) ** 2 + (y - 0.6) ** 2) / 0.05)]
cycles = [np.cos(2 * np.pi * t / d3), 0.5 + 0.3 * np.sin(2 * np.pi * t / d3), 1.0 + 0.2 * t / d3]
field = sum(m[:, :, None] * c[None, None, :] for m, c in zip(modes, cycles))
field = field / field.std()
X = field + 0.05 * rng.standard_normal(field.shape)

res = grid_pipeline(X, r=3, mask_fraction=0.6, seed=4)
s = res["summary"]
print(f"observed {s['n_observed']} of {X.size} cells")
print(f"hidden-cell RMSE {s['rmse_hidden']:.3f} vs slice-mean fill {s['rmse_baseline']:.3f}")
print(f"mean interval width {s['ci_width_mean']:.3f}, coverage of hidden cells {s['hidden_coverage']:.2f}")
# sigma_hat comes from held-out residuals of the half-sample fits, so at this
# sampling rate it also absorbs their fitting error (the added noise is 0.05)
print("the noise scale the intervals assume (sigma_hat): %.3f" % s["sigma_hat"])
