"""Gaussian random walk plus noise: the approximation is exact.

With Gaussian system noise the full conditional of the states is Gaussian,
so at any fixed hyperparameter the engine must reproduce the Kalman
smoother, and the Laplace ratio must equal the marginal likelihood up to a
constant.
"""
import numpy as np

from robustdlm import GAUSSIAN, DlmSpec, PriorSpec, TimeSeries, fit, kalman_smooth
from robustdlm.engine import log_post_theta
from robustdlm.model import HyperPoint, log_prior

rng = np.random.default_rng(1)
n = 100
a = np.cumsum(rng.normal(0, 1.0, n))
y = a + rng.normal(0, 1.5, n)

spec = DlmSpec(TimeSeries(y), GAUSSIAN, PriorSpec())
res = fit(spec)
print(f"grid points: {len(res.grid)}")
for name, m in res.hyper_marginals.items():
    print(f"{name:>14s}  mean {m.mean:8.4f}  95% [{m.quantiles[0.025]:.4f}, {m.quantiles[0.975]:.4f}]")

# fix the hyperparameters at the grid mode and compare with the smoother
h = next(p for p in res.grid if not any(p.index)).h
fixed = DlmSpec(spec.series, GAUSSIAN, PriorSpec(),
                fixed={"obs_precision": h.obs_precision[0], "sys_precision": h.sys_precision})
at_mode = fit(fixed)
ks = kalman_smooth(y, 1 / h.obs_precision[0], 1 / h.sys_precision)
print("max |mean - kalman|:", np.max(np.abs(at_mode.state_means - ks.means)))
print("max |sd - kalman|:  ", np.max(np.abs(at_mode.state_sds - np.sqrt(ks.variances))))

# log pi(theta | y) differences against the exact marginal likelihood
h2 = HyperPoint((2 * h.obs_precision[0],), 0.5 * h.sys_precision)
lp = [log_post_theta(res.model, q)[0] for q in (h, h2)]
ex = [kalman_smooth(y, 1 / q.obs_precision[0], 1 / q.sys_precision).log_marginal_likelihood
      + log_prior(q, PriorSpec()) for q in (h, h2)]
print("difference error:", (lp[0] - lp[1]) - (ex[0] - ex[1]))
