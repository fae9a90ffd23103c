"""
How fast does the original iteration approach its average?
==========================================================

Rate study for the static extremum seeking error system: the median, over
seeds, of sup_{k <= N/eps} |X_k - Xd_k| for a descending eps sweep, plus
the probability of leaving the exponential envelope |x0| gamma^k + delta.
The medians shrink roughly like sqrt(eps); the envelope exceedance drops to 0.

Run:  python demos/03_averaging_rate_study.py
"""
import numpy as np

from stochavg import averaging_rate_study, envelope_exceedance
from stochavg.metrics import horizon_steps
from stochavg.static_es import ESStaticParams, StaticMap, static_envelope, static_error_experiment

smap = StaticMap(optimum_value=1.0, curvature=1.0, optimizer=1.0)
eps_sweep = [0.01, 0.005, 0.0025, 0.00125]
params = lambda eps: ESStaticParams(0.8, eps, 2.0, noise=(0.2, 1.0))

exp = static_error_experiment(smap, params(eps_sweep[0]), [4.0], seed=0)
study = averaging_rate_study(exp, eps_sweep, n_horizon=10, replications=50, threads=4)
med = np.array(study.medians)
slope = np.polyfit(np.log(eps_sweep), np.log(med), 1)[0]

print(f"{'eps':>9} {'steps':>6} {'median sup-dev':>15}")
for row in study.rows:
    print(f"{row.epsilon:>9} {row.horizon_steps:>6} {row.median:>15.4f}")
print(f"log-log slope: {slope:.2f}\n")

print(f"{'eps':>9} {'envelope exceedance (|x0| = 2, delta = 0.5)':>45}")
for eps in eps_sweep:
    p = params(eps)
    e = static_error_experiment(smap, p, [2.0], seed=0)
    res = envelope_exceedance(e, static_envelope(smap, p, 0.5), horizon_steps(10, eps), 200,
                              threads=4)
    print(f"{eps:>9} {res.estimate:>10.3f} +/- {res.std_error:.3f}")
