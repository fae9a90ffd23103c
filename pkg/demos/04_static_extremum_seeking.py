"""
Stochastic extremum seeking on a static quadratic map
=====================================================

phi(x) = 1 + (x - 1)^2 / 2 is probed with a sin(v_k), v_k ~ N(0, 4), under
bounded measurement noise.  The estimate starts at 5 and settles near the
minimizer x* = 1.  The averaged error contracts by the factor
1 - eps a phi'' (1 - e^{-2 sigma^2}) / 2 per step, stable for eps < eps*.

Run:  python demos/04_static_extremum_seeking.py
The CLI equivalent with plot:
    stochavg es-static --config demos/configs/es_static.json --out out/es_static
    stochavg plot --input out/es_static/x_hat.csv --reference 1 --out out/es_static_plot
"""
import numpy as np

from stochavg.static_es import (ESStaticParams, StaticMap, average_error_factor, epsilon_star,
                                run_static_batch, run_static_experiment)

smap = StaticMap(optimum_value=1.0, curvature=1.0, optimizer=1.0)
params = ESStaticParams(amplitude=0.8, epsilon=0.002, probe_sigma=2.0, noise=(0.2, 1.0),
                        initial_estimate=5.0)

print(f"average contraction factor: {average_error_factor(smap, params):.10f}")
print(f"eps*: {epsilon_star(smap, params):.6f}")

run = run_static_experiment(smap, params, 10_000, seed=0)
x = run.x_hat.states[:, 0]
for k in (0, 1000, 2500, 5000, 7500, 10_000):
    print(f"  k = {k:>6}   x_hat = {x[k]:.4f}")
print(f"first k inside [0.75, 1.25] for good: {run.summary['time_to_band']}")

xs, _ = run_static_batch(smap, params, 10_000, list(range(100)))
inside = np.all(np.abs(xs[5000:] - 1.0) <= 0.25, axis=0)
print(f"seeds staying in the band on [5000, 10000]: {inside.mean():.0%}")
