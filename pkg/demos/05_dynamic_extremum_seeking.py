"""
Dynamic extremum seeking: equilibrium, stability and tracking
=============================================================

For the reduced map varsigma(z) = -z^2 + 0.1 z^3 the averaged system has an
equilibrium theta ~ b2 a^2 that shrinks with the probe amplitude a.  Its
Jacobian has eigenvalues 1 - eps w2 and 1 + eps(-w1 +/- sqrt(w1^2 + 4 gain J21))/2,
so the step size below which the average is stable follows in closed form.
Finally the closed loop with a first-order plant is run next to the reduced
system.

Run:  python demos/05_dynamic_extremum_seeking.py
"""
import numpy as np

from stochavg.dynamic_es import (DynamicESParams, ReducedMap, eigenvalues_closed_form,
                                 eigenvalues_numeric, jacobian, jacobian_entries,
                                 linear_test_plant, run_dynamic_experiment,
                                 solve_average_equilibrium, stability_threshold)

rmap = ReducedMap.polynomial([0.0, 0.0, -1.0, 0.1])

print(f"{'a':>6} {'theta_e':>12} {'theta_e / a^2':>14} {'zeta_e':>12}")
for a in (0.2, 0.1, 0.05, 0.025):
    eq = solve_average_equilibrium(rmap, DynamicESParams(1.0, 1.0, 1.0, a, 0.01, 1.0))
    print(f"{a:>6} {eq.theta:>12.3e} {eq.theta / a**2:>14.6f} {eq.zeta:>12.3e}")
print(f"b2 (small-amplitude limit): {eq.b2:.6f}\n")

p = DynamicESParams(gain=1.0, w1=1.0, w2=1.0, amplitude=0.2, epsilon=0.5, probe_sigma=1.0)
eq = solve_average_equilibrium(rmap, p)
j21, j31 = jacobian_entries(rmap, p, eq)
print(f"J21 = {j21:.5f}, J31 = {j31:.5f}")
print("eigenvalues (closed form):", np.round(eigenvalues_closed_form(p, j21), 6))
numeric = np.sort_complex(eigenvalues_numeric(jacobian(rmap, p, eq)))
print("eigenvalues (numeric):    ", np.round(numeric, 6))
print(f"stable for eps < {stability_threshold(rmap, p, equilibrium=eq):.6f}\n")

# closed loop with x+ = 0.5 x + 0.5 u, y = h(x); the optimizer sits at theta* = 1
plant = linear_test_plant(rmap, theta_star=1.0, y_star=2.0, pole=0.5)
params = DynamicESParams(1.0, 1.0, 1.0, 0.2, 0.002, 1.0, noise=(0.1, 0.5))
run = run_dynamic_experiment(plant, params, 50_000, seed=0, initial=(0.5, 0.0, 0.0),
                             theta_star=1.0, measure_after_update=True)
red = run.reduced.states
cl = run.closed_loop    # columns: theta - theta*, xi, zeta - y*, plant state
for k in (0, 10_000, 25_000, 50_000):
    print(f"  k = {k:>6}  reduced theta~ = {red[k, 0]:+.4f}   closed-loop theta - 1 = {cl[k, 0]:+.4f}")
print(f"max tail gap between the two: {run.summary['closed_loop_tail_theta_gap']:.4f}")
