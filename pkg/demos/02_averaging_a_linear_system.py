"""
Original iteration against its two averages
===========================================

X_{k+1} = X_k + eps (A X_k + sin^2(Y_{k+1}) b) driven by a sampled OU
process.  The average field is A x + E[sin^2 Y] b.  As eps shrinks, the
original iteration stays closer to the discrete average on [0, N/eps],
and the discrete average approaches the RK4 solution of the average ODE.

Run:  python demos/02_averaging_a_linear_system.py
"""
import numpy as np

from stochavg import (AverageField, SampledOU, SystemModel, embed_time,
                      integrate_continuous_average, iterate_discrete_average, iterate_original)

A = np.array([[-1.0, 0.5], [0.0, -2.0]])
b = np.array([1.0, 1.0])
ou = SampledOU(2.0, 2.0, 0.5, seed=0)
m2 = ou.expect(lambda y: np.sin(y) ** 2)

field = lambda x, y: np.asarray(x) @ A.T + (np.sin(np.asarray(y)) ** 2)[..., None] * b
avg = AverageField.closed_form(lambda x: np.asarray(x) @ A.T + m2 * b)
x0 = [2.0, -1.0]
T = 5.0

cont = integrate_continuous_average(avg, x0, T, 1e-3)
print(f"E sin^2 under the OU law: {m2:.6f}")
print(f"continuous average at t={T}: {cont.states[-1].round(5)}\n")

print(f"{'eps':>8} {'sup|X - Xd|':>12} {'|Xd(T) - Xc(T)|':>16}")
for eps in (0.1, 0.03, 0.01, 0.003):
    steps = int(round(T / eps))
    model = SystemModel(2, field, eps)
    x = iterate_original(model, ou.spawn(), x0, steps)
    xd = iterate_discrete_average(avg, eps, x0, steps)
    gap = np.max(np.linalg.norm(x.states - xd.states, axis=1))
    end = np.linalg.norm(embed_time(xd, T) - cont.states[-1])
    print(f"{eps:>8} {gap:>12.4f} {end:>16.2e}")
