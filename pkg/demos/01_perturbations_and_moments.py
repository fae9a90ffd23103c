"""
Ergodic perturbations and the Gaussian sine moments
===================================================

Every averaging statement starts from a time average converging to an
integral against the invariant law.  This script samples the four bundled
processes, compares their time averages with ``expect``, and checks the
closed-form moments E sin^i(v) used throughout extremum seeking.

Run:  python demos/01_perturbations_and_moments.py
"""
import numpy as np

from stochavg import (FiniteMarkov, IIDGaussian, SampledOU, TruncatedGaussian,
                      gaussian_sine_moment)
from stochavg.numerics import gaussian_expectation

N = 200_000

processes = [
    IIDGaussian(2.0, seed=1),
    TruncatedGaussian(0.2, 1.0, seed=2),
    FiniteMarkov([[0.9, 0.1, 0.0], [0.2, 0.5, 0.3], [0.0, 0.4, 0.6]], [-1.0, 0.5, 2.0], seed=3),
    SampledOU(2.0, 1.5, 0.5, seed=4),
]

# time average of sin^2(Y_k) against its invariant-law expectation
print(f"{'process':<20} {'time avg':>10} {'E_mu':>10}")
for proc in processes:
    g = lambda y: np.sin(y) ** 2
    print(f"{proc.kind:<20} {g(proc.sample(N)).mean():>10.5f} {proc.expect(g):>10.5f}")

# truncation keeps the noise inside [-M, M]; the clipped mass sits on the atoms
w = processes[1].sample(N)
print(f"\ntruncated noise range: [{w.min():.3f}, {w.max():.3f}]")

print(f"\n{'sigma':>6} {'i':>2} {'closed form':>14} {'quadrature':>14} {'Monte Carlo':>12}")
for sigma in (0.5, 1.0, 2.0):
    v = IIDGaussian(sigma, seed=7).sample(N)
    for i in (1, 2, 3, 4):
        exact = gaussian_sine_moment(sigma, i)
        quad = gaussian_expectation(lambda y: np.sin(y) ** i, sigma)
        print(f"{sigma:>6} {i:>2} {exact:>14.10f} {quad:>14.10f} {np.mean(np.sin(v) ** i):>12.5f}")
