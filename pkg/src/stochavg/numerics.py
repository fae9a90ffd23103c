"""Deterministic numerical kernels shared by the rest of the package.

Gauss-Hermite quadrature, fixed-step RK4, damped scalar Newton, cubic
roots via the companion matrix, and the Gaussian upper tail.  Every
tolerance default lives in :data:`DEFAULTS` so tests can pin behaviour.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

__all__ = [
    "DEFAULTS", "QuadratureRule", "hermite_rule", "gaussian_expectation",
    "rk4_integrate", "newton_scalar", "cubic_roots", "normal_tail",
    "ConvergenceError", "ExplosionError",
]

DEFAULTS = {
    "hermite_order": 64,
    "hermite_max_order": 256,
    "quadrature_tol": 1e-10,
    "newton_tol": 1e-14,
    "newton_xtol": 1e-15,
    "newton_max_iter": 100,
    "blowup_threshold": 1e12,
    "cubic_residual_tol": 1e-10,
}


class ConvergenceError(RuntimeError):
    """An iterative kernel did not reach its tolerance."""


class ExplosionError(ArithmeticError):
    """A state became non-finite or exceeded the blow-up threshold.

    ``index`` is the first offending step (or grid index).
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class QuadratureRule:
    """Physicists' Gauss-Hermite rule: int g(t) exp(-t^2) dt ~ sum w_i g(t_i)."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self):
        return len(self.nodes)


@lru_cache(maxsize=32)
def _hermite_cached(order):
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights)


def hermite_rule(order):
    """Return the ``order``-point Gauss-Hermite rule (weight ``exp(-t^2)``)."""
    order = int(order)
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    return _hermite_cached(order)


def _gh_mean(g, sigma, order):
    rule = hermite_rule(order)
    y = math.sqrt(2.0) * sigma * rule.nodes
    vals = np.asarray(g(y), dtype=float)
    return float(np.dot(rule.weights, vals) / math.sqrt(math.pi))


def gaussian_expectation(g, sigma, order=None, tol=None, max_order=None):
    """E[g(Y)] for Y ~ N(0, sigma^2) by Gauss-Hermite with node doubling.

    ``g`` must accept a numpy array.  The node count starts at ``order`` and
    doubles until two successive values agree to ``tol`` (absolute).

    Raises
    ------
    ConvergenceError
        If ``max_order`` nodes are reached without agreement.
    """
    order = DEFAULTS["hermite_order"] if order is None else int(order)
    tol = DEFAULTS["quadrature_tol"] if tol is None else tol
    max_order = DEFAULTS["hermite_max_order"] if max_order is None else max_order
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return float(np.asarray(g(np.zeros(1)), dtype=float)[0])
    prev = _gh_mean(g, sigma, order)
    while order < max_order:
        order *= 2
        cur = _gh_mean(g, sigma, order)
        if abs(cur - prev) <= tol:
            return cur
        prev = cur
    raise ConvergenceError(
        f"Gauss-Hermite did not settle to {tol:g} within {max_order} nodes")


def rk4_integrate(rhs, x0, horizon, step, threshold=None):
    """Classical fixed-step RK4 for dx/dt = rhs(x) on the grid 0, h, 2h, ..., T.

    When ``T`` is not a multiple of ``h`` the last step is shortened so the
    grid ends exactly at ``T``.  Returns ``(times, states)`` with states of
    shape (len(times), n).

    Raises
    ------
    ExplosionError
        If a state is non-finite or exceeds ``threshold`` in magnitude.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    threshold = DEFAULTS["blowup_threshold"] if threshold is None else threshold
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    n_full = int(math.floor(horizon / step + 1e-9))
    times = [i * step for i in range(n_full + 1)]
    if horizon - times[-1] > 1e-12 * max(1.0, horizon):
        times.append(horizon)
    states = np.empty((len(times), x.size))
    states[0] = x
    for i in range(1, len(times)):
        h = times[i] - times[i - 1]
        k1 = np.asarray(rhs(x), dtype=float)
        k2 = np.asarray(rhs(x + 0.5 * h * k1), dtype=float)
        k3 = np.asarray(rhs(x + 0.5 * h * k2), dtype=float)
        k4 = np.asarray(rhs(x + h * k3), dtype=float)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > threshold:
            raise ExplosionError(
                f"RK4 state exploded at t={times[i]:.6g} (grid index {i})", index=i)
        states[i] = x
    return np.asarray(times), states


def newton_scalar(g, dg, x0, tol=None, max_iter=None, xtol=None):
    """Damped Newton iteration for a scalar root of ``g``.

    Each full Newton step is halved until ``|g|`` decreases, so the residual
    sequence is monotone.  Stops when ``|g(x)| <= tol`` or the accepted step
    is below ``xtol * max(1, |x|)``.

    Raises
    ------
    ConvergenceError
        After ``max_iter`` iterations, or if no damped step lowers ``|g|``
        while the residual is still above ``tol``.
    """
    tol = DEFAULTS["newton_tol"] if tol is None else tol
    xtol = DEFAULTS["newton_xtol"] if xtol is None else xtol
    max_iter = DEFAULTS["newton_max_iter"] if max_iter is None else max_iter
    x = float(x0)
    gx = float(g(x))
    for _ in range(max_iter):
        if abs(gx) <= tol:
            return x
        d = float(dg(x))
        if d == 0 or not math.isfinite(d):
            raise ConvergenceError(f"zero or non-finite derivative at x={x!r}")
        step = -gx / d
        for _ in range(60):
            x_new = x + step
            g_new = float(g(x_new))
            if abs(g_new) < abs(gx):
                break
            step *= 0.5
        else:
            # residual cannot be lowered further: accept if the step is at roundoff
            if abs(step) <= xtol * max(1.0, abs(x)) * 1e3:
                return x
            raise ConvergenceError(f"line search stalled at x={x!r}, |g|={abs(gx):.3e}")
        x, gx = x_new, g_new
        if abs(step) <= xtol * max(1.0, abs(x)):
            return x
    if abs(gx) <= tol:
        return x
    raise ConvergenceError(f"Newton did not converge in {max_iter} iterations")


def cubic_roots(coefficients):
    """Roots of ``c0 x^3 + c1 x^2 + c2 x + c3`` via companion-matrix eigenvalues.

    Returned as a complex array sorted by real part, then imaginary part.
    """
    c = np.asarray(coefficients, dtype=complex)
    if c.shape != (4,):
        raise ValueError("expected four coefficients")
    if c[0] == 0:
        raise ValueError("leading coefficient must be nonzero")
    c = c / c[0]
    companion = np.array([[-c[1], -c[2], -c[3]],
                          [1, 0, 0],
                          [0, 1, 0]], dtype=complex)
    roots = np.linalg.eigvals(companion)
    order = np.lexsort((roots.imag, roots.real))
    return roots[order]


def normal_tail(z):
    """P(Z >= z) for standard normal Z."""
    return float(ndtr(-z))
