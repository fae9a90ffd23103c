"""Stochastic extremum seeking for a plant with an output equilibrium map.

The parameter estimate theta_hat is driven by a demodulating filter xi and
a washout filter zeta.  Freezing the plant at its quasi-steady state
x = l(theta) gives the reduced system in (theta_tilde, xi, zeta_tilde),
which depends on the plant only through

    varsigma(z) = h(l(theta* + z)) - h(l(theta*)),

a function with varsigma(0) = varsigma'(0) = 0 and varsigma''(0) < 0.
Everything about the average of the reduced system (its equilibrium, the
small-amplitude expansion of that equilibrium, the Jacobian and its
eigenvalues) is computed here with Gauss-Hermite quadrature.
"""

import cmath
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .averaging import AverageField, SystemModel, Trajectory
from .numerics import (DEFAULTS, ConvergenceError, ExplosionError, cubic_roots,
                       gaussian_expectation, newton_scalar)
from .processes import gaussian_sine_moment
from .static_es import probe_noise_draws

__all__ = [
    "ReducedMap", "DynamicESParams", "Plant", "AverageEquilibrium", "AsymptoticEquilibrium",
    "StabilityError", "linear_test_plant", "closed_loop_step", "reduced_step",
    "average_rhs", "average_field", "solve_average_equilibrium", "asymptotic_equilibrium",
    "jacobian_entries", "jacobian", "eigenvalues_closed_form", "characteristic_coefficients",
    "eigenvalues_numeric", "spectral_radius", "stability_threshold", "amplitude_ceiling",
    "DynamicRun", "run_dynamic_experiment", "run_reduced_batch", "reduced_model",
]


class StabilityError(RuntimeError):
    """No stable step size exists (degenerate or destabilising Jacobian)."""


class ReducedMap:
    """The shifted output equilibrium map varsigma and its derivatives.

    Use :meth:`polynomial` for an exact polynomial (analytic derivatives) or
    pass a plain function; derivatives are then central differences with
    step ``fd_step`` (when ``None``, 1e-3 times the probe amplitude of
    whatever analysis calls it, else 1e-4).
    """

    def __init__(self, func, derivative=None, second=None, third=None, fd_step=None,
                 coefficients=None):
        self.func = func
        self._derivative = derivative
        self._second = second
        self._third = third
        self.fd_step = fd_step
        self.coefficients = coefficients

    @classmethod
    def polynomial(cls, coefficients):
        """varsigma(z) = sum_i c_i z^i with ``coefficients`` in increasing degree."""
        p = np.polynomial.Polynomial(np.asarray(coefficients, dtype=float))
        dp, d2p, d3p = p.deriv(1), p.deriv(2), p.deriv(3)
        return cls(p, dp, float(d2p(0.0)), float(d3p(0.0)), coefficients=list(p.coef))

    def __call__(self, z):
        return self.func(z)

    def _h(self, step=None):
        if step is not None:
            return step
        return self.fd_step if self.fd_step is not None else 1e-4

    def derivative(self, z, step=None):
        if self._derivative is not None:
            return self._derivative(z)
        h = self._h(step)
        return (self.func(np.asarray(z) + h) - self.func(np.asarray(z) - h)) / (2 * h)

    def second(self, step=None):
        if self._second is not None:
            return self._second
        h, f = self._h(step), self.func
        return float((f(h) - 2 * f(0.0) + f(-h)) / h**2)

    def third(self, step=None):
        if self._third is not None:
            return self._third
        h, f = self._h(step), self.func
        return float((f(2 * h) - 2 * f(h) + 2 * f(-h) - f(-2 * h)) / (2 * h**3))

    def check(self, tol=1e-8):
        """Raise ValueError unless varsigma(0) = 0 and varsigma'(0) = 0 within ``tol``."""
        v0 = float(self.func(0.0))
        d0 = float(self.derivative(0.0))
        if abs(v0) > tol or abs(d0) > tol:
            raise ValueError(f"varsigma(0)={v0:.3e}, varsigma'(0)={d0:.3e}; both must vanish")
        return True

    def mirrored(self):
        """z -> varsigma(-z)."""
        if self.coefficients is not None:
            return ReducedMap.polynomial([c * (-1) ** i for i, c in enumerate(self.coefficients)])
        f, d = self.func, self.derivative
        return ReducedMap(lambda z: f(-np.asarray(z)), lambda z: -d(-np.asarray(z)),
                          fd_step=self.fd_step)


@dataclass(frozen=True)
class DynamicESParams:
    """Design parameters of the dynamic scheme.

    ``gain`` multiplies xi in the parameter update, ``w1``/``w2`` are the
    demodulator and washout filter gains, ``noise`` is ``(sigma1, bound)``
    or ``None``.
    """

    gain: float
    w1: float
    w2: float
    amplitude: float
    epsilon: float
    probe_sigma: float
    noise: Optional[tuple] = None

    def __post_init__(self):
        for name in ("gain", "w1", "w2", "amplitude", "probe_sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")

    def with_epsilon(self, epsilon):
        return DynamicESParams(self.gain, self.w1, self.w2, self.amplitude, float(epsilon),
                               self.probe_sigma, self.noise)

    @property
    def noise_bound(self):
        return 0.0 if self.noise is None else float(self.noise[1])


@dataclass(frozen=True)
class Plant:
    """x+ = dynamics(x, u), output h(x), control law u = control(x, theta).

    ``equilibrium`` is the map l with dynamics(l(theta), control(l(theta), theta)) = l(theta).
    All callables should broadcast over leading axes of ``x`` (shape (..., n)).
    """

    dimension: int
    dynamics: Callable
    output: Callable
    control: Callable
    equilibrium: Callable

    def check_equilibrium_map(self, thetas, tol=1e-10):
        """Largest fixed-point defect of l on ``thetas``; raises if above ``tol``."""
        worst = 0.0
        for th in np.asarray(thetas, dtype=float):
            x = np.asarray(self.equilibrium(th), dtype=float)
            gap = np.max(np.abs(self.dynamics(x, self.control(x, th)) - x))
            worst = max(worst, float(gap))
        if worst > tol:
            raise ValueError(f"equilibrium map defect {worst:.3e} exceeds {tol:g}")
        return worst

    def reduced_map(self, theta_star):
        y_star = float(np.asarray(self.output(self.equilibrium(theta_star))))

        def func(z):
            z = np.asarray(z, dtype=float)
            out = np.vectorize(lambda zz: float(self.output(self.equilibrium(theta_star + zz))))(z)
            return out - y_star

        return ReducedMap(func)


def linear_test_plant(varsigma, theta_star=0.0, y_star=0.0, pole=0.5):
    """Scalar plant x+ = pole x + (1 - pole) u with u = theta, so l(theta) = theta.

    The output is h(x) = y_star + varsigma(x - theta_star), which makes the
    shifted equilibrium map exactly ``varsigma``.
    """
    if not 0 <= pole < 1:
        raise ValueError("pole must lie in [0, 1)")

    return Plant(
        dimension=1,
        dynamics=lambda x, u: pole * np.asarray(x) + (1 - pole) * np.asarray(u)[..., None],
        output=lambda x: y_star + varsigma(np.asarray(x)[..., 0] - theta_star),
        control=lambda x, theta: np.broadcast_to(theta, np.shape(x)[:-1]),
        equilibrium=lambda theta: np.asarray(theta, dtype=float)[..., None],
    )


def closed_loop_step(plant, params, state, v, w=0.0, measure_after_update=False):
    """One step of plant plus estimator; ``state`` is (x, theta_hat, xi, zeta).

    By default the output fed to the filters is h(x_k), the plant state
    before it receives the probed input.  With ``measure_after_update`` the
    output is read after the plant update, h(x_{k+1}), which is what a
    sampled implementation with a settling plant observes; only then does
    the measurement correlate with the current probe.
    """
    x, th, xi, zeta = state
    s = np.sin(v)
    eps, a = params.epsilon, params.amplitude
    x_new = plant.dynamics(x, plant.control(x, th + a * s))
    y = plant.output(x_new if measure_after_update else x) + w
    th_new = th + eps * params.gain * xi
    xi_new = xi - eps * params.w1 * xi + eps * params.w1 * (y - zeta) * s
    zeta_new = zeta - eps * params.w2 * zeta + eps * params.w2 * y
    return x_new, th_new, xi_new, zeta_new


def reduced_step(rmap, params, state, v, w=0.0):
    """One step of the reduced system; ``state`` is (theta_tilde, xi, zeta_tilde)."""
    th, xi, zeta = state
    s = np.sin(v)
    eps, a = params.epsilon, params.amplitude
    q = rmap(th + a * s)
    return (th + eps * params.gain * xi,
            xi - eps * params.w1 * xi + eps * params.w1 * (q - zeta + w) * s,
            zeta - eps * params.w2 * zeta + eps * params.w2 * (q + w))


def reduced_model(rmap, params):
    """The reduced system as a :class:`SystemModel` with perturbation y = (v, W)."""

    def field(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if y.ndim == x.ndim:
            v = y[..., 0]
            w = y[..., 1] if y.shape[-1] > 1 else 0.0
        else:
            v, w = y, 0.0
        s = np.sin(v)
        th, xi, zeta = x[..., 0], x[..., 1], x[..., 2]
        q = rmap(th + params.amplitude * s)
        return np.stack([params.gain * xi,
                         -params.w1 * xi + params.w1 * (q - zeta + w) * s,
                         -params.w2 * zeta + params.w2 * (q + w)], axis=-1)

    return SystemModel(3, field, params.epsilon, name="reduced-es")


def _tol(tol):
    return DEFAULTS["quadrature_tol"] if tol is None else tol


def _sin_integral(fn, theta, params, order=None, tol=None):
    a = params.amplitude
    return gaussian_expectation(lambda y: fn(theta + a * np.sin(y)) * np.sin(y),
                                params.probe_sigma, order=order, tol=_tol(tol))


def _plain_integral(fn, theta, params, order=None, tol=None):
    a = params.amplitude
    return gaussian_expectation(lambda y: fn(theta + a * np.sin(y)),
                                params.probe_sigma, order=order, tol=_tol(tol))


def _fd(rmap, params):
    return rmap.fd_step if rmap.fd_step is not None else 1e-3 * params.amplitude


def _deriv(rmap, params):
    h = _fd(rmap, params)
    return lambda z: rmap.derivative(z, step=h)


def average_rhs(rmap, params, state, order=None):
    """Averaged increment of the reduced system divided by eps.

    Measurement noise is mean zero and independent of the probe, so it
    drops out of the average entirely.
    """
    th, xi, zeta = (float(c) for c in state)
    i1 = _sin_integral(rmap, th, params, order)
    i0 = _plain_integral(rmap, th, params, order)
    return np.array([params.gain * xi,
                     -params.w1 * xi + params.w1 * i1,
                     -params.w2 * zeta + params.w2 * i0])


def average_field(rmap, params, order=None):
    return AverageField.closed_form(lambda x: average_rhs(rmap, params, x, order))


@dataclass(frozen=True)
class AverageEquilibrium:
    theta: float
    xi: float
    zeta: float
    b1: float
    b2: float
    residual: float

    def as_array(self):
        return np.array([self.theta, self.xi, self.zeta])


@dataclass(frozen=True)
class AsymptoticEquilibrium:
    b1: float
    b2: float
    theta: float
    zeta: float


def asymptotic_equilibrium(rmap, params):
    """Small-amplitude expansion theta ~ b2 a^2, zeta ~ varsigma''(0)(1 - e^{-2 sigma^2}) a^2 / 4."""
    h = _fd(rmap, params)
    d2, d3 = rmap.second(step=h), rmap.third(step=h)
    if d2 == 0:
        raise ValueError("varsigma''(0) must be nonzero")
    sig2 = params.probe_sigma ** 2
    e2, e8 = math.exp(-2 * sig2), math.exp(-8 * sig2)
    b2 = -d3 * (3 - 4 * e2 + e8) / (24 * d2 * (1 - e2))
    a = params.amplitude
    return AsymptoticEquilibrium(b1=0.0, b2=b2, theta=b2 * a * a,
                                 zeta=d2 * (1 - e2) * a * a / 4)


def solve_average_equilibrium(rmap, params, theta0=0.0, residual_tol=1e-10, max_iter=100):
    """Equilibrium of the averaged reduced system.

    Damped Newton from ``theta0`` on E[varsigma(theta + a sin v) sin v] = 0,
    then zeta = E[varsigma(theta + a sin v)] and xi = 0.  Newton runs to
    roundoff, well past ``residual_tol``, so small-amplitude expansions can
    be checked against it.

    Raises
    ------
    ConvergenceError
        If Newton fails within ``max_iter`` iterations or the final
        residual exceeds ``residual_tol``.
    """
    d1 = _deriv(rmap, params)
    g = lambda th: _sin_integral(rmap, th, params)
    dg = lambda th: _sin_integral(d1, th, params)
    theta = newton_scalar(g, dg, theta0, tol=0.0, max_iter=max_iter)
    resid = abs(g(theta))
    if resid > residual_tol:
        raise ConvergenceError(f"equilibrium residual {resid:.3e} above {residual_tol:g}")
    zeta = _plain_integral(rmap, theta, params)
    try:
        asym = asymptotic_equilibrium(rmap, params)
        b1, b2 = asym.b1, asym.b2
    except ValueError:
        # expansion undefined when varsigma''(0) = 0; the exact root still is
        b1, b2 = math.nan, math.nan
    return AverageEquilibrium(theta=float(theta), xi=0.0, zeta=float(zeta),
                              b1=b1, b2=b2, residual=float(resid))


def jacobian_entries(rmap, params, equilibrium):
    """(J21, J31): w1 E[varsigma'(theta_e + a sin v) sin v] and w2 E[varsigma'(theta_e + a sin v)]."""
    d1 = _deriv(rmap, params)
    th = equilibrium.theta
    return (params.w1 * _sin_integral(d1, th, params),
            params.w2 * _plain_integral(d1, th, params))


def jacobian(rmap, params, equilibrium):
    """Jacobian of the averaged reduced iteration at ``equilibrium``."""
    j21, j31 = jacobian_entries(rmap, params, equilibrium)
    eps = params.epsilon
    return np.array([[1.0, eps * params.gain, 0.0],
                     [eps * j21, 1.0 - eps * params.w1, 0.0],
                     [eps * j31, 0.0, 1.0 - eps * params.w2]])


def eigenvalues_closed_form(params, j21):
    """Eigenvalues from the factored characteristic polynomial.

    Returns complex (1 - eps w2, 1 + Pi_1, 1 + Pi_2) with
    Pi_{1,2} = eps (-w1 +- sqrt(w1^2 + 4 gain J21)) / 2.
    """
    eps, w1 = params.epsilon, params.w1
    root = cmath.sqrt(w1 * w1 + 4 * params.gain * j21)
    return np.array([1 - eps * params.w2,
                     1 + eps * (-w1 + root) / 2,
                     1 + eps * (-w1 - root) / 2], dtype=complex)


def characteristic_coefficients(matrix):
    """Coefficients of det(lambda I - J) for a 3x3 J, from trace, principal minors and det."""
    j = np.asarray(matrix, dtype=float)
    tr = np.trace(j)
    minors = (j[0, 0] * j[1, 1] - j[0, 1] * j[1, 0]
              + j[0, 0] * j[2, 2] - j[0, 2] * j[2, 0]
              + j[1, 1] * j[2, 2] - j[1, 2] * j[2, 1])
    return np.array([1.0, -tr, minors, -np.linalg.det(j)])


def eigenvalues_numeric(matrix):
    """Companion-matrix roots of the characteristic cubic of ``matrix``."""
    return cubic_roots(characteristic_coefficients(matrix))


def spectral_radius(params, j21):
    return float(np.max(np.abs(eigenvalues_closed_form(params, j21))))


def stability_threshold(rmap, params, scan_points=2000, tol=1e-10, equilibrium=None):
    """Step size below which all three Jacobian eigenvalues lie strictly in the unit disc.

    The equilibrium and J21 do not depend on eps, so the spectral radius is an
    explicit function of eps.  A scan of (0, 2/w2] brackets the first crossing
    of radius 1 (at eps = 2/w2 the washout eigenvalue reaches -1), which is
    then refined by bisection.  ``params.epsilon`` is ignored.

    Raises
    ------
    StabilityError
        If J21 >= 0: the slow eigenvalue sits on or outside the unit circle
        for every eps, typically because a is too large or varsigma''(0) >= 0.
    """
    eq = solve_average_equilibrium(rmap, params) if equilibrium is None else equilibrium
    j21, _ = jacobian_entries(rmap, params, eq)
    if not j21 < 0:
        raise StabilityError(f"J21 = {j21:.3e} >= 0: no step size gives a stable average system")
    radius = lambda e: spectral_radius(params.with_epsilon(e), j21)
    hi_cap = 2.0 / params.w2
    grid = np.linspace(0, hi_cap, scan_points + 1)[1:]
    lo = 0.0
    hi = hi_cap
    for e in grid[:-1]:
        if radius(e) >= 1.0:
            hi = float(e)
            break
        lo = float(e)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if radius(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    threshold = 0.5 * (lo + hi)
    for e in np.linspace(0, threshold, 11)[1:-1]:
        if not radius(e) < 1.0:
            raise StabilityError(f"unstable step {e:.6g} below computed threshold")
    return threshold


def amplitude_ceiling(rmap, params, amplitudes):
    """Largest amplitude in ``amplitudes`` (scanned in increasing order) before J21 >= 0 or Newton fails."""
    best = None
    for a in sorted(float(x) for x in amplitudes):
        p = DynamicESParams(params.gain, params.w1, params.w2, a, params.epsilon,
                            params.probe_sigma, params.noise)
        try:
            eq = solve_average_equilibrium(rmap, p)
            j21, _ = jacobian_entries(rmap, p, eq)
        except ConvergenceError:
            break
        if not j21 < 0:
            break
        best = a
    return best


@dataclass
class DynamicRun:
    reduced: Trajectory
    closed_loop: Optional[np.ndarray]
    summary: dict


def run_reduced_batch(rmap, params, steps, seeds, initial=(0.0, 0.0, 0.0)):
    """Terminal reduced states for several seeds, shape (R, 3); blown-up rows are NaN."""
    draws = [probe_noise_draws(params, s, steps) for s in seeds]
    v = np.stack([d[0] for d in draws], axis=1)
    w = np.stack([d[1] for d in draws], axis=1)
    r = len(seeds)
    state = tuple(np.full(r, float(c)) for c in initial)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            state = reduced_step(rmap, params, state, v[k], w[k])
    out = np.column_stack(state)
    out[~np.all(np.abs(out) <= 1e12, axis=1)] = np.nan
    return out


def run_dynamic_experiment(system, params, steps, seed=0, initial=(0.0, 0.0, 0.0),
                           theta_star=0.0, measure_after_update=False, tail_fraction=0.5):
    """Simulate the reduced system, or the full closed loop when ``system`` is a :class:`Plant`.

    ``initial`` is (theta_tilde, xi, zeta_tilde) in error coordinates.  For a
    plant the reduced system is run alongside on the same probe and noise
    streams, and the plant starts at l(theta* + theta_tilde_0).  The summary
    reports distance to the average equilibrium and the output residual
    |y0 - y*| next to its reference a^2 |varsigma''(0)| / 2.

    Raises
    ------
    ExplosionError
        If a state becomes non-finite or exceeds 1e12.
    """
    plant = system if isinstance(system, Plant) else None
    rmap = plant.reduced_map(theta_star) if plant is not None else system
    v, w = probe_noise_draws(params, seed, steps)
    eq = solve_average_equilibrium(rmap, params)
    red = np.empty((steps + 1, 3))
    red[0] = initial
    state = tuple(float(c) for c in initial)
    y0 = np.empty(steps)
    for k in range(steps):
        y0[k] = float(rmap(state[0] + params.amplitude * math.sin(v[k])))
        state = reduced_step(rmap, params, state, v[k], w[k])
        red[k + 1] = state
        if not np.all(np.abs(red[k + 1]) <= 1e12):
            raise ExplosionError(f"reduced state blew up at step {k + 1}", index=k + 1)
    cl = None
    if plant is not None:
        y_star = float(np.asarray(plant.output(plant.equilibrium(theta_star))))
        x = np.asarray(plant.equilibrium(theta_star + initial[0]), dtype=float)
        cstate = (x, theta_star + initial[0], initial[1], y_star + initial[2])
        cl = np.empty((steps + 1, 3 + plant.dimension))
        cl[0] = [cstate[1] - theta_star, cstate[2], cstate[3] - y_star, *x]
        for k in range(steps):
            cstate = closed_loop_step(plant, params, cstate, v[k], w[k], measure_after_update)
            cl[k + 1] = [cstate[1] - theta_star, cstate[2], cstate[3] - y_star,
                         *np.atleast_1d(cstate[0])]
            if not np.all(np.abs(cl[k + 1]) <= 1e12):
                raise ExplosionError(f"closed-loop state blew up at step {k + 1}", index=k + 1)
    dist = np.linalg.norm(red - eq.as_array(), axis=1)
    tail = slice(int(steps * (1 - tail_fraction)), steps)
    h = _fd(rmap, params)
    summary = {
        "seed": int(seed),
        "steps": int(steps),
        "equilibrium": {"theta": eq.theta, "xi": eq.xi, "zeta": eq.zeta},
        "b2": eq.b2,
        "final_distance": float(dist[-1]),
        "tail_mean_distance": float(dist[tail].mean()) if steps else 0.0,
        "final_theta_error": float(red[-1, 0] - eq.theta),
        "output_residual_tail_max": float(np.max(np.abs(y0[tail]))) if steps else 0.0,
        "probe_term": params.amplitude ** 2 * abs(rmap.second(step=h)) / 2,
        "noise_bound": params.noise_bound,
    }
    if cl is not None:
        summary["closed_loop_tail_theta_gap"] = float(np.max(np.abs(cl[tail, 0] - red[tail, 0])))
    return DynamicRun(Trajectory(red, params.epsilon), cl, summary)
