"""Perturbed iteration X_{k+1} = X_k + eps f(X_k, Y_{k+1}) and its average systems.

Vector fields follow one broadcasting convention: ``field(x, y)`` takes
``x`` of shape (..., n) and ``y`` of shape (...) for a scalar perturbation
or (..., m) for a :class:`~stochavg.processes.JointProcess`, and returns
shape (..., n).  The same field therefore runs a single trajectory or a
batch of replications stacked along a leading axis.
"""

import csv
import math
from dataclasses import dataclass, field as dc_field, replace
from typing import Callable, Optional

import numpy as np

from .numerics import DEFAULTS, ExplosionError, rk4_integrate

__all__ = [
    "SystemModel", "AverageField", "Trajectory", "GridTrajectory",
    "iterate_original", "iterate_discrete_average", "integrate_continuous_average",
    "estimate_average_field", "embed_time", "iterate_batch", "ExplosionError",
]


@dataclass(frozen=True)
class SystemModel:
    """The original iteration: state dimension, field f(x, y) and step eps."""

    dimension: int
    field: Callable
    epsilon: float
    name: str = "custom"

    def __post_init__(self):
        if int(self.dimension) < 1:
            raise ValueError("dimension must be >= 1")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    def with_epsilon(self, epsilon):
        return replace(self, epsilon=float(epsilon))

    def increment(self, x, y):
        out = np.asarray(self.field(x, y), dtype=float)
        if out.shape[-1:] != (self.dimension,):
            raise ValueError(
                f"field returned shape {out.shape}, expected trailing dimension {self.dimension}")
        return out


class AverageField:
    """The averaged field x -> f_bar(x).

    Build with :meth:`closed_form` when the integral is known, or with
    :meth:`empirical` to use a Birkhoff average over one long stream.  The
    empirical stream is drawn once and cached, so repeated evaluations are
    deterministic for a given seed and sample count.
    """

    def __init__(self, fn, kind, samples=None, model=None):
        self._fn = fn
        self.kind = kind
        self.model = model
        self._samples = samples

    @classmethod
    def closed_form(cls, fn):
        return cls(fn, "closed-form")

    @classmethod
    def empirical(cls, model, perturbation, n_avg=100_000):
        """f_bar(x) ~ (1/(N+1)) sum_{k=0}^{N} f(x, Y_{k+1}) on a fresh copy of ``perturbation``."""
        n_avg = int(n_avg)
        if n_avg < 1:
            raise ValueError("n_avg must be >= 1")
        ys = perturbation.spawn().sample(n_avg + 1)

        def fn(x):
            return _birkhoff(model, ys, x)

        return cls(fn, "empirical", samples=ys, model=model)

    def __call__(self, x):
        return np.asarray(self._fn(np.asarray(x, dtype=float)), dtype=float)


def _birkhoff(model, ys, x, chunk=65_536):
    x = np.asarray(x, dtype=float)
    total = np.zeros(x.shape)
    for start in range(0, len(ys), chunk):
        yb = ys[start:start + chunk]
        # broadcast: x (..., n) against samples on a new leading axis
        vals = model.increment(np.broadcast_to(x, (len(yb),) + x.shape),
                               yb.reshape((len(yb),) + (1,) * (x.ndim - 1) + yb.shape[1:]))
        total += vals.sum(axis=0)
    return total / len(ys)


@dataclass
class Trajectory:
    """States X_0..X_K of an iteration run with step ``epsilon``; t_k = eps k."""

    states: np.ndarray
    epsilon: float
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        self.states = s

    def __len__(self):
        return len(self.states)

    @property
    def times(self):
        return self.epsilon * np.arange(len(self.states))

    @property
    def dimension(self):
        return self.states.shape[1]

    def to_csv(self, path):
        """Write ``k,t,x_0,...,x_{n-1}`` rows at 17 significant digits."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "t"] + [f"x_{i}" for i in range(self.dimension)])
            for k, (t, row) in enumerate(zip(self.times, self.states)):
                w.writerow([k, _fmt(t)] + [_fmt(v) for v in row])

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        k, t, states = data[:, 0], data[:, 1], data[:, 2:]
        eps = float(t[1] / k[1]) if len(k) > 1 else 1.0
        return cls(states, eps)


@dataclass
class GridTrajectory:
    """States of the continuous average system on an explicit time grid."""

    times: np.ndarray
    states: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "t"] + [f"x_{i}" for i in range(self.states.shape[1])])
            for k, (t, row) in enumerate(zip(self.times, self.states)):
                w.writerow([k, _fmt(t)] + [_fmt(v) for v in row])


def _fmt(v):
    return format(float(v), ".17g")


def _check_state(x, k, threshold):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > threshold:
        raise ExplosionError(f"state blew up at step {k}", index=k)


def _as_state(x0, n):
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    if x.shape != (n,):
        raise ValueError(f"x0 must have dimension {n}, got shape {x.shape}")
    return x


def iterate_original(model, perturbation, x0, steps, threshold=None):
    """Run X_{k+1} = X_k + eps f(X_k, Y_{k+1}) for ``steps`` steps.

    ``perturbation`` is consumed: K values are drawn from it.

    Raises
    ------
    ExplosionError
        At the first non-finite state or one exceeding the blow-up threshold.
    """
    threshold = DEFAULTS["blowup_threshold"] if threshold is None else threshold
    steps = int(steps)
    if steps < 0:
        raise ValueError("steps must be >= 0")
    x = _as_state(x0, model.dimension)
    ys = perturbation.sample(steps) if steps else np.empty(0)
    states = np.empty((steps + 1, model.dimension))
    states[0] = x
    eps = model.epsilon
    for k in range(steps):
        x = x + eps * model.increment(x, ys[k])
        _check_state(x, k + 1, threshold)
        states[k + 1] = x
    return Trajectory(states, eps)


def iterate_discrete_average(avg, epsilon, x0, steps, threshold=None):
    """Run the discrete average system Xd_{k+1} = Xd_k + eps f_bar(Xd_k)."""
    threshold = DEFAULTS["blowup_threshold"] if threshold is None else threshold
    steps = int(steps)
    if steps < 0:
        raise ValueError("steps must be >= 0")
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    states = np.empty((steps + 1, x.size))
    states[0] = x
    for k in range(steps):
        x = x + epsilon * avg(x)
        _check_state(x, k + 1, threshold)
        states[k + 1] = x
    return Trajectory(states, float(epsilon))


def integrate_continuous_average(avg, x0, horizon, step=1e-3):
    """Integrate dXc/dt = f_bar(Xc) with fixed-step RK4 on [0, horizon].

    An :class:`ExplosionError` means the solution left every bounded set,
    i.e. it does not exist on the whole horizon.
    """
    times, states = rk4_integrate(avg, x0, horizon, step)
    return GridTrajectory(times, states)


def estimate_average_field(model, perturbation, x, n_avg=100_000):
    """Birkhoff estimate of f_bar(x) from N+1 samples of a fresh copy of ``perturbation``."""
    n_avg = int(n_avg)
    if n_avg < 1:
        raise ValueError("n_avg must be >= 1")
    ys = perturbation.spawn().sample(n_avg + 1)
    return _birkhoff(model, ys, np.asarray(x, dtype=float))


def embed_time(traj, t):
    """Piecewise-constant embedding X(t) = X_{m(t)}, m(t) = max{k : eps k <= t}."""
    eps = traj.epsilon
    k_max = len(traj) - 1
    if t < 0 or t > eps * k_max * (1 + 1e-12) + 1e-300:
        raise ValueError(f"t={t} outside [0, {eps * k_max}]")
    k = int(math.floor(t / eps))
    while k + 1 <= k_max and eps * (k + 1) <= t:
        k += 1
    while k > 0 and eps * k > t:
        k -= 1
    return traj.states[min(k, k_max)]


def iterate_batch(model, x0, ys, threshold=None):
    """Iterate R replications at once.

    ``x0`` has shape (R, n) (or (n,), broadcast), ``ys`` has shape
    (K, R) or (K, R, m).  Returns ``(states, blown)``: states of shape
    (K+1, R, n) and a boolean mask of replications that exploded.  Rows that
    explode are frozen at NaN from the offending step onward.
    """
    threshold = DEFAULTS["blowup_threshold"] if threshold is None else threshold
    ys = np.asarray(ys, dtype=float)
    steps, reps = ys.shape[:2]
    x = np.broadcast_to(np.asarray(x0, dtype=float), (reps, model.dimension)).copy()
    states = np.empty((steps + 1, reps, model.dimension))
    states[0] = x
    blown = np.zeros(reps, dtype=bool)
    eps = model.epsilon
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            x = x + eps * model.increment(x, ys[k])
            bad = ~np.all(np.isfinite(x), axis=1) | (np.max(np.abs(x), axis=1) > threshold)
            if bad.any():
                blown |= bad
                x[blown] = np.nan
            states[k + 1] = x
    return states, blown
