"""Stochastic extremum seeking on a quadratic static map.

The estimate is updated by x_hat <- x_hat - eps sin(v) y with
y = phi(x_hat + a sin(v)) + W, where v is i.i.d. N(0, sigma^2) and W is
bounded measurement noise.  In error coordinates x_tilde = x_hat - x* the
averaged dynamics are linear with multiplier
1 - eps a phi'' (1 - exp(-2 sigma^2)) / 2.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .averaging import AverageField, SystemModel, Trajectory
from .metrics import AveragingExperiment, EnvelopeSpec
from .numerics import ExplosionError
from .processes import IIDGaussian, JointProcess, TruncatedGaussian, gaussian_sine_moment

__all__ = [
    "StaticMap", "ESStaticParams", "StaticRun", "es_static_step", "error_system_step",
    "average_error_factor", "epsilon_star", "error_model", "average_error_field",
    "static_error_experiment", "static_envelope", "static_streams", "probe_noise_draws",
    "run_static_experiment", "run_static_batch",
]


@dataclass(frozen=True)
class StaticMap:
    """phi(x) = phi* + (phi''/2) (x - x*)^2."""

    optimum_value: float
    curvature: float
    optimizer: float

    def __post_init__(self):
        if self.curvature == 0:
            raise ValueError("curvature must be nonzero")

    def __call__(self, x):
        return self.optimum_value + 0.5 * self.curvature * (np.asarray(x) - self.optimizer) ** 2


@dataclass(frozen=True)
class ESStaticParams:
    """Probe amplitude ``a``, step ``epsilon``, probe std ``probe_sigma``.

    ``noise`` is ``(sigma1, bound)`` for clipped Gaussian measurement noise
    or ``None`` for noise-free measurements.
    """

    amplitude: float
    epsilon: float
    probe_sigma: float
    noise: Optional[tuple] = None
    initial_estimate: float = 0.0

    def __post_init__(self):
        for name in ("amplitude", "epsilon", "probe_sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.noise is not None:
            s1, m = self.noise
            if s1 < 0 or m < 0:
                raise ValueError("noise sigma1 and bound must be nonnegative")

    @property
    def noise_bound(self):
        return 0.0 if self.noise is None else float(self.noise[1])


def _error_increment(x, v, w, phi_star, curv, a):
    s = np.sin(v)
    return -s * (phi_star + 0.5 * curv * (x + a * s) ** 2 + w)


def es_static_step(smap, params, x_hat, v, w=0.0):
    """One update of the estimate; returns x_hat_{k+1}."""
    s = np.sin(v)
    y = smap(x_hat + params.amplitude * s) + w
    return x_hat - params.epsilon * s * y


def error_system_step(smap, params, x_tilde, v, w=0.0):
    """One step of the estimation-error iteration."""
    return x_tilde + params.epsilon * _error_increment(
        x_tilde, v, w, smap.optimum_value, smap.curvature, params.amplitude)


def average_error_factor(smap, params):
    """Per-step multiplier of the averaged error iteration."""
    m2 = 1.0 - math.exp(-2 * params.probe_sigma ** 2)
    return 1.0 - params.epsilon * params.amplitude * smap.curvature * m2 / 2


def epsilon_star(smap, params):
    """Largest step for which the averaged error iteration is a contraction.

    Below it the multiplier lies in (-1, 1).  Requires a minimum (phi'' > 0).
    """
    if not smap.curvature > 0:
        raise ValueError("epsilon_star needs positive curvature")
    return 2.0 / (params.amplitude * smap.curvature * (1.0 - math.exp(-2 * params.probe_sigma ** 2)))


def error_model(smap, params):
    """The error iteration as a :class:`SystemModel` with perturbation y = (v, W).

    ``y`` may also be a bare probe value (noise-free case).
    """
    phi_star, curv, a = smap.optimum_value, smap.curvature, params.amplitude

    def field(x, y):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        if y.ndim == x.ndim:
            v = y[..., 0]
            w = y[..., 1] if y.shape[-1] > 1 else 0.0
        else:
            v, w = y, 0.0
        inc = _error_increment(x[..., 0], v, w, phi_star, curv, a)
        return np.asarray(inc)[..., None]

    return SystemModel(1, field, params.epsilon, name="static-error")


def average_error_field(smap, params):
    """Closed-form averaged error field x -> -(a phi'' (1 - e^{-2 sigma^2}) / 2) x."""
    gain = params.amplitude * smap.curvature * 2 * gaussian_sine_moment(params.probe_sigma, 2) / 2
    return AverageField.closed_form(lambda x: -gain * np.asarray(x, dtype=float))


def static_streams(params, seed):
    """Independent probe and noise processes for master ``seed``."""
    probe = IIDGaussian(params.probe_sigma, seed=seed, keys=(0,))
    if params.noise is None:
        return JointProcess(probe)
    s1, m = params.noise
    return JointProcess(probe, TruncatedGaussian(s1, m, seed=seed, keys=(1,)))


def static_error_experiment(smap, params, x0, seed=0):
    """Error iteration vs. its closed-form average, replications on sub-streams of ``seed``."""
    return AveragingExperiment(error_model(smap, params), average_error_field(smap, params),
                               static_streams(params, seed), x0)


def static_envelope(smap, params, delta):
    """Envelope c = 1, gamma = averaged multiplier, residual ``delta``."""
    return EnvelopeSpec(c=1.0, gamma=average_error_factor(smap, params), delta=delta)


@dataclass
class StaticRun:
    x_hat: Trajectory
    y: np.ndarray
    summary: dict


def probe_noise_draws(params, seed, steps):
    """``steps`` probe values and noise values from the sub-streams of ``seed``.

    Works for any params object with ``probe_sigma`` and ``noise`` attributes.
    """
    streams = static_streams(params, seed)
    v = streams.components[0].sample(steps)
    w = streams.components[1].sample(steps) if len(streams) > 1 else np.zeros(steps)
    return v, w


def run_static_batch(smap, params, steps, seeds):
    """Estimates for several seeds at once: returns (x_hat, y) of shapes (K+1, R), (K, R).

    Seed ``s`` uses the same streams as ``run_static_experiment(..., seed=s)``.
    Replications that blow up are set to NaN from that step on.
    """
    draws = [probe_noise_draws(params, s, steps) for s in seeds]
    v = np.stack([d[0] for d in draws], axis=1)
    w = np.stack([d[1] for d in draws], axis=1)
    x = np.full(len(seeds), float(params.initial_estimate))
    xs = np.empty((steps + 1, len(seeds)))
    ys = np.empty((steps, len(seeds)))
    xs[0] = x
    eps, a = params.epsilon, params.amplitude
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            s = np.sin(v[k])
            y = smap(x + a * s) + w[k]
            x = x - eps * s * y
            x[~(np.abs(x) <= 1e12)] = np.nan
            xs[k + 1] = x
            ys[k] = y
    return xs, ys


def _time_to_band(x, center, half_width):
    """First k after which x stays within the band to the end; None if it ends outside."""
    inside = np.abs(x - center) <= half_width
    if not inside[-1]:
        return None
    outside = np.nonzero(~inside)[0]
    return int(outside[-1] + 1) if outside.size else 0


def run_static_experiment(smap, params, steps, seed=0, band=0.25, tail_fraction=0.5):
    """Simulate the scheme for ``steps`` steps with probe/noise streams from ``seed``.

    The summary holds the final estimate, the step after which the estimate
    stays within ``band`` of x*, and the output-residual diagnostic: the tail
    maximum of |y - phi(x*)| next to its two reference components
    a^2 |phi''| / 2 and the noise bound M.

    Raises
    ------
    ExplosionError
        If the estimate becomes non-finite or exceeds 1e12 in magnitude.
    """
    steps = int(steps)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    xs, ys = run_static_batch(smap, params, steps, [seed])
    xs, ys = xs[:, 0], ys[:, 0]
    if not np.all(np.isfinite(xs)):
        k = int(np.nonzero(~np.isfinite(xs))[0][0])
        raise ExplosionError(f"estimate blew up at step {k}", index=k)
    tail = slice(int(steps * (1 - tail_fraction)), steps)
    resid = np.abs(ys[tail] - smap.optimum_value)
    summary = {
        "seed": int(seed),
        "steps": steps,
        "final_estimate": float(xs[-1]),
        "final_error": float(xs[-1] - smap.optimizer),
        "band_half_width": band,
        "time_to_band": _time_to_band(xs, smap.optimizer, band),
        "average_factor": average_error_factor(smap, params),
        "epsilon_star": epsilon_star(smap, params) if smap.curvature > 0 else None,
        "output_residual_tail_max": float(resid.max()) if resid.size else 0.0,
        "output_residual_tail_mean": float(resid.mean()) if resid.size else 0.0,
        "probe_term": params.amplitude ** 2 * abs(smap.curvature) / 2,
        "noise_bound": params.noise_bound,
    }
    return StaticRun(Trajectory(xs, params.epsilon), ys, summary)
