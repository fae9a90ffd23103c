"""Empirical probes of the averaging and weak-stability results.

The limits involved are almost-sure or in-probability statements as
eps -> 0 with no rates, so everything here measures finite-eps quantities
(sup-deviations, first-exit times, exceedance frequencies) that are then
checked for the right trend across an eps sweep.

Replication ``r`` of every experiment draws its perturbation from
sub-stream ``r`` of the experiment's process, whatever eps is.  Sweeps over
eps thus share random numbers, and the outcome does not depend on how
replications are split across threads.
"""

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field, replace
from typing import NamedTuple, Optional

import numpy as np

from .averaging import (AverageField, SystemModel, Trajectory, iterate_batch,
                        iterate_discrete_average)
from .numerics import ExplosionError

__all__ = [
    "NEVER", "AveragingExperiment", "DeviationReport", "EnvelopeSpec",
    "ExceedanceResult", "RateStudy", "sup_deviation", "first_exit_time",
    "exceedance_probability", "envelope_exceedance", "compute_residual",
    "averaging_rate_study", "horizon_steps", "ResidualMismatchError",
]

ENVELOPE_RTOL = 1e-12
NEVER = math.inf
"""Marker returned by :func:`first_exit_time` when no exit occurs; sorts after every index."""


class ResidualMismatchError(ValueError):
    """The replayed perturbation does not reproduce the stored trajectory."""


def horizon_steps(n_horizon, epsilon):
    """[N / eps], guarding against 10/0.1 = 99.999... style rounding."""
    q = n_horizon / epsilon
    r = round(q)
    return int(r) if abs(q - r) < 1e-9 * max(1.0, q) else int(math.floor(q))


@dataclass(frozen=True)
class EnvelopeSpec:
    """Envelope |X_k| <= c |x0| gamma^k + delta, valid for |x0| < r."""

    c: float
    gamma: float
    delta: float
    r: float = math.inf

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.c < 0:
            raise ValueError("c must be nonnegative")

    def bound(self, x0_norm, steps, rtol=ENVELOPE_RTOL):
        """Bound at k = 0..steps, widened by ``rtol`` to absorb rounding only."""
        b = self.c * x0_norm * self.gamma ** np.arange(steps + 1) + self.delta
        return b * (1 + rtol)


@dataclass
class AveragingExperiment:
    """An original system paired with its average, a start point and a noise template.

    ``perturbation`` is a process (or joint process) used only as a
    template; replication ``r`` runs on ``perturbation.spawn(r)``.
    """

    model: SystemModel
    average: AverageField
    perturbation: object
    x0: np.ndarray

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))

    @property
    def epsilon(self):
        return self.model.epsilon

    def with_epsilon(self, epsilon):
        return replace(self, model=self.model.with_epsilon(epsilon))

    def draws(self, replication, steps):
        return self.perturbation.spawn(replication).sample(steps)

    def run(self, steps, replications, threads=1):
        """Original-system states for replications 0..R-1, shape (K+1, R, n), plus blow-up mask."""
        ids = list(range(int(replications)))
        if threads > 1 and len(ids) > 1:
            chunks = [ids[i::threads] for i in range(threads)]
            with ThreadPoolExecutor(threads) as pool:
                parts = list(pool.map(lambda c: self._run_ids(c, steps), chunks))
            states = np.empty((steps + 1, len(ids), self.model.dimension))
            blown = np.zeros(len(ids), dtype=bool)
            for c, (s, b) in zip(chunks, parts):
                states[:, c] = s
                blown[c] = b
            return states, blown
        return self._run_ids(ids, steps)

    def _run_ids(self, ids, steps):
        if not ids:
            return np.empty((steps + 1, 0, self.model.dimension)), np.zeros(0, dtype=bool)
        ys = np.stack([self.draws(r, steps) for r in ids], axis=1)
        return iterate_batch(self.model, self.x0, ys)

    def average_trajectory(self, steps):
        return iterate_discrete_average(self.average, self.epsilon, self.x0, steps)


@dataclass
class DeviationReport:
    """sup_{0<=k<=[N/eps]} |X_k - Xd_k| for each seed at one eps."""

    epsilon: float
    horizon: float
    horizon_steps: int
    per_seed: list
    seeds: list
    blowups: list = dc_field(default_factory=list)

    @property
    def sup_deviation(self):
        return float(np.max(self.per_seed)) if self.per_seed else 0.0

    @property
    def median(self):
        return float(np.median(self.per_seed)) if self.per_seed else 0.0


class ExceedanceResult(NamedTuple):
    estimate: float
    std_error: float
    blowups: int


def _norms(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return np.abs(x)
    return np.linalg.norm(x, axis=-1)


def _states(t):
    return t.states if isinstance(t, Trajectory) else np.asarray(t, dtype=float)


def sup_deviation(a, b, steps):
    """max_{0<=k<=K} |a_k - b_k| (Euclidean) for two trajectories with the same eps."""
    if isinstance(a, Trajectory) and isinstance(b, Trajectory):
        if not math.isclose(a.epsilon, b.epsilon, rel_tol=1e-12, abs_tol=0.0):
            raise ValueError(f"epsilon mismatch: {a.epsilon} vs {b.epsilon}")
    sa, sb = _states(a), _states(b)
    steps = int(steps)
    if len(sa) < steps + 1 or len(sb) < steps + 1:
        raise ValueError(f"trajectories shorter than K+1 = {steps + 1}")
    if sa.ndim == 1:
        sa, sb = sa[:, None], sb[:, None]
    return float(np.max(np.linalg.norm(sa[:steps + 1] - sb[:steps + 1], axis=-1)))


def first_exit_time(x, reference=None, delta=None, envelope=None):
    """First index at which a trajectory strictly leaves its allowed region.

    Deviation variant: ``first_exit_time(x, reference, delta=d)`` returns the
    smallest k with |x_k - reference_k| > d.  Passing ``reference=None`` with
    ``x`` already a sequence of deviations works too.

    Envelope variant: ``first_exit_time(x, envelope=spec)`` returns the
    smallest k with |x_k| > c |x_0| gamma^k + delta.

    Returns :data:`NEVER` if the condition is never met on the given horizon.
    """
    sx = _states(x)
    if envelope is not None:
        norms = _norms(sx)
        bound = envelope.bound(norms[0], len(norms) - 1)
        hit = np.nonzero(~(norms <= bound))[0]
    else:
        if delta is None or not delta > 0:
            raise ValueError("delta must be positive")
        dev = _norms(sx - _states(reference)) if reference is not None else _norms(sx)
        hit = np.nonzero(~(dev <= delta))[0]
    return int(hit[0]) if hit.size else NEVER


def _batch_sup_deviation(states, reference, steps):
    diff = states[:steps + 1] - reference[:steps + 1, None, :]
    dev = np.linalg.norm(diff, axis=-1)
    with np.errstate(invalid="ignore"):
        sup = np.max(dev, axis=0)
    return np.where(np.isnan(sup), np.inf, sup)


def _binomial(hits, reps, blowups):
    p = hits / reps
    return ExceedanceResult(float(p), float(math.sqrt(p * (1 - p) / reps)), int(blowups))


def exceedance_probability(experiment, delta, steps, replications, threads=1):
    """Estimate P{ sup_{k<=K} |X_k - Xd_k| > delta } over R replications.

    Blown-up replications count as exceedances and are reported in
    ``blowups``.  The standard error is the binomial sqrt(p(1-p)/R).
    """
    if replications < 2:
        raise ValueError("need at least 2 replications")
    if not delta > 0:
        raise ValueError("delta must be positive")
    sup = _sweep_sup(experiment, steps, replications, threads)
    hits = int(np.sum(~(sup <= delta)))
    return _binomial(hits, replications, int(np.sum(np.isinf(sup))))


def _sweep_sup(experiment, steps, replications, threads=1):
    states, _ = experiment.run(steps, replications, threads)
    try:
        ref = experiment.average_trajectory(steps).states
    except ExplosionError:
        ref = np.full((steps + 1, experiment.model.dimension), np.nan)
    return _batch_sup_deviation(states, ref, steps)


def envelope_exceedance(experiment, envelope, steps, replications, threads=1):
    """Estimate P{ exists k <= K : |X_k| > c |x0| gamma^k + delta }."""
    x0n = float(np.linalg.norm(experiment.x0))
    if not x0n < envelope.r:
        raise ValueError(f"|x0| = {x0n} is not inside the envelope radius {envelope.r}")
    if replications < 1:
        raise ValueError("need at least 1 replication")
    states, blown = experiment.run(steps, replications, threads)
    norms = np.linalg.norm(states, axis=-1)
    bound = envelope.bound(x0n, steps)[:, None]
    with np.errstate(invalid="ignore"):
        exits = np.any(~(norms <= bound), axis=0)
    return _binomial(int(np.sum(exits | blown)), replications, int(np.sum(blown)))


def compute_residual(model, avg, traj, perturbation_replay, atol=1e-12):
    """Residuals R_k = eps (f(X_k, Y_{k+1}) - f_bar(X_k)) along a stored trajectory.

    ``perturbation_replay`` must be a fresh process producing the same
    Y-sequence that generated ``traj``.  The identity
    X_{k+1} - X_k - eps f_bar(X_k) = R_k is checked on every step.

    Raises
    ------
    ResidualMismatchError
        If the identity fails anywhere (wrong seed or wrong stream).
    """
    states = traj.states
    steps = len(states) - 1
    eps = model.epsilon
    ys = perturbation_replay.sample(steps)
    out = np.empty((steps, model.dimension))
    for k in range(steps):
        x = states[k]
        fbar = avg(x)
        out[k] = eps * (model.increment(x, ys[k]) - fbar)
        gap = states[k + 1] - x - eps * fbar
        scale = max(1.0, float(np.max(np.abs(states[k + 1]))))
        if np.max(np.abs(gap - out[k])) > atol * scale:
            raise ResidualMismatchError(
                f"residual identity fails at step {k}: replay does not match the trajectory")
    return out


@dataclass
class RateStudy:
    """One :class:`DeviationReport` per eps, in the order given."""

    rows: list

    @property
    def medians(self):
        return [r.median for r in self.rows]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epsilon", "horizon_steps", "median_sup_deviation",
                        "max_sup_deviation", "replications", "blowups"])
            for r in self.rows:
                w.writerow([format(r.epsilon, ".17g"), r.horizon_steps,
                            format(r.median, ".17g"), format(r.sup_deviation, ".17g"),
                            len(r.per_seed), len(r.blowups)])

    def to_json(self, path):
        payload = {"rows": [
            {**asdict(r), "median": r.median, "sup_deviation": r.sup_deviation}
            for r in self.rows]}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def averaging_rate_study(experiment, epsilons, n_horizon, replications, threads=1):
    """Median over seeds of sup_{k<=[N/eps]} |X_k - Xd_k| for each eps.

    Replication ``r`` uses the same perturbation sub-stream at every eps.
    Blown-up seeds enter the median as +inf and are listed per row.
    """
    epsilons = [float(e) for e in epsilons]
    if any(e <= 0 for e in epsilons):
        raise ValueError("epsilons must be positive")
    if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ValueError("epsilons must be strictly descending")
    rows = []
    for eps in epsilons:
        exp = experiment.with_epsilon(eps)
        steps = horizon_steps(n_horizon, eps)
        sup = _sweep_sup(exp, steps, replications, threads)
        rows.append(DeviationReport(
            epsilon=eps, horizon=float(n_horizon), horizon_steps=steps,
            per_seed=[float(v) for v in sup], seeds=list(range(replications)),
            blowups=[int(i) for i in np.nonzero(np.isinf(sup))[0]]))
    return RateStudy(rows)
