"""Ergodic perturbation sequences and their invariant-distribution moments.

Every process is a seeded, single-owner stream.  Seeds are expanded through
:class:`numpy.random.SeedSequence`, and independent sub-streams (one per
replication, or one per signal such as probe vs. measurement noise) come
from :func:`substream`, so a sweep is reproducible no matter how it is
scheduled.
"""

import math
from functools import reduce

import numpy as np
from scipy import integrate
from scipy.signal import lfilter
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .numerics import ConvergenceError, gaussian_expectation, normal_tail

__all__ = [
    "substream", "PerturbationProcess", "IIDGaussian", "TruncatedGaussian",
    "FiniteMarkov", "SampledOU", "JointProcess", "make_process",
    "gaussian_sine_moment", "truncated_noise_mass",
]


def substream(seed, *keys):
    """Return a Generator for the sub-stream ``keys`` of master ``seed``.

    ``substream(s, 3, 1)`` and ``substream(s, 3, 2)`` are statistically
    independent and each is bit-reproducible.
    """
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def _normal_expect(fn, sigma):
    """E fn(Y), Y ~ N(0, sigma^2): Gauss-Hermite, or adaptive quadrature for non-smooth fn."""
    try:
        return gaussian_expectation(fn, sigma)
    except ConvergenceError:
        pass
    dens = lambda x: float(np.asarray(fn(np.array([x])))[0]) * math.exp(
        -0.5 * (x / sigma) ** 2) / (math.sqrt(2 * math.pi) * sigma)
    # mass beyond 12 sigma is below 1e-32
    val, _ = integrate.quad(dens, -12 * sigma, 12 * sigma, epsabs=1e-13, epsrel=1e-12,
                            limit=500)
    return val


class PerturbationProcess:
    """Base class: a seeded stream Y_1, Y_2, ... with a known invariant law.

    Subclasses implement :meth:`sample` (a block of the next ``n`` values)
    and :meth:`expect` (integral of a test function against the invariant
    distribution).  Drawing one value at a time or in blocks consumes the
    stream identically.
    """

    kind = None

    def __init__(self, seed=0, keys=()):
        self.seed = int(seed)
        self.keys = tuple(keys)
        self._rng = substream(self.seed, *self.keys)

    def next_sample(self):
        """Return the next value and advance the stream."""
        return self.sample(1)[0]

    def sample(self, n):
        raise NotImplementedError

    def expect(self, fn):
        """Integral of ``fn`` against the invariant distribution."""
        raise NotImplementedError

    @property
    def mean(self):
        return self.expect(lambda y: y)

    def spawn(self, *keys):
        """Fresh process with the same parameters on sub-stream ``keys``."""
        return type(self)(**self.params(), seed=self.seed, keys=self.keys + tuple(keys))

    def params(self):
        raise NotImplementedError

    def to_dict(self):
        return {"kind": self.kind, **self.params(), "seed": self.seed}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args}, seed={self.seed})"


class IIDGaussian(PerturbationProcess):
    """i.i.d. N(0, sigma^2)."""

    kind = "iid-gaussian"

    def __init__(self, sigma, seed=0, keys=()):
        if not sigma > 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        self.sigma = float(sigma)
        super().__init__(seed, keys)

    def params(self):
        return {"sigma": self.sigma}

    def sample(self, n):
        return self._rng.normal(0.0, self.sigma, size=int(n))

    def expect(self, fn):
        return _normal_expect(fn, self.sigma)


class TruncatedGaussian(PerturbationProcess):
    """i.i.d. N(0, sigma1^2) clipped to [-bound, bound].

    The clipped mass sits in two atoms at +-bound, see
    :func:`truncated_noise_mass`.  ``bound = 0`` gives the zero sequence.
    """

    kind = "truncated-gaussian"

    def __init__(self, sigma1, bound, seed=0, keys=()):
        if not sigma1 >= 0:
            raise ValueError(f"sigma1 must be nonnegative, got {sigma1}")
        if not bound >= 0:
            raise ValueError(f"bound must be nonnegative, got {bound}")
        self.sigma1 = float(sigma1)
        self.bound = float(bound)
        super().__init__(seed, keys)

    def params(self):
        return {"sigma1": self.sigma1, "bound": self.bound}

    def sample(self, n):
        z = self._rng.normal(0.0, self.sigma1, size=int(n))
        return np.clip(z, -self.bound, self.bound)

    def expect(self, fn):
        s, m = self.sigma1, self.bound
        if s == 0 or m == 0:
            return float(np.asarray(fn(np.zeros(1)))[0])
        if math.isinf(m):
            return _normal_expect(fn, s)
        upper, lower = truncated_noise_mass(s, m)
        dens = lambda x: float(np.asarray(fn(np.array([x])))[0]) * math.exp(
            -0.5 * (x / s) ** 2) / (math.sqrt(2 * math.pi) * s)
        body, _ = integrate.quad(dens, -m, m, epsabs=1e-13, epsrel=1e-12, limit=200)
        atoms = np.asarray(fn(np.array([m, -m])), dtype=float)
        return body + upper * atoms[0] + lower * atoms[1]


class FiniteMarkov(PerturbationProcess):
    """Finite-state Markov chain on real ``states`` with row-stochastic ``transition``.

    The chain is checked for irreducibility (strong connectivity of the
    support graph) and aperiodicity (period 1) at construction.  Without an
    explicit ``initial`` index the first state is drawn from the stationary
    distribution.
    """

    kind = "finite-markov"

    def __init__(self, transition, states, initial=None, seed=0, keys=()):
        p = np.array(transition, dtype=float)
        states = np.array(states, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("transition matrix must be square")
        if states.shape != (p.shape[0],):
            raise ValueError("need one state value per row of the transition matrix")
        if np.any(p < 0):
            raise ValueError("transition probabilities must be nonnegative")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("transition matrix rows must sum to 1 (within 1e-12)")
        _check_ergodic(p)
        self.transition = p
        self.states = states
        self.initial = initial
        self.stationary = stationary_distribution(p)
        self._cum = np.cumsum(p, axis=1)
        self._cum[:, -1] = 1.0
        super().__init__(seed, keys)
        if initial is None:
            u = self._rng.random()
            self._state = int(np.searchsorted(np.cumsum(self.stationary), u, side="right"))
            self._state = min(self._state, len(states) - 1)
        else:
            self._state = int(initial)

    def params(self):
        return {"transition": self.transition.tolist(), "states": self.states.tolist(),
                "initial": self.initial}

    def sample(self, n):
        u = self._rng.random(size=int(n))
        out = np.empty(int(n))
        s = self._state
        cum = self._cum
        for i, ui in enumerate(u):
            s = int(np.searchsorted(cum[s], ui, side="right"))
            out[i] = self.states[s]
        self._state = s
        return out

    def expect(self, fn):
        vals = np.asarray(fn(self.states), dtype=float)
        return float(np.dot(self.stationary, vals))


def stationary_distribution(p):
    """Solve pi P = pi, sum(pi) = 1 by least squares on the stacked system."""
    n = p.shape[0]
    a = np.vstack([p.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _check_ergodic(p):
    support = (p > 0).astype(int)
    n_comp, _ = connected_components(support, directed=True, connection="strong")
    if n_comp != 1:
        raise ValueError("Markov chain is not irreducible")
    # period = gcd over edges u->v of level[u] + 1 - level[v], levels from BFS
    order, pred = breadth_first_order(support, 0, directed=True, return_predecessors=True)
    level = np.zeros(len(p), dtype=int)
    for node in order[1:]:
        level[node] = level[pred[node]] + 1
    us, vs = np.nonzero(support)
    period = reduce(math.gcd, (int(level[u] + 1 - level[v]) for u, v in zip(us, vs)), 0)
    if period != 1:
        raise ValueError(f"Markov chain is periodic (period {period})")


class SampledOU(PerturbationProcess):
    """Ornstein-Uhlenbeck process dY = -rate Y dt + volatility dB sampled every ``period``.

    Uses the exact Gaussian transition, so the sampled chain is an AR(1)
    with stationary law N(0, volatility^2 / (2 rate)).  The first value is
    drawn from the stationary law.
    """

    kind = "sampled-ou"

    def __init__(self, rate, volatility, period, seed=0, keys=()):
        if not rate > 0:
            raise ValueError("mean-reversion rate must be positive")
        if not volatility >= 0:
            raise ValueError("volatility must be nonnegative")
        if not period > 0:
            raise ValueError("sample period must be positive")
        self.rate = float(rate)
        self.volatility = float(volatility)
        self.period = float(period)
        self.decay = math.exp(-self.rate * self.period)
        self.stationary_std = self.volatility / math.sqrt(2 * self.rate)
        self.innovation_std = self.stationary_std * math.sqrt(-math.expm1(-2 * self.rate * self.period))
        super().__init__(seed, keys)
        self._y = self._rng.normal(0.0, 1.0) * self.stationary_std

    def params(self):
        return {"rate": self.rate, "volatility": self.volatility, "period": self.period}

    def sample(self, n):
        z = self._rng.normal(0.0, 1.0, size=int(n))
        if z.size == 0:
            return z
        out, _ = lfilter([self.innovation_std], [1.0, -self.decay], z,
                         zi=[self.decay * self._y])
        self._y = float(out[-1])
        return out

    def expect(self, fn):
        if self.stationary_std == 0:
            return float(np.asarray(fn(np.zeros(1)))[0])
        return _normal_expect(fn, self.stationary_std)


class JointProcess:
    """Independent processes stacked into a vector perturbation.

    ``sample(n)`` returns shape (n, m).  Each component keeps its own
    sub-stream, so the components are independent.
    """

    kind = "joint"

    def __init__(self, *components):
        if not components:
            raise ValueError("need at least one component")
        self.components = components

    def __len__(self):
        return len(self.components)

    def sample(self, n):
        return np.column_stack([c.sample(n) for c in self.components])

    def next_sample(self):
        return self.sample(1)[0]

    def spawn(self, *keys):
        return JointProcess(*(c.spawn(*keys) for c in self.components))

    def to_dict(self):
        return {"kind": self.kind, "components": [c.to_dict() for c in self.components]}


_KINDS = {cls.kind: cls for cls in (IIDGaussian, TruncatedGaussian, FiniteMarkov, SampledOU)}


def make_process(spec, seed=None, keys=()):
    """Build a process from a dict such as ``{"kind": "iid-gaussian", "sigma": 2}``.

    A ``seed`` argument overrides any seed in the dict.
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "joint":
        comps = spec.pop("components")
        if spec:
            raise ValueError(f"unknown keys for joint process: {sorted(spec)}")
        return JointProcess(*(make_process(c, seed, tuple(keys) + (i,))
                              for i, c in enumerate(comps)))
    if kind not in _KINDS:
        raise ValueError(f"unknown process kind {kind!r}; expected one of {sorted(_KINDS)}")
    own_seed = spec.pop("seed", 0)
    return _KINDS[kind](**spec, seed=own_seed if seed is None else seed, keys=tuple(keys))


def gaussian_sine_moment(sigma, order):
    """E[sin(v)^order] for v ~ N(0, sigma^2), order in {1, 2, 3, 4}."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if order in (1, 3):
        return 0.0
    if order == 2:
        return 0.5 - 0.5 * math.exp(-2 * sigma**2)
    if order == 4:
        return 0.375 - 0.5 * math.exp(-2 * sigma**2) + 0.125 * math.exp(-8 * sigma**2)
    raise ValueError(f"unsupported sine-moment order {order!r}; expected 1..4")


def truncated_noise_mass(sigma1, bound):
    """Atoms (at +bound, at -bound) of N(0, sigma1^2) clipped to [-bound, bound]."""
    if not bound > 0:
        raise ValueError(f"bound must be positive, got {bound}")
    if sigma1 == 0:
        return 0.0, 0.0
    tail = normal_tail(bound / sigma1)
    return tail, tail
