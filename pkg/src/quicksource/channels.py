"""Pre/post-change observation channels.

A channel is the pair (Q0, Q1): unaffected vertices emit Q0 samples,
affected vertices emit Q1 samples.  Everything the estimators know about
the distributions flows through four operations: ``sample``, ``log_lr``,
``constants`` and ``rate_function``.  Nothing outside this module looks at
distribution parameters.

Three families are provided:

* ``bernoulli:q0,q1``   - biased coin flips,
* ``gaussian:mu0,mu1,sigma`` - equal-variance location shift,
* ``diagnostic:p,eps``  - per-round testing with probability p and error
  rate eps, support {0, 1, x} where x means "not tested".

The diagnostic channel with eps=0 is noiseless and may be sampled (it is
the exact-recovery sanity oracle), but its likelihood ratio is unbounded,
so the inference-side operations refuse it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtri

from .errors import ChannelError

_DIAG_NONE = 2  # observation code for "no test taken"


@dataclass(frozen=True)
class ChannelConstants:
    """Information constants of a channel pair.

    beta  = E_Q1[dQ1/dQ0]                  (posterior-weight growth base, > 1)
    lam   = max(lam0, lam1) where lam0 = E_Q0[(dQ1/dQ0)^2],
            lam1 = E_Q1[(dQ1/dQ0)^2]       (weight second moments)
    D     = symmetrized KL divergence      (> 0)
    theta = D / 2                          (tail-bound operating point)
    """

    beta: float
    lam: float
    D: float
    theta: float
    lam0: float
    lam1: float


@dataclass(frozen=True)
class BernoulliChannel:
    q0: float
    q1: float

    def __post_init__(self):
        if not (0.0 < self.q0 < 1.0 and 0.0 < self.q1 < 1.0):
            raise ChannelError("bernoulli probabilities must lie in (0, 1)")
        if self.q0 == self.q1:
            raise ChannelError("bernoulli channel requires q0 != q1")

    obs_dtype = np.int8

    def support_masses(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.array([1.0 - self.q0, self.q0]),
            np.array([1.0 - self.q1, self.q1]),
        )

    def draw_from_uniforms(self, u: np.ndarray, affected: np.ndarray) -> np.ndarray:
        q = np.where(affected, self.q1, self.q0)
        return (u < q).astype(np.int8)

    def log_lr(self, y):
        return _discrete_log_lr(self, y)

    def format_observation(self, y) -> str:
        return str(int(y))


@dataclass(frozen=True)
class DiagnosticTestChannel:
    """Each round a vertex is tested with probability p; a taken test is
    wrong with probability eps.  Code 2 (printed as 'x') means untested."""

    p: float
    eps: float

    def __post_init__(self):
        if not (0.0 < self.p <= 1.0):
            raise ChannelError("test probability p must lie in (0, 1]")
        if not (0.0 <= self.eps < 1.0):
            raise ChannelError("test error eps must lie in [0, 1)")
        if self.eps == 0.5:
            raise ChannelError("eps = 1/2 makes Q0 = Q1; channel carries no signal")

    obs_dtype = np.int8

    def support_masses(self) -> tuple[np.ndarray, np.ndarray]:
        p, e = self.p, self.eps
        q0 = np.array([p * (1 - e), p * e, 1 - p])
        q1 = np.array([p * e, p * (1 - e), 1 - p])
        return q0, q1

    def draw_from_uniforms(self, u: np.ndarray, affected: np.ndarray) -> np.ndarray:
        p, e = self.p, self.eps
        first = np.where(affected, p * e, p * (1 - e))  # mass of code 0
        out = np.full(np.broadcast(u, first).shape, _DIAG_NONE, dtype=np.int8)
        out[u < p] = 1
        out[u < first] = 0
        return out

    def log_lr(self, y):
        return _discrete_log_lr(self, y)

    def format_observation(self, y) -> str:
        return "x" if int(y) == _DIAG_NONE else str(int(y))


@dataclass(frozen=True)
class GaussianChannel:
    mu0: float
    mu1: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ChannelError("sigma must be positive")
        if self.mu0 == self.mu1:
            raise ChannelError("gaussian channel requires mu0 != mu1")

    obs_dtype = np.float64

    def draw_from_uniforms(self, u: np.ndarray, affected: np.ndarray) -> np.ndarray:
        mu = np.where(affected, self.mu1, self.mu0)
        return mu + self.sigma * ndtri(u)

    def log_lr(self, y):
        # log dQ1/dQ0 is linear for an equal-variance location pair
        a = (self.mu1 - self.mu0) / self.sigma**2
        mid = 0.5 * (self.mu0 + self.mu1)
        return a * (np.asarray(y, dtype=np.float64) - mid)

    def format_observation(self, y) -> str:
        return repr(float(y))


Channel = Union[BernoulliChannel, DiagnosticTestChannel, GaussianChannel]


def _discrete_log_lr(channel, y):
    table = _llr_table(channel)
    arr = np.asarray(y)
    if arr.dtype.kind not in "iu":
        raise ChannelError(f"observation {y!r} outside channel support")
    if arr.size and (arr.min() < 0 or arr.max() >= table.size):
        raise ChannelError("observation code outside channel support")
    out = table[arr]
    if not np.all(np.isfinite(out)):
        raise ChannelError(
            "channel is not mutually absolutely continuous (noiseless); "
            "log-likelihood ratios are unbounded"
        )
    return out if arr.ndim else float(out)


@lru_cache(maxsize=None)
def _llr_table(channel) -> np.ndarray:
    q0, q1 = channel.support_masses()
    with np.errstate(divide="ignore", invalid="ignore"):
        table = np.log(q1) - np.log(q0)
    # symbols with equal (possibly zero) mass under both measures cancel
    table[q0 == q1] = 0.0
    return table


def sample(channel: Channel, affected, rng: np.random.Generator, size=None):
    """Draw observations: Q1 where affected, Q0 elsewhere.

    ``rng`` is an explicit per-call stream, so trials never share mutable
    generator state.  Identical streams give identical draws.
    """
    scalar = size is None
    u = rng.random(1 if scalar else size)
    out = channel.draw_from_uniforms(u, np.asarray(affected, dtype=bool))
    return out.reshape(-1)[0] if scalar else out


@lru_cache(maxsize=None)
def constants(channel: Channel) -> ChannelConstants:
    """Exact moment constants: closed-form sums for discrete channels,
    closed-form identities for the Gaussian pair."""
    if isinstance(channel, GaussianChannel):
        # with delta = (mu1-mu0)/sigma: log dQ1/dQ0 under Q_i is Gaussian,
        # so all moments are lognormal evaluations
        delta2 = ((channel.mu1 - channel.mu0) / channel.sigma) ** 2
        beta = math.exp(delta2)
        lam0, lam1 = math.exp(delta2), math.exp(3.0 * delta2)
        lam = lam1
        D = delta2
    else:
        q0, q1 = channel.support_masses()
        live = q0 > 0
        if not np.all(np.isfinite(_llr_table(channel))):
            raise ChannelError("constants undefined for a noiseless channel")
        r = np.where(live, q1, 1.0) / np.where(live, q0, 1.0)
        beta = float(np.sum(q1[live] * r[live]))
        lam0 = float(np.sum(q0[live] * r[live] ** 2))
        lam1 = float(np.sum(q1[live] * r[live] ** 2))
        lam = max(lam0, lam1)
        logr = np.where(live & (q1 > 0), np.log(np.where(q1 > 0, q1, 1.0)) - np.log(np.where(q0 > 0, q0, 1.0)), 0.0)
        D = float(np.sum((q1 - q0) * logr))
    if not math.isfinite(D) or D <= 0:
        raise ChannelError("channel divergence must be finite and positive")
    return ChannelConstants(beta=beta, lam=lam, D=D, theta=D / 2.0, lam0=lam0, lam1=lam1)


def _pair_moment(channel: Channel, lam: float) -> float:
    """E[(dQ0/dQ1(A))^lam] * E[(dQ1/dQ0(B))^lam] with A ~ Q1, B ~ Q0 independent."""
    if isinstance(channel, GaussianChannel):
        mu0, mu1, sigma = channel.mu0, channel.mu1, channel.sigma
        lognorm = math.log(sigma * math.sqrt(2 * math.pi))
        llr = channel.log_lr

        def integrand(y, mu, sign):
            # log-space: the exponent is a downward parabola, so it is
            # bounded above and exp() cannot overflow
            e = -0.5 * ((y - mu) / sigma) ** 2 - lognorm + sign * lam * float(llr(y))
            return math.exp(e) if e > -745.0 else 0.0

        a_part, _ = quad(integrand, -np.inf, np.inf, args=(mu1, -1.0),
                         points=None, epsabs=1e-12, epsrel=1e-10)
        b_part, _ = quad(integrand, -np.inf, np.inf, args=(mu0, 1.0),
                         points=None, epsabs=1e-12, epsrel=1e-10)
        return a_part * b_part
    q0, q1 = channel.support_masses()
    live = q0 > 0
    m0, m1 = q0[live], q1[live]
    a_part = float(np.sum(m1 ** (1.0 - lam) * m0**lam))
    b_part = float(np.sum(m0 ** (1.0 - lam) * m1**lam))
    return a_part * b_part


def _golden_max(f, lo: float, hi: float, tol: float = 1e-10) -> float:
    """Golden-section maximum of a unimodal f on [lo, hi]; returns best value
    seen (endpoints included, so boundary maxima are not missed)."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    best = max(f(lo), f(hi), fc, fd)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
        best = max(best, fc, fd)
    return best


def rate_function(channel: Channel, x: float) -> float:
    """Large-deviations exponent I(x) for the pairwise likelihood statistic.

    I(x) = sup over lam in [0, 1] of  -lam (D - x) - log m(lam), where
    m(lam) is the independent pair moment.  The supremum is restricted to
    [0, 1]: differentiability there is what guarantees I(x) > 0 for x > 0,
    and the moment may diverge beyond 1.
    """
    consts = constants(channel)
    if x <= 0:
        raise ValueError("rate function requires x > 0")
    if x > consts.D * (1 + 1e-12):
        raise ValueError(f"rate function domain is (0, D]; x={x} exceeds D={consts.D}")

    def objective(lam: float) -> float:
        return -lam * (consts.D - x) - math.log(_pair_moment(channel, lam))

    return max(0.0, _golden_max(objective, 0.0, 1.0, tol=1e-10))


def parse_channel(spec: str) -> Channel:
    """Parse ``bernoulli:q0,q1`` | ``gaussian:mu0,mu1,sigma`` | ``diagnostic:p,eps``."""
    name, _, argstr = spec.partition(":")
    try:
        args = [float(a) for a in argstr.split(",")] if argstr else []
        if name == "bernoulli" and len(args) == 2:
            return BernoulliChannel(*args)
        if name == "gaussian" and len(args) == 3:
            return GaussianChannel(*args)
        if name == "diagnostic" and len(args) == 2:
            return DiagnosticTestChannel(*args)
    except ChannelError:
        raise
    except ValueError as exc:
        raise ValueError(f"bad channel spec {spec!r}: {exc}") from None
    raise ValueError(
        f"bad channel spec {spec!r}; expected bernoulli:q0,q1 | "
        "gaussian:mu0,mu1,sigma | diagnostic:p,eps"
    )


def format_channel(channel: Channel) -> str:
    if isinstance(channel, BernoulliChannel):
        return f"bernoulli:{channel.q0!r},{channel.q1!r}"
    if isinstance(channel, GaussianChannel):
        return f"gaussian:{channel.mu0!r},{channel.mu1!r},{channel.sigma!r}"
    return f"diagnostic:{channel.p!r},{channel.eps!r}"
