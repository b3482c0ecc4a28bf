"""Closed-form laws of the regeneration cycle and of the long-time limit.

Everything in this module is an exact formula (density, tail, CDF inverse or
explicit bound); nothing is simulated.  These functions are the oracles the
statistical harness checks the SDE machinery against.

Conventions: ``r`` is the cycle ratio (> 1) fixed once per experiment,
``U = ln A / ln r`` and ``V = ln B / ln r`` are the log-scaled cycle minimum
and maximum, and iterated logarithms use ``L(t) = ln(max(t, 1))`` so that they
are never negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CycleLawParams",
    "EnvelopeParams",
    "density_uv",
    "sample_uv",
    "tail_v",
    "tail_v_series",
    "density_v",
    "sample_future_min",
    "exit_prob",
    "rayleigh_pdf",
    "rayleigh_cdf",
    "rayleigh_sample",
    "rayleigh_median",
    "hoeffding_upper",
    "hoeffding_lower",
    "t_tail_envelope",
    "t_lower_tail_envelope",
    "iterated_log",
]

# Switch from the closed form of the V-tail to its series representation
# below this point, where (v - 1) * log(...) loses relative accuracy.
_TAIL_V_SWITCH = 1.0 + 1e-6
_SERIES_TOL = 1e-16
_SERIES_MIN_TERMS = 30
_SERIES_BLOCK = 1 << 16


@dataclass(frozen=True)
class CycleLawParams:
    """Parameters of the cycle law: the ratio r > 1 between renewal levels."""

    r: float = 2.0

    def __post_init__(self) -> None:
        if not (self.r > 1.0 and math.isfinite(self.r)):
            raise ValueError(f"cycle ratio must be finite and > 1, got {self.r}")

    @property
    def ln_r(self) -> float:
        return math.log(self.r)


@dataclass(frozen=True)
class EnvelopeParams:
    """Free constants of the diagnostic tail envelopes.

    The underlying bounds are existence statements; none of these constants
    has a proven numeric value, so they are exposed as parameters with
    defaults used only in diagnostics, never in exact tests.

    C        additive correction in the upper-tail band of the cycle length.
    epsilon  slack in the lower-tail exponential bounds (0 <= eps < r - 1;
             0 is accepted as the degenerate diagnostic case).
    K, K_prime   outer/inner escape-envelope constants, K > K_prime > 0.
    beta     threshold scale for the S_n lower-envelope diagnostics.
    """

    C: float = 5.0
    epsilon: float = 0.1
    K: float = 6.0
    K_prime: float = 1.0
    beta: float = 0.25

    def __post_init__(self) -> None:
        if self.C < 0:
            raise ValueError("C must be >= 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not (self.K > self.K_prime > 0):
            raise ValueError("need K > K_prime > 0")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")

    @classmethod
    def defaults_for(cls, r: float) -> "EnvelopeParams":
        """Defaults tied to a cycle ratio.

        K is the explicit admissible constant r*sqrt(2(r+1)/(r-1)) of the
        upper escape envelope, beta the matching threshold (r-1)/(2(r+1)),
        and K_prime = K/4 an arbitrary strictly smaller inner constant.
        """
        if r <= 1:
            raise ValueError("r must be > 1")
        k = r * math.sqrt(2.0 * (r + 1.0) / (r - 1.0))
        return cls(C=5.0, epsilon=min(0.1, 0.5 * (r - 1.0)),
                   K=k, K_prime=k / 4.0, beta=(r - 1.0) / (2.0 * (r + 1.0)))


def density_uv(u, v):
    """Joint density of (U, V): (1-u)/(v-u)^2 on 0 < u < 1 < v, else 0.

    Accepts scalars or arrays and broadcasts.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    inside = (u > 0.0) & (u < 1.0) & (v > 1.0)
    diff = np.where(inside, v - u, 1.0)
    out = np.where(inside, (1.0 - u) / (diff * diff), 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def sample_uv(params: CycleLawParams, rng: np.random.Generator, size=None):
    """Exact sampler of (U, V) by inversion of the conditional CDF.

    U is uniform on (0, 1); given U = u, V has CDF F(v|u) = 1 - (1-u)/(v-u)
    on (1, inf), inverted as v = u + (1-u)/(1-q) with q uniform.
    The ratio ``params.r`` does not enter the scaled law; it is carried so a
    sample can be mapped back to (A, B) = (r^U, r^V).
    """
    scalar = size is None
    n = 1 if scalar else int(size)
    u = rng.random(n)
    q = rng.random(n)
    # endpoints have probability zero; nudge off the closed edges
    u = np.where(u == 0.0, 0.5 / 2**53, u)
    q = np.where(q == 0.0, 0.5 / 2**53, q)
    v = u + (1.0 - u) / (1.0 - q)
    if scalar:
        return float(u[0]), float(v[0])
    return u, v


def tail_v_series(v: float, tol: float = _SERIES_TOL) -> float:
    """P(V > v) as the series sum_{n>=1} 1/(n(n+1) v^n), for v >= 1.

    Terms are accumulated (at least 30 of them) until they drop below
    ``tol``.  Near v = 1 the decay is slow and the sum runs long; this
    variant exists for the switchover region and for cross-checks.
    """
    if v < 1.0:
        raise ValueError("tail is defined for v >= 1")
    if v == 1.0:
        return 1.0  # sum 1/(n(n+1)) telescopes to 1
    total = 0.0
    n0 = 1
    lv = math.log(v)
    while True:
        n = np.arange(n0, n0 + _SERIES_BLOCK, dtype=float)
        terms = np.exp(-n * lv) / (n * (n + 1.0))
        total += float(terms.sum())
        if (terms[-1] < tol and n0 + _SERIES_BLOCK > _SERIES_MIN_TERMS):
            return total
        n0 += _SERIES_BLOCK
        if n0 > 200_000_000:  # tail past here is < 1/n0, below any use
            return total


def tail_v(v: float) -> float:
    """Survival function P(V > v) of the cycle log-maximum, v >= 1.

    Uses the closed form 1 + (v-1) ln(1 - 1/v) away from 1, written as
    (v-1)(ln(v-1) - ln v) to avoid cancellation, and the series right at
    the lower edge.
    """
    if v < 1.0:
        raise ValueError("tail is defined for v >= 1")
    if v <= _TAIL_V_SWITCH:
        return tail_v_series(v)
    return 1.0 + (v - 1.0) * (math.log(v - 1.0) - math.log(v))


def density_v(v):
    """Marginal density of V: -ln(1 - 1/v) - 1/v for v > 1, else 0."""
    v = np.asarray(v, dtype=float)
    inside = v > 1.0
    vv = np.where(inside, v, 2.0)
    out = np.where(inside, -np.log1p(-1.0 / vv) - 1.0 / vv, 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def sample_future_min(b: float, rng: np.random.Generator, size=None):
    """Sample the all-time future minimum of the radial process started at b.

    The minimum has density 1/(a ln b) on (1, b), i.e. CDF ln(a)/ln(b), so
    b**q with q uniform on (0, 1) is an exact draw.
    """
    if not b > 1.0:
        raise ValueError("start level b must be > 1")
    scalar = size is None
    n = 1 if scalar else int(size)
    q = rng.random(n)
    q = np.where(q == 0.0, 0.5 / 2**53, q)
    out = np.exp(q * math.log(b))
    if scalar:
        return float(out[0])
    return out


def exit_prob(a: float, r0: float, b: float) -> float:
    """P[hit b before a | start at r0] = ln(r0/a) ln(b) / (ln(b/a) ln(r0)).

    Requires 1 < a <= r0 <= b; the endpoint conventions r0 = a -> 0 and
    r0 = b -> 1 are taken by continuity.
    """
    if not (1.0 < a <= r0 <= b):
        raise ValueError(f"need 1 < a <= r0 <= b, got ({a}, {r0}, {b})")
    if a == b:
        raise ValueError("degenerate interval a == b")
    if r0 == a:
        return 0.0
    if r0 == b:
        return 1.0
    return (math.log(r0 / a) * math.log(b)) / (math.log(b / a) * math.log(r0))


def rayleigh_pdf(x):
    """Density x exp(-x^2/2) of the standard Rayleigh law on (0, inf)."""
    x = np.asarray(x, dtype=float)
    out = np.where(x > 0.0, x * np.exp(-0.5 * x * x), 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def rayleigh_cdf(x):
    """CDF 1 - exp(-x^2/2) of the standard Rayleigh law."""
    x = np.asarray(x, dtype=float)
    out = np.where(x > 0.0, -np.expm1(-0.5 * x * x), 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def rayleigh_sample(rng: np.random.Generator, size=None):
    """Draw from the Rayleigh law by inversion: sqrt(-2 ln(1-q))."""
    scalar = size is None
    q = rng.random(1 if scalar else int(size))
    out = np.sqrt(-2.0 * np.log1p(-q))
    if scalar:
        return float(out[0])
    return out


def rayleigh_median() -> float:
    """Median sqrt(2 ln 2) of the Rayleigh law."""
    return math.sqrt(2.0 * math.log(2.0))


def hoeffding_upper(i: int, c: float) -> float:
    """Bound P[2(U_1+...+U_i) >= c i] <= exp(-i (c-1)^2 / 2), for c >= 1.

    c = 1 gives the vacuous bound 1.
    """
    if i < 1:
        raise ValueError("i must be >= 1")
    if c < 1.0:
        raise ValueError("upper bound needs c >= 1")
    return math.exp(-0.5 * i * (c - 1.0) ** 2)


def hoeffding_lower(i: int, b: float) -> float:
    """Bound P[2(U_1+...+U_i) <= b i] <= exp(-i (1-b)^2 / 2), for b <= 1."""
    if i < 1:
        raise ValueError("i must be >= 1")
    if b > 1.0:
        raise ValueError("lower bound needs b <= 1")
    return math.exp(-0.5 * i * (1.0 - b) ** 2)


def t_tail_envelope(t: float, params: CycleLawParams,
                    env: EnvelopeParams) -> tuple[float, float, float]:
    """(lower, central, upper) band for P(T >= t) at large t.

    central = ln r / ln t; the band multiplies it by 1 -/+ (ln_3 t + C)/ln t,
    with the lower edge clipped at 0.  Valid for t > e.
    """
    if not t > math.e:
        raise ValueError("envelope is defined for t > e")
    lt = math.log(t)
    central = params.ln_r / lt
    band = (iterated_log(3, t) + env.C) / lt
    lower = max(0.0, central * (1.0 - band))
    upper = central * (1.0 + band)
    return lower, central, upper


def t_lower_tail_envelope(t: float, params: CycleLawParams,
                          env: EnvelopeParams) -> tuple[float, float]:
    """(lower, upper) exponential envelopes for P(T <= t) at small t.

    upper = exp(-(r-1-eps)^2 / 2t),  lower = exp(-(r-1+eps)^2 / 2t).
    """
    if not t > 0:
        raise ValueError("t must be > 0")
    eps = env.epsilon
    if not 0.0 <= eps < params.r - 1.0:
        raise ValueError("need 0 <= epsilon < r - 1")
    upper = math.exp(-((params.r - 1.0 - eps) ** 2) / (2.0 * t))
    lower = math.exp(-((params.r - 1.0 + eps) ** 2) / (2.0 * t))
    return lower, upper


def iterated_log(k: int, t: float) -> float:
    """k-fold iterated logarithm with L(t) = ln(max(t, 1)); never negative."""
    if k < 1:
        raise ValueError("k must be >= 1")
    x = float(t)
    for _ in range(k):
        x = math.log(x) if x > 1.0 else 0.0
    return x
