"""Regeneration cycles and log-domain renewal assembly.

One cycle: the radial walk leaves the boundary, first hits the level r at
time H, attains its all-time future minimum A = r^U at time T, and B = r^V
is its maximum on [H, T].  Rescaled cycles are independent and identically
distributed, so arbitrarily long renewal sequences can be assembled from
draws of (U, T') through

    ln A_n = ln r * (U_1 + ... + U_n),
    ln T_n = logsumexp_i ( 2 ln A_{i-1} + ln T'_i ),

without ever materializing T_n ~ r^{2n} linearly.  The derived sequence
S_n = T_n / A_n^2 solves the random difference equation
S_n = alpha_n S_{n-1} + beta_n with alpha_n = r^{-2 U_n},
beta_n = T'_n r^{-2 U_n}.

Cycle simulation is truncated: a cycle closes once the walk reaches r^k,
which certifies the recorded minimum except on an event of probability
exactly ln A / (k ln r) (the future-minimum law), reported per record as
``err_bound``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from moustache import _kernels as K
from moustache.errors import (
    BlowupError,
    DriftDomainError,
    PhaseThrashError,
    StepLimitError,
)
from moustache.laws import CycleLawParams, iterated_log
from moustache.sde import IntegratorConfig, derive_stream

__all__ = [
    "CycleRecord",
    "CyclePool",
    "RenewalSequence",
    "CrossingReport",
    "simulate_cycle",
    "sample_pool",
    "assemble_renewal",
    "assemble_from_draws",
    "s_sequence",
    "future_min_envelope",
    "ln_envelope_power_g",
    "ln_envelope_sqrt_lnlnln",
    "direct_renewal_tails",
    "save_pool_csv",
    "load_pool_csv",
    "save_sequence_csv",
    "load_sequence_csv",
]

# Dip-detection hysteresis: re-enter natural time when the walk undercuts
# (1 + margin) times the current record.
DIP_MARGIN = 0.05
# Phase switches allowed per cycle before declaring the config too coarse.
SWITCH_BUDGET = 10_000
# Cycles per parallel task; fixed so output never depends on worker count.
POOL_CHUNK = 4096


def _raise_status(status: int) -> None:
    if status == K.OK:
        return
    if status == K.HALVING_EXHAUSTED:
        raise StepLimitError("step halving exhausted inside a cycle")
    if status == K.NONFINITE:
        raise BlowupError("cycle simulation produced a non-finite value")
    if status == K.DRIFT_DOMAIN:
        raise DriftDomainError("geometric-time drift underflow inside a cycle")
    if status == K.THRASH:
        raise PhaseThrashError(
            f"more than {SWITCH_BUDGET} phase switches in one cycle "
            "(config too coarse or margin too tight)")
    if status == K.STACK_OVERFLOW:
        raise RuntimeError("pending-record stack overflow in direct extraction")
    raise RuntimeError(f"unexpected cycle status {status}")


@dataclass(frozen=True)
class CycleRecord:
    """Statistics of one simulated regeneration cycle.

    err_bound = ln A / (k ln r) bounds the probability that the recorded
    (A, T) is not final, i.e. that the walk dips below A after r^k.
    """

    H: float
    T: float
    A: float
    B: float
    U: float
    V: float
    k: int
    err_bound: float

    def validate(self, r: float) -> None:
        if not (0.0 < self.H <= self.T):
            raise ValueError(f"need 0 < H <= T, got H={self.H}, T={self.T}")
        if not (1.0 < self.A < r <= self.B <= r ** self.k * (1 + 1e-12)):
            raise ValueError(f"need 1 < A < r <= B <= r^k, got A={self.A}, B={self.B}")
        if not (0.0 < self.U < 1.0):
            raise ValueError(f"U must lie in (0,1), got {self.U}")
        if not (1.0 <= self.V <= self.k):
            raise ValueError(f"V must lie in [1,k], got {self.V}")
        if not 0.0 < self.err_bound < 1.0 / self.k + 1e-12:
            raise ValueError("err_bound must lie in (0, 1/k]")


@dataclass
class CyclePool:
    """A batch of independent cycles; the empirical cycle law.

    Stored column-wise; ``record(i)`` materializes one CycleRecord.
    """

    H: np.ndarray
    T: np.ndarray
    A: np.ndarray
    B: np.ndarray
    k: int
    params: CycleLawParams
    fingerprint: str = ""
    n_switches: Optional[np.ndarray] = None

    @property
    def U(self) -> np.ndarray:
        return np.log(self.A) / self.params.ln_r

    @property
    def V(self) -> np.ndarray:
        return np.log(self.B) / self.params.ln_r

    @property
    def err_bound(self) -> np.ndarray:
        return self.U / self.k

    def __len__(self) -> int:
        return len(self.T)

    def record(self, i: int) -> CycleRecord:
        return CycleRecord(
            H=float(self.H[i]), T=float(self.T[i]), A=float(self.A[i]),
            B=float(self.B[i]), U=float(self.U[i]), V=float(self.V[i]),
            k=self.k, err_bound=float(self.U[i]) / self.k)

    def subset(self, n: int) -> "CyclePool":
        return CyclePool(self.H[:n], self.T[:n], self.A[:n], self.B[:n],
                         self.k, self.params, self.fingerprint)

    def validate(self) -> None:
        r = self.params.r
        if not (len(self.H) == len(self.T) == len(self.A) == len(self.B) >= 1):
            raise ValueError("pool columns must share a positive length")
        if np.any(self.H <= 0) or np.any(self.T < self.H):
            raise ValueError("need 0 < H <= T for every record")
        if np.any(self.A <= 1.0) or np.any(self.A >= r) or np.any(self.B < r):
            raise ValueError("need 1 < A < r <= B for every record")
        if np.any(self.B > r ** self.k * (1 + 1e-12)):
            raise ValueError("B must not exceed the truncation level r^k")


def _cycle_args(params: CycleLawParams, k: int, cfg: IntegratorConfig):
    if k < 2:
        raise ValueError("truncation exponent k must be >= 2")
    if k * params.ln_r > 300.0:
        raise ValueError("r^k overflows; reduce k")
    if params.r <= 1.0 + cfg.boundary_guard:
        raise ValueError("cycle ratio must exceed 1 + boundary_guard")
    if params.r * params.r <= (1.0 + DIP_MARGIN) * 1.02:
        raise ValueError(
            "cycle ratio too close to 1: the dip re-entry threshold "
            "(1 + margin) * min must sit below the natural-mode exit r^2 * min")
    # a post-dip geometric restart deep in the cycle sits at
    # X ~ r^2 exp(-k ln r), where the stiffness rule needs about
    # 2.9 k ln r + log2(dt_geo) + 7 halvings
    need = int(2.9 * k * params.ln_r + math.log2(cfg.dt_geometric) + 15)
    if cfg.max_halvings < need:
        raise ValueError(
            f"max_halvings={cfg.max_halvings} too small for k={k} at "
            f"r={params.r:g}; late-cycle dips need about {need}")
    return (params.r, k, cfg.dt_natural, cfg.dt_geometric, cfg.boundary_guard,
            cfg.max_halvings, DIP_MARGIN, SWITCH_BUDGET)


def simulate_cycle(params: CycleLawParams, k: int, cfg: IntegratorConfig,
                   rng: Optional[np.random.Generator] = None) -> CycleRecord:
    """Simulate one regeneration cycle (natural time near records,
    geometric time for the long climb to r^k)."""
    r, k, dt_nat, dt_geo, guard, mh, margin, budget = _cycle_args(params, k, cfg)
    rng = rng if rng is not None else cfg.rng()
    h, t, a, b, nsw, st = K._one_cycle(r, k, dt_nat, dt_geo, guard, mh,
                                       margin, budget, rng)
    _raise_status(st)
    u = math.log(a) / params.ln_r
    v = math.log(b) / params.ln_r
    rec = CycleRecord(H=h, T=t, A=a, B=b, U=u, V=v, k=k, err_bound=u / k)
    rec.validate(params.r)
    return rec


def _pool_task(args) -> tuple:
    (seed, task_idx, n, r, k, dt_nat, dt_geo, guard, mh, margin, budget) = args
    rng = derive_stream(seed, task_idx)
    H = np.empty(n)
    T = np.empty(n)
    A = np.empty(n)
    B = np.empty(n)
    NSW = np.empty(n)
    st = K._cycles_batch(r, k, n, dt_nat, dt_geo, guard, mh, margin, budget,
                         rng, H, T, A, B, NSW)
    return task_idx, st, H, T, A, B, NSW


def sample_pool(params: CycleLawParams, k: int, n: int, cfg: IntegratorConfig,
                seed: Optional[int] = None, workers: int = 1) -> CyclePool:
    """Simulate n independent cycles, optionally across worker processes.

    Work is cut into fixed chunks of POOL_CHUNK cycles; chunk i consumes the
    stream derive_stream(seed, i) and results are merged in chunk order, so
    the pool is identical for any worker count.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    seed = cfg.seed if seed is None else seed
    base = _cycle_args(params, k, cfg)
    sizes = [POOL_CHUNK] * (n // POOL_CHUNK)
    if n % POOL_CHUNK:
        sizes.append(n % POOL_CHUNK)
    tasks = [(seed, i, sz, *base) for i, sz in enumerate(sizes)]
    if workers == 1 or len(tasks) == 1:
        results = [_pool_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_pool_task, tasks))
    results.sort(key=lambda r: r[0])
    for _, st, *_rest in results:
        _raise_status(st)
    H = np.concatenate([r[2] for r in results])
    T = np.concatenate([r[3] for r in results])
    A = np.concatenate([r[4] for r in results])
    B = np.concatenate([r[5] for r in results])
    NSW = np.concatenate([r[6] for r in results])
    fp = (f"r={params.r:g},k={k},dt_nat={cfg.dt_natural:g},"
          f"dt_geo={cfg.dt_geometric:g},guard={cfg.boundary_guard:g},"
          f"seed={seed}")
    out = CyclePool(H, T, A, B, k, params, fp, n_switches=NSW)
    out.validate()
    return out


@dataclass
class RenewalSequence:
    """Log-domain renewal sequence built from i.i.d. cycle draws.

    lnA[i] = ln r * (U_1 + ... + U_{i+1}) and lnT[i] = ln T_{i+1} (0-based
    storage of the 1-based sequence); S = exp(lnT - 2 lnA).
    """

    r: float
    U: np.ndarray
    lnTp: np.ndarray
    lnA: np.ndarray
    lnT: np.ndarray
    S: np.ndarray

    @property
    def n(self) -> int:
        return len(self.U)

    @property
    def ln_alpha(self) -> np.ndarray:
        """ln alpha_i = -2 U_i ln r of the random difference equation."""
        return -2.0 * self.U * math.log(self.r)

    @property
    def beta(self) -> np.ndarray:
        """beta_i = T'_i r^{-2 U_i} of the random difference equation."""
        return np.exp(self.lnTp - 2.0 * self.U * math.log(self.r))

    def validate(self, tol: float = 1e-10) -> None:
        if not (len(self.U) == len(self.lnTp) == len(self.lnA) == len(self.lnT)
                == len(self.S) >= 1):
            raise ValueError("sequence columns must share a positive length")
        if np.any(np.diff(self.lnA) <= 0):
            raise ValueError("lnA must be strictly increasing")
        # lnT is strictly increasing in exact arithmetic; in doubles an
        # increment underflows once a single term dominates by ~37 log units,
        # so only monotonicity plus the exact per-term lower bound is checked
        if np.any(np.diff(self.lnT) < 0):
            raise ValueError("lnT must be non-decreasing")
        terms = self.lnTp.copy()
        terms[1:] += 2.0 * self.lnA[:-1]
        if np.any(self.lnT < terms - 1e-12 * np.abs(terms)):
            raise ValueError("lnT must dominate every summand of its prefix sum")
        if np.any(self.S <= 0):
            raise ValueError("S must stay positive")
        res = _recursion_residual(self)
        if res > tol:
            raise ValueError(f"S-recursion residual {res:.3e} exceeds {tol:.1e}")


def _recursion_residual(seq: RenewalSequence) -> float:
    """max relative violation of S_i = r^{-2U_i} (S_{i-1} + T'_i)."""
    lnr = math.log(seq.r)
    s_prev = np.concatenate(([0.0], seq.S[:-1]))
    rhs = np.exp(-2.0 * seq.U * lnr) * (s_prev + np.exp(seq.lnTp))
    return float(np.max(np.abs(seq.S - rhs) / np.abs(seq.S)))


def assemble_from_draws(U: np.ndarray, lnTp: np.ndarray,
                        params: CycleLawParams) -> RenewalSequence:
    """Build the log-domain renewal sequence from cycle draws (U_i, ln T'_i).

    The prefix recursion lnT[i] = logaddexp(lnT[i-1], 2 lnA[i-1] + lnTp[i])
    runs entirely in the log domain; T_n ~ r^{2n} never appears linearly.
    """
    U = np.asarray(U, dtype=float)
    lnTp = np.asarray(lnTp, dtype=float)
    if U.shape != lnTp.shape or U.ndim != 1 or len(U) < 1:
        raise ValueError("U and lnTp must be equal-length 1-d arrays")
    lnA = params.ln_r * np.cumsum(U)
    terms = lnTp.copy()
    terms[1:] += 2.0 * lnA[:-1]
    lnT = np.logaddexp.accumulate(terms)
    S = np.exp(lnT - 2.0 * lnA)
    seq = RenewalSequence(r=params.r, U=U, lnTp=lnTp, lnA=lnA, lnT=lnT, S=S)
    seq.validate()
    return seq


CycleSource = Union[CyclePool, Callable[[int, np.random.Generator], tuple]]


def assemble_renewal(source: CycleSource, n: int,
                     rng: Optional[np.random.Generator] = None,
                     identity: bool = False) -> RenewalSequence:
    """Assemble a length-n renewal sequence from a cycle source.

    source is either a CyclePool (draws are a with-replacement bootstrap
    unless ``identity`` asks for the pool order, which then requires
    n == len(pool)) or a callable (n, rng) -> (U, lnTp) producing fresh
    draws.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(source, CyclePool):
        if len(source) < 1:
            raise ValueError("empty cycle pool")
        if identity:
            if n != len(source):
                raise ValueError("identity draws need n == len(pool)")
            idx = np.arange(n)
        else:
            if rng is None:
                raise ValueError("bootstrap draws need an rng")
            idx = rng.integers(0, len(source), size=n)
        U = source.U[idx]
        lnTp = np.log(source.T[idx])
        params = source.params
    else:
        if rng is None:
            raise ValueError("sampler source needs an rng")
        U, lnTp, params = source(n, rng)
    return assemble_from_draws(U, lnTp, params)


def s_sequence(seq: RenewalSequence, tol: float = 1e-10) -> np.ndarray:
    """S_i = T_i / A_i^2, recomputed from the log-domain columns; verifies
    the random-difference-equation recursion to ``tol`` relative error."""
    S = np.exp(seq.lnT - 2.0 * seq.lnA)
    res = _recursion_residual(seq)
    if res > tol:
        raise ValueError(f"S-recursion residual {res:.3e} exceeds {tol:.1e}")
    return S


@dataclass
class CrossingReport:
    """Outcome of comparing the record sequence with an envelope in the log
    domain: margins[i] = lnA_i - ln envelope(T_i) on the evaluated range."""

    n_evaluated: int
    count: int
    indices: np.ndarray
    margins: np.ndarray
    side: str
    first_index: Optional[int] = None
    last_index: Optional[int] = None


def future_min_envelope(seq: RenewalSequence,
                        ln_envelope: Callable[[np.ndarray], np.ndarray],
                        side: str = "below",
                        min_ln_t: float = 1.0) -> CrossingReport:
    """Compare the future-minimum records A_i with an envelope of T_i.

    ln_envelope maps ln t to ln envelope(t) (everything stays in the log
    domain; T_i itself may be astronomically large).  side="below" counts
    indices with A_i <= envelope(T_i), side="above" the opposite strict
    exceedances.  Entries with lnT <= min_ln_t are skipped (envelopes are
    only required positive beyond e).  Diagnostic, not a theorem prover.
    """
    if side not in ("below", "above"):
        raise ValueError("side must be 'below' or 'above'")
    mask = seq.lnT > min_ln_t
    lnt = seq.lnT[mask]
    lne = np.asarray(ln_envelope(lnt), dtype=float)
    if lne.shape != lnt.shape or not np.all(np.isfinite(lne)):
        raise ValueError("envelope evaluation failed on the sequence range")
    margins = seq.lnA[mask] - lne
    base = np.flatnonzero(mask)
    hit = margins <= 0.0 if side == "below" else margins > 0.0
    idx = base[hit]
    return CrossingReport(
        n_evaluated=int(mask.sum()), count=int(hit.sum()), indices=idx,
        margins=margins, side=side,
        first_index=int(idx[0]) if idx.size else None,
        last_index=int(idx[-1]) if idx.size else None)


def ln_envelope_power_g(g: Callable[[float], float]):
    """Envelope t -> exp( ln t * g(ln ln t) ) in log-domain form."""
    def lnenv(lnt: np.ndarray) -> np.ndarray:
        lnt = np.asarray(lnt, dtype=float)
        u = np.log(np.maximum(lnt, 1.0))  # ln_2 t with the L convention
        gv = np.array([g(float(x)) for x in np.atleast_1d(u)])
        return lnt * gv.reshape(lnt.shape)
    return lnenv


def ln_envelope_sqrt_lnlnln(K_const: float):
    """Envelope t -> K sqrt(t * ln ln ln t) in log-domain form; defined for
    ln ln ln t > 0."""
    if K_const <= 0:
        raise ValueError("K must be > 0")

    def lnenv(lnt: np.ndarray) -> np.ndarray:
        lnt = np.asarray(lnt, dtype=float)
        l3 = np.array([iterated_log(2, float(x)) for x in np.atleast_1d(lnt)])
        l3 = l3.reshape(lnt.shape)
        if np.any(l3 <= 0.0):
            raise ValueError("K sqrt(t ln_3 t) envelope needs ln_3 t > 0")
        return math.log(K_const) + 0.5 * (lnt + np.log(l3))
    return lnenv


def direct_renewal_tails(params: CycleLawParams, n_cycles: int, n_runs: int,
                         cfg: IntegratorConfig,
                         rng: Optional[np.random.Generator] = None,
                         k_cert: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Distribution of (ln A_n, ln T_n) by direct sequential extraction.

    Runs n_runs independent absolute-scale trajectories (no per-cycle
    rescaling) and reads the renewal records off each path; the i.i.d.
    assembly of :func:`assemble_renewal` must reproduce these laws.  The
    n-th record is certified once the path exceeds it by the factor
    r^k_cert, so each run carries a one-sided truncation error of order
    ln(A_n) / (k_cert ln r).

    Returns arrays of shape (n_runs,) with ln A_n and ln T_n.
    """
    if n_cycles < 1 or n_runs < 1:
        raise ValueError("n_cycles and n_runs must be >= 1")
    r, _, dt_nat, dt_geo, guard, mh, margin, budget = _cycle_args(params, 2, cfg)
    if (n_cycles + k_cert) * params.ln_r > 300.0:
        raise ValueError("certification level overflows; reduce k_cert")
    rng = rng if rng is not None else cfg.rng()
    lnA = np.empty(n_cycles)
    lnT = np.empty(n_cycles)
    outA = np.empty(n_runs)
    outT = np.empty(n_runs)
    for i in range(n_runs):
        st = K._direct_renewal(r, n_cycles, k_cert, dt_nat, dt_geo, guard,
                               mh, margin, budget, rng, lnA, lnT)
        _raise_status(st)
        outA[i] = lnA[n_cycles - 1]
        outT[i] = lnT[n_cycles - 1]
    return outA, outT


# ---------------------------------------------------------------------------
# CSV input/output (full-precision doubles; lossless round trips)

def save_pool_csv(pool: CyclePool, path) -> None:
    with open(path, "w") as fh:
        fh.write("H,T,A,B,U,V,k,err_bound\n")
        U, V, eb = pool.U, pool.V, pool.err_bound
        for i in range(len(pool)):
            fh.write(f"{pool.H[i]:.17g},{pool.T[i]:.17g},{pool.A[i]:.17g},"
                     f"{pool.B[i]:.17g},{U[i]:.17g},{V[i]:.17g},{pool.k},"
                     f"{eb[i]:.17g}\n")


def load_pool_csv(path) -> CyclePool:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 8:
        raise ValueError("cycle pool CSV must have 8 columns")
    H, T, A, B, U = data[:, 0], data[:, 1], data[:, 2], data[:, 3], data[:, 4]
    k = int(data[0, 6])
    # the ratio r is not a column; recover it from A = r^U
    r = float(np.exp(np.median(np.log(A) / U)))
    pool = CyclePool(H, T, A, B, k, CycleLawParams(r), fingerprint=f"loaded:{path}")
    pool.validate()
    return pool


def save_sequence_csv(seq: RenewalSequence, path) -> None:
    with open(path, "w") as fh:
        fh.write("i,U,lnTp,lnA,lnT,S\n")
        for i in range(seq.n):
            fh.write(f"{i + 1},{seq.U[i]:.17g},{seq.lnTp[i]:.17g},"
                     f"{seq.lnA[i]:.17g},{seq.lnT[i]:.17g},{seq.S[i]:.17g}\n")


def load_sequence_csv(path, r: float) -> RenewalSequence:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 6:
        raise ValueError("renewal sequence CSV must have 6 columns")
    seq = RenewalSequence(r=r, U=data[:, 1], lnTp=data[:, 2], lnA=data[:, 3],
                          lnT=data[:, 4], S=data[:, 5])
    seq.validate()
    return seq
