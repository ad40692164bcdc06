"""Imbalance / queue-length Markov chains under state-dependent pricing.

Two chain kinds share one transition structure. With ``D = a_c - a_s``:

* two-sided imbalance:  ``z' = z + D``
* single-server queue:  ``q' = max(q + D, 0)``, the clipped part being unused
  service.
"""

from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from .pricing import ConditionError, PricingCurvePair, ScalingPoint, check_negative_drift


class ChainKind(str, enum.Enum):
    TWO_SIDED = "TwoSidedImbalance"
    SINGLE_SERVER = "SingleServer"


class ArrivalFamily(str, enum.Enum):
    BERNOULLI = "Bernoulli"
    BOUNDED_DISCRETE = "BoundedDiscrete"


class SingularKernelError(RuntimeError):
    pass


class WindowTooSmallWarning(RuntimeWarning):
    pass


# ---------------------------------------------------------------------------
# arrivals


@dataclass(frozen=True)
class ArrivalModel:
    """Bounded integer arrivals whose pmf is affine in the controlled rate.

    ``pmf(r) = intercept + r * slope`` over ``support``. The mean of the pmf
    must equal ``r``, which pins ``sum(k * intercept) = 0`` and
    ``sum(k * slope) = 1``. Bernoulli is ``support=(0, 1)``,
    ``intercept=(1, 0)``, ``slope=(-1, 1)``. Customers and servers draw from
    the same family.
    """

    lambda_star: float
    mu_star: float
    support: tuple[int, ...] = (0, 1)
    intercept: tuple[float, ...] = (1.0, 0.0)
    slope: tuple[float, ...] = (-1.0, 1.0)
    family: ArrivalFamily = ArrivalFamily.BERNOULLI

    def __post_init__(self):
        object.__setattr__(self, "family", ArrivalFamily(self.family))
        if not (0 < self.lambda_star < 1):
            raise ValueError("lambda_star must lie in (0, 1)")
        if abs(self.lambda_star - self.mu_star) > 1e-15:
            raise ValueError("balanced rates required: lambda_star == mu_star")
        k = np.asarray(self.support)
        q = np.asarray(self.intercept, dtype=float)
        d = np.asarray(self.slope, dtype=float)
        if not (len(k) == len(q) == len(d)) or len(k) < 2:
            raise ValueError("support, intercept and slope must have equal length >= 2")
        if np.any(k < 0) or len(set(k.tolist())) != len(k):
            raise ValueError("support must be distinct nonnegative integers")
        if abs(q.sum() - 1) > 1e-12 or abs(d.sum()) > 1e-12:
            raise ValueError("pmf must sum to one at every rate (sum(intercept)=1, sum(slope)=0)")
        if abs(k @ q) > 1e-12 or abs(k @ d - 1) > 1e-12:
            raise ValueError("pmf mean must equal the rate (sum(k*intercept)=0, sum(k*slope)=1)")
        lo, hi = self.rate_range()
        if not (lo < self.lambda_star < hi):
            raise ValueError(f"lambda_star outside the family's rate range ({lo}, {hi})")

    @classmethod
    def bernoulli(cls, rate: float) -> "ArrivalModel":
        return cls(rate, rate)

    @classmethod
    def bounded_discrete(cls, rate, support, intercept, slope) -> "ArrivalModel":
        return cls(rate, rate, tuple(int(s) for s in support), tuple(map(float, intercept)),
                   tuple(map(float, slope)), ArrivalFamily.BOUNDED_DISCRETE)

    @property
    def a_max(self) -> int:
        return int(max(self.support))

    def rate_range(self) -> tuple[float, float]:
        """Open interval of rates for which the pmf is strictly inside the simplex."""
        lo, hi = -math.inf, math.inf
        for q, d in zip(self.intercept, self.slope):
            if d > 0:
                lo = max(lo, -q / d)
            elif d < 0:
                hi = min(hi, -q / d)
            elif q < 0:
                return (math.nan, math.nan)
        return lo, hi

    def pmf(self, rate) -> np.ndarray:
        """Probabilities over ``support``; shape ``rate.shape + (len(support),)``."""
        r = np.asarray(rate, dtype=float)[..., None]
        return np.asarray(self.intercept) + r * np.asarray(self.slope)

    def variance(self, rate):
        p = self.pmf(rate)
        k = np.asarray(self.support, dtype=float)
        return p @ (k * k) - np.asarray(rate, dtype=float) ** 2

    sigma_c = variance
    sigma_s = variance

    @property
    def sigma_sum(self) -> float:
        return float(self.sigma_c(self.lambda_star) + self.sigma_s(self.mu_star))

    def jump_pmf(self, rate_c, rate_s) -> tuple[np.ndarray, np.ndarray]:
        """Distribution of ``a_c - a_s``: offsets ``-A..A`` and probabilities per rate pair."""
        A = self.a_max
        pc = self.pmf(rate_c)
        ps = self.pmf(rate_s)
        out = np.zeros(np.broadcast(np.asarray(rate_c), np.asarray(rate_s)).shape + (2 * A + 1,))
        for i, ki in enumerate(self.support):
            for j, kj in enumerate(self.support):
                out[..., ki - kj + A] += pc[..., i] * ps[..., j]
        return np.arange(-A, A + 1), out

    def p_min(self, rate_lo: float, rate_hi: float) -> float:
        """Lower bound on ``P(a_c > a_s)`` and ``P(a_c < a_s)`` over a rate box.

        Both probabilities are bilinear in (lambda, mu), so the minimum over
        the box sits at a corner.
        """
        best = math.inf
        for lam in (rate_lo, rate_hi):
            for mu in (rate_lo, rate_hi):
                offs, p = self.jump_pmf(lam, mu)
                best = min(best, p[offs > 0].sum(), p[offs < 0].sum())
        return float(best)


# ---------------------------------------------------------------------------
# chain spec


@dataclass(frozen=True)
class ChainSpec:
    kind: ChainKind
    arrivals: ArrivalModel
    pricing: PricingCurvePair
    scaling: ScalingPoint

    def __post_init__(self):
        object.__setattr__(self, "kind", ChainKind(self.kind))
        lo, hi = (r + 0.0 for r in self.arrivals.rate_range())
        span = self.scaling.epsilon * self.pricing.phi_max
        lam = self.arrivals.lambda_star
        if not lam - span > lo:
            raise ValueError(f"rate range: λ*−ε·φ_max = {lam - span:.6g} ≤ {lo:g}")
        if not lam + span < hi:
            raise ValueError(f"rate range: λ*+ε·φ_max = {lam + span:.6g} ≥ {hi:g}")

    @property
    def epsilon(self) -> float:
        return self.scaling.epsilon

    @property
    def tau(self) -> float:
        return self.scaling.tau

    def with_scaling(self, scaling: ScalingPoint) -> "ChainSpec":
        return ChainSpec(self.kind, self.arrivals, self.pricing, scaling)

    def rate_c(self, z):
        return self.arrivals.lambda_star + self.epsilon * self.pricing.phi_c(np.asarray(z, dtype=float) / self.tau)

    def rate_s(self, z):
        return self.arrivals.mu_star + self.epsilon * self.pricing.phi_s(np.asarray(z, dtype=float) / self.tau)

    def jump_table(self, states) -> tuple[np.ndarray, np.ndarray]:
        return self.arrivals.jump_pmf(self.rate_c(states), self.rate_s(states))

    def p_min(self) -> float:
        span = self.epsilon * self.pricing.phi_max
        lam = self.arrivals.lambda_star
        return self.arrivals.p_min(lam - span, lam + span)

    def drift_check(self, grid_extent: float = 50.0, grid_step: float = 0.01):
        return check_negative_drift(
            self.pricing, grid_extent, grid_step, one_sided=self.kind is ChainKind.SINGLE_SERVER
        )


# ---------------------------------------------------------------------------
# discrete distributions


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability mass on the integers ``lo, lo+1, ..., lo+len-1``."""

    lo: int
    probabilities: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.array(self.probabilities, dtype=float)
        if p.ndim != 1 or len(p) == 0:
            raise ValueError("probabilities must be a nonempty 1-d sequence")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and nonnegative")
        if abs(p.sum() - 1) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "lo", int(self.lo))
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def normalized(cls, lo: int, weights) -> "DiscreteDistribution":
        w = np.asarray(weights, dtype=float)
        return cls(lo, w / w.sum())

    @property
    def hi(self) -> int:
        return self.lo + len(self.probabilities) - 1

    @property
    def states(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    def pmf(self, i) -> np.ndarray | float:
        i = np.asarray(i)
        idx = i - self.lo
        inside = (idx >= 0) & (idx < len(self.probabilities))
        out = np.where(inside, self.probabilities[np.clip(idx, 0, len(self.probabilities) - 1)], 0.0)
        return float(out) if out.ndim == 0 else out

    def expect(self, f: Callable[[np.ndarray], np.ndarray]):
        return np.sum(self.probabilities * f(self.states.astype(float)))

    def mean(self) -> float:
        return float(self.expect(lambda s: s))

    def cdf(self, x):
        c = np.cumsum(self.probabilities)
        idx = np.floor(np.asarray(x, dtype=float)) - self.lo
        out = np.where(idx < 0, 0.0, c[np.clip(idx, 0, len(c) - 1).astype(int)])
        return out

    def _aligned(self, other: "DiscreteDistribution"):
        lo = min(self.lo, other.lo)
        hi = max(self.hi, other.hi)
        a = np.zeros(hi - lo + 1)
        b = np.zeros(hi - lo + 1)
        a[self.lo - lo:self.hi - lo + 1] = self.probabilities
        b[other.lo - lo:other.hi - lo + 1] = other.probabilities
        return a, b

    def tv_distance(self, other: "DiscreteDistribution") -> float:
        a, b = self._aligned(other)
        return 0.5 * float(np.abs(a - b).sum())

    def sup_distance(self, other: "DiscreteDistribution") -> float:
        a, b = self._aligned(other)
        return float(np.abs(a - b).max())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["state", "probability"])
            for s, p in zip(self.states.tolist(), self.probabilities.tolist()):
                w.writerow([s, repr(p)])

    @classmethod
    def from_csv(cls, path) -> "DiscreteDistribution":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        states = np.array([int(r["state"]) for r in rows])
        if np.any(np.diff(states) != 1):
            raise ValueError("states must be consecutive integers")
        return cls(int(states[0]), [float(r["probability"]) for r in rows])


# ---------------------------------------------------------------------------
# one step


def apply_arrivals(kind: ChainKind, state: int, a_c: int, a_s: int) -> tuple[int, int]:
    """Next state and unused service after arrivals ``a_c`` and ``a_s``."""
    nxt = state + a_c - a_s
    if ChainKind(kind) is ChainKind.SINGLE_SERVER and nxt < 0:
        return 0, -nxt
    return nxt, 0


def step(spec: ChainSpec, state: int, rng: np.random.Generator) -> int:
    support = np.asarray(spec.arrivals.support)
    a_c = int(rng.choice(support, p=spec.arrivals.pmf(spec.rate_c(state))))
    a_s = int(rng.choice(support, p=spec.arrivals.pmf(spec.rate_s(state))))
    return apply_arrivals(spec.kind, state, a_c, a_s)[0]


# ---------------------------------------------------------------------------
# simulation


@njit(cache=True)
def _walk(state, t0, t_end, burn_in, tlo, cum, offsets, uniforms, u0, counts, clip_zero):
    """Advance the chain from step ``t0``; stop early when leaving the table.

    Records ``x_t`` for ``burn_in < t``. Returns ``(t, state)`` where ``t`` is
    the first step not yet processed.
    """
    nrows = cum.shape[0]
    width = cum.shape[1]
    for t in range(t0, t_end):
        row = state - tlo
        if row < 0 or row >= nrows:
            return t, state
        if t > burn_in:
            counts[row] += 1
        u = uniforms[t - u0]
        k = 0
        while k < width - 1 and u >= cum[row, k]:
            k += 1
        state += offsets[k]
        if clip_zero and state < 0:
            state = 0
    return t_end, state


def default_window(spec: ChainSpec, drift=None) -> int:
    """Half-width covering the geometric tail of the stationary law.

    Beyond ``K tau`` the chain drifts back at rate at least ``eps * delta``,
    so ``K tau + 10 A / (eps delta)`` covers the tail. The smallest
    certifying ``K`` can have a tiny margin (smooth curves), so the width is
    minimized over a few candidate radii.
    """
    chk = drift if drift is not None else spec.drift_check()
    a = spec.arrivals.a_max

    def width(K, delta):
        return int(math.ceil(spec.tau * max(1.0, K)) + math.ceil(10 * a / (spec.epsilon * min(1.0, delta))))

    if not chk.satisfied or not chk.delta > 0:
        return width(1.0, 1.0)
    best = width(chk.K, chk.delta)
    one_sided = spec.kind is ChainKind.SINGLE_SERVER
    for K in (0.5, 1.0, 2.0, 4.0, 8.0, 16.0):
        if K <= chk.K:
            continue
        c = check_negative_drift(spec.pricing, max(50.0, 4 * K), 0.01, K=K, one_sided=one_sided)
        if c.satisfied and c.delta > 0:
            best = min(best, width(K, c.delta))
    return best


def simulate_empirical(
    spec: ChainSpec,
    n_steps: int,
    burn_in: int,
    seed: int,
    *,
    chunk: int = 1 << 20,
    check_drift: bool = True,
) -> DiscreteDistribution:
    """Occupation frequencies of ``x_{burn_in+1}, ..., x_{n_steps}`` started at 0."""
    if n_steps < 10_000:
        raise ValueError("n_steps must be at least 1e4")
    if not 0 <= burn_in < n_steps:
        raise ValueError("burn_in must lie in [0, n_steps)")
    if check_drift:
        chk = spec.drift_check()
        if not chk.satisfied:
            cond = "Condition 4" if spec.kind is ChainKind.SINGLE_SERVER else "Condition 1"
            raise ConditionError(cond, "negative-drift grid check failed; chain may be transient")
    else:
        chk = None

    single = spec.kind is ChainKind.SINGLE_SERVER
    half = min(default_window(spec, chk), 1_000_000)
    tlo, thi = (0 if single else -half), half
    offsets, cum, counts = None, None, None

    def build(lo, hi):
        offs, p = spec.jump_table(np.arange(lo, hi + 1))
        c = np.cumsum(p, axis=1)
        c[:, -1] = np.inf
        return offs.astype(np.int64), c

    offsets, cum = build(tlo, thi)
    counts = np.zeros(thi - tlo + 1, dtype=np.int64)
    rng = np.random.Generator(np.random.PCG64(seed))
    state, t = 0, 0
    while t < n_steps:
        u0 = t
        m = min(chunk, n_steps - t)
        uniforms = rng.random(m)
        while t < u0 + m:
            t, state = _walk(state, t, u0 + m, burn_in, tlo, cum, offsets, uniforms, u0, counts, single)
            if t < u0 + m:
                # left the tabulated window: double it around the current state
                grow = max(thi - tlo, abs(state))
                nlo = tlo if single else min(tlo - grow, state)
                nhi = max(thi + grow, state)
                _, extra = build(nlo, nhi)
                new_counts = np.zeros(nhi - nlo + 1, dtype=np.int64)
                new_counts[tlo - nlo:thi - nlo + 1] = counts
                tlo, thi, cum, counts = nlo, nhi, extra, new_counts
    if not tlo <= state <= thi:
        nlo, nhi = min(tlo, state), max(thi, state)
        new_counts = np.zeros(nhi - nlo + 1, dtype=np.int64)
        new_counts[tlo - nlo:thi - nlo + 1] = counts
        tlo, thi, counts = nlo, nhi, new_counts
    counts[state - tlo] += 1  # x_{n_steps}

    nz = np.flatnonzero(counts)
    counts = counts[nz[0]:nz[-1] + 1]
    return DiscreteDistribution(tlo + int(nz[0]), counts / counts.sum())


# ---------------------------------------------------------------------------
# exact laws


def _bernoulli_tail_length(pi0: float, head: float, ratio: float, cutoff: float) -> int:
    """Smallest k with geometric tail mass beyond k terms below ``cutoff``."""
    # tail after k terms: pi0 * head * ratio**k / (1 - ratio)
    k = math.log(cutoff * (1 - ratio) / (pi0 * head)) / math.log(ratio)
    return max(1, int(math.ceil(k)))


def exact_stationary_bernoulli(lambda_star: float, epsilon: float, tau: float, *, cutoff: float = 1e-14) -> DiscreteDistribution:
    """Closed-form stationary imbalance law, Bernoulli arrivals, two-price policy."""
    lam = mu = float(lambda_star)
    if not (0 < lam < 1) or not epsilon > 0 or not tau > 0:
        raise ValueError("need 0 < lambda_star < 1, epsilon > 0, tau > 0")
    if not (lam + epsilon < 1 and lam - epsilon > 0):
        raise ValueError("rate range: need λ*+ε < 1 and λ*−ε > 0")
    m = lam * (1 - mu)
    n = int(math.floor(tau))
    pi0 = 1.0 / (2 * n + 1 + 2 * m / epsilon)
    head = m / (m + epsilon * mu)
    ratio = 1 - epsilon / (m + epsilon * mu)
    k = _bernoulli_tail_length(pi0, head, ratio, cutoff)
    tail = pi0 * head * ratio ** np.arange(k)
    probs = np.concatenate([tail[::-1], np.full(2 * n + 1, pi0), tail])
    return DiscreteDistribution.normalized(-(n + k), probs)


def exact_stationary_single_server_bernoulli(lambda_star: float, epsilon: float, tau: float, *, cutoff: float = 1e-14) -> DiscreteDistribution:
    """Closed-form stationary queue law, customer-side two-price, constant service."""
    lam = mu = float(lambda_star)
    if not (0 < lam < 1) or not epsilon > 0 or not tau > 0:
        raise ValueError("need 0 < lambda_star < 1, epsilon > 0, tau > 0")
    if not lam - epsilon > 0:
        raise ValueError("rate range: need λ*−ε > 0")
    m = lam * (1 - mu)
    n = int(math.floor(tau))
    pi0 = 1.0 / (n + 1 + m / epsilon)
    head = m / (m + epsilon * mu)
    ratio = 1 - epsilon / (m + epsilon * mu)
    k = _bernoulli_tail_length(pi0, head, ratio, cutoff)
    probs = np.concatenate([np.full(n + 1, pi0), pi0 * head * ratio ** np.arange(k)])
    return DiscreteDistribution.normalized(0, probs)


def transition_kernel(spec: ChainSpec, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Dense one-step kernel on the truncated state window.

    Mass that would leave the window is put on the nearest boundary state.
    """
    lo = 0 if spec.kind is ChainKind.SINGLE_SERVER else -window
    states = np.arange(lo, window + 1)
    offs, p = spec.jump_table(states)
    n = len(states)
    target = states[:, None] + offs[None, :]
    if spec.kind is ChainKind.SINGLE_SERVER:
        target = np.maximum(target, 0)
    target = np.clip(target, lo, window) - lo
    P = np.zeros((n, n))
    rows = np.broadcast_to(np.arange(n)[:, None], target.shape)
    np.add.at(P, (rows, target), p)
    return states, P


def dump_kernel_csv(spec: ChainSpec, window: int, path) -> None:
    states, P = transition_kernel(spec, window)
    i, j = np.nonzero(P)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from", "to", "prob"])
        for a, b in zip(i.tolist(), j.tolist()):
            w.writerow([int(states[a]), int(states[b]), repr(float(P[a, b]))])


def exact_stationary_truncated(spec: ChainSpec, window: int | None = None, *, boundary_tol: float = 1e-8) -> DiscreteDistribution:
    """Solve ``pi = pi P`` on the truncated window by dense elimination."""
    need = int(math.ceil(spec.tau) + math.ceil(10 * spec.arrivals.a_max / spec.epsilon))
    if window is None:
        window = default_window(spec)
    if window < need:
        raise ValueError(f"window {window} below the tail heuristic ceil(tau) + 10*A_max/eps = {need}")
    states, P = transition_kernel(spec, window)
    n = len(states)
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularKernelError("global-balance system is singular; check Assumption 2.1") from exc
    if not np.all(np.isfinite(pi)) or pi.min() < -1e-12:
        raise SingularKernelError("global-balance solve produced an invalid vector")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    edge = pi[-1] if spec.kind is ChainKind.SINGLE_SERVER else max(pi[0], pi[-1])
    if edge > boundary_tol:
        warnings.warn(f"boundary mass {edge:.3g} exceeds {boundary_tol:g}; enlarge the window",
                      WindowTooSmallWarning, stacklevel=2)
    return DiscreteDistribution(int(states[0]), pi)


def stationarity_residual(spec: ChainSpec, d: DiscreteDistribution) -> float:
    """``||pi P - pi||_1`` on the window of ``d`` (which must be a solver window)."""
    window = d.hi
    states, P = transition_kernel(spec, window)
    pi = d.pmf(states)
    return float(np.abs(pi @ P - pi).sum())


# ---------------------------------------------------------------------------
# bounds


def moment_bound(spec: ChainSpec, delta: float, K: float) -> float:
    """Upper bound on ``E|z|`` from the quadratic Lyapunov drift."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not K > 0:
        raise ValueError("K must be positive")
    a = spec.arrivals.a_max
    eps, tau, phi_max = spec.epsilon, spec.tau, spec.pricing.phi_max
    return (2 * a * a + eps * tau * K * (2 * phi_max + delta)) / (eps * delta)


def anti_concentration_bound(spec: ChainSpec, K: float) -> float:
    """Upper bound on ``P(|z| <= K tau)``."""
    return 4 * K * spec.pricing.phi_max * spec.epsilon * (spec.tau + 1) / spec.p_min()


def central_mass(d: DiscreteDistribution, radius: float) -> float:
    s = d.states
    return float(d.probabilities[np.abs(s) <= radius].sum())
