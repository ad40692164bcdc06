"""Heavy-traffic limit laws of the scaled imbalance and queue length.

Closed forms (Laplace, Hybrid, Exponential, uniform on a set) and Gibbs
laws with density proportional to ``exp(-int_0^x g)``, built by adaptive
piecewise Chebyshev quadrature.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .chain import ChainKind, ChainSpec
from .pricing import (
    ConditionError,
    ConditionWarning,
    PricingCurvePair,
    RegimeClass,
    RegimeLabel,
    Smoothness,
    check_symmetry,
    tail_limits,
)
from .quadrature import PiecewiseChebyshev, adaptive_chebyshev

# e^{-40} ~ 4e-18: tails beyond this are below double-precision CDF resolution
_TAIL_NATS = 40.0


class DivergentNormalization(ArithmeticError):
    """``exp(-G)`` is not integrable (the drift does not restore)."""


class PhiStarUnbounded(ValueError):
    """The minimizer set reaches the edge of the search grid."""


# ---------------------------------------------------------------------------
# closed-form helpers


def laplace_cdf(b: float, x):
    x = np.asarray(x, dtype=float)
    return np.where(x < 0, 0.5 * np.exp(np.minimum(x, 0) / b), 1 - 0.5 * np.exp(-np.maximum(x, 0) / b))


def hybrid_cdf(b: float, c: float, x):
    """CDF of Hybrid(b, c): Laplace(0, b) tails around a uniform plateau on [-c, c)."""
    if not b > 0 or not c >= 0:
        raise ValueError("Hybrid requires b > 0 and c >= 0")
    x = np.asarray(x, dtype=float)
    k = 1.0 / (2 * (b + c))
    left = b * k * np.exp((np.minimum(x, -c) + c) / b)
    mid = k * (x + c) + b * k
    right = 1 - b * k * np.exp(-(np.maximum(x, c) - c) / b)
    out = np.where(x < -c, left, np.where(x < c, mid, right))
    return float(out) if out.ndim == 0 else out


def hybrid_pdf(b: float, c: float, x):
    if not b > 0 or not c >= 0:
        raise ValueError("Hybrid requires b > 0 and c >= 0")
    x = np.asarray(x, dtype=float)
    excess = np.maximum(np.abs(x) - c, 0.0)
    return np.exp(-excess / b) / (2 * (b + c))


def hybrid_mgf(b: float, c: float, t):
    """``E exp(tX)`` for X ~ Hybrid(b, c), valid for ``|t| < 1/b``."""
    if not b > 0 or not c >= 0:
        raise ValueError("Hybrid requires b > 0 and c >= 0")
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) >= 1 / b):
        raise ValueError("hybrid_mgf requires |t| < 1/b")
    small = np.abs(t) < 1e-8
    ts = np.where(small, 1.0, t)
    middle = np.where(small, 2 * c * (1 + (c * t) ** 2 / 6), 2 * np.sinh(c * ts) / ts)
    val = (np.exp(-c * t) / (1 / b + t) + middle + np.exp(c * t) / (1 / b - t)) / (2 * (b + c))
    return float(val) if val.ndim == 0 else val


def one_sided_hybrid_cdf(b: float, c: float, x):
    """Uniform on [0, c) stitched to an exponential tail of mean b."""
    x = np.asarray(x, dtype=float)
    k = 1.0 / (b + c)
    out = np.where(x < 0, 0.0, np.where(x < c, k * x, 1 - b * k * np.exp(-(np.maximum(x, c) - c) / b)))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# laws


class LimitLaw:
    """Common interface: pdf/cdf/ppf/sampling plus quadrature expectations."""

    family: str = "abstract"
    breakpoints: tuple[float, ...] = ()

    def pdf(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def cdf_left(self, x):
        return self.cdf(x)

    def atoms(self) -> np.ndarray:
        return np.empty(0)

    def support(self) -> tuple[float, float]:
        """Interval outside which the law has negligible (< 1e-16) mass."""
        raise NotImplementedError

    def ppf(self, u):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.ppf(rng.random(n))

    def mgf(self, t):
        return self.expect(lambda x: np.exp(t * x))

    def params(self) -> dict:
        return {}

    def summary(self) -> dict:
        return {"family": self.family, "params": self.params()}

    def _panels(self) -> PiecewiseChebyshev:
        if getattr(self, "_pdf_panels", None) is None:
            lo, hi = self.support()
            width = min((hi - lo) / 16, 0.5)
            self._pdf_panels = adaptive_chebyshev(
                self.pdf, lo, hi, breakpoints=self.breakpoints, tol=1e-14, max_width=width
            )
        return self._pdf_panels

    def expect(self, f: Callable[[np.ndarray], np.ndarray]):
        """``E f(X)`` by Gauss-Legendre on the law's adaptive panels."""
        x, w = self._panels().gauss_panels()
        return np.sum(w * self.pdf(x) * f(x))

    def grid(self, n: int = 1001) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lo, hi = self.support()
        x = np.linspace(lo, hi, n)
        return x, np.asarray(self.pdf(x), dtype=float), np.asarray(self.cdf(x), dtype=float)


class Laplace(LimitLaw):
    family = "Laplace"

    def __init__(self, b: float):
        if not b > 0:
            raise ValueError("Laplace scale b must be positive")
        self.b = float(b)
        self.breakpoints = (0.0,)

    def pdf(self, x):
        return np.exp(-np.abs(np.asarray(x, dtype=float)) / self.b) / (2 * self.b)

    def cdf(self, x):
        return laplace_cdf(self.b, x)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u < 0.5, self.b * np.log(2 * np.maximum(u, 1e-300)),
                        -self.b * np.log(2 * np.maximum(1 - u, 1e-300)))

    def mgf(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(np.abs(t) >= 1 / self.b):
            raise ValueError("Laplace MGF requires |t| < 1/b")
        return 1.0 / (1.0 - (self.b * t) ** 2)

    def support(self):
        return (-_TAIL_NATS * self.b, _TAIL_NATS * self.b)

    def params(self):
        return {"b": self.b}


class Hybrid(LimitLaw):
    family = "Hybrid"

    def __init__(self, b: float, c: float):
        if not b > 0 or not c >= 0:
            raise ValueError("Hybrid requires b > 0 and c >= 0")
        self.b, self.c = float(b), float(c)
        self.breakpoints = (-self.c, self.c)

    def pdf(self, x):
        return hybrid_pdf(self.b, self.c, x)

    def cdf(self, x):
        return hybrid_cdf(self.b, self.c, x)

    def ppf(self, u):
        b, c = self.b, self.c
        u = np.asarray(u, dtype=float)
        tail = b / (2 * (b + c))
        left = -c + b * np.log(np.maximum(u, 1e-300) / tail)
        mid = -c + (u - tail) * 2 * (b + c)
        right = c - b * np.log(np.maximum(1 - u, 1e-300) / tail)
        return np.where(u < tail, left, np.where(u < 1 - tail, mid, right))

    def mgf(self, t):
        return hybrid_mgf(self.b, self.c, t)

    def support(self):
        return (-self.c - _TAIL_NATS * self.b, self.c + _TAIL_NATS * self.b)

    def params(self):
        return {"b": self.b, "c": self.c}


class Exponential(LimitLaw):
    family = "Exponential"

    def __init__(self, mean: float):
        if not mean > 0:
            raise ValueError("Exponential mean must be positive")
        self.mean = float(mean)
        self.breakpoints = (0.0,)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, np.exp(-np.maximum(x, 0) / self.mean) / self.mean, 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, -np.expm1(-np.maximum(x, 0) / self.mean), 0.0)

    def ppf(self, u):
        return -self.mean * np.log1p(-np.asarray(u, dtype=float))

    def mgf(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t >= 1 / self.mean):
            raise ValueError("Exponential MGF requires t < 1/mean")
        return 1.0 / (1.0 - self.mean * t)

    def support(self):
        return (0.0, _TAIL_NATS * self.mean)

    def params(self):
        return {"mean": self.mean}


class UniformOnSet(LimitLaw):
    """Uniform over a finite union of closed intervals.

    Zero-length intervals only carry mass when every interval is degenerate,
    in which case the law is uniform over those points.
    """

    family = "UniformOnSet"

    def __init__(self, intervals: Sequence[tuple[float, float]]):
        iv = sorted((float(a), float(b)) for a, b in intervals)
        if not iv:
            raise ValueError("UniformOnSet needs at least one interval")
        if any(b < a for a, b in iv):
            raise ValueError("intervals must satisfy a <= b")
        self.intervals = iv
        lengths = np.array([b - a for a, b in iv])
        self.total = float(lengths.sum())
        self._points = np.array([a for a, b in iv]) if self.total == 0 else np.empty(0)
        self.breakpoints = tuple(v for ab in iv for v in ab)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.total == 0:
            return np.zeros_like(x)
        inside = np.zeros(x.shape, dtype=bool)
        for a, b in self.intervals:
            inside |= (x >= a) & (x <= b)
        return inside / self.total

    def _mass_below(self, x, strict):
        x = np.asarray(x, dtype=float)
        if self.total == 0:
            pts = self._points
            cmp = x[..., None] > pts if strict else x[..., None] >= pts
            return cmp.sum(axis=-1) / len(pts)
        acc = np.zeros_like(x)
        for a, b in self.intervals:
            acc += np.clip(x, a, b) - a
        return acc / self.total

    def cdf(self, x):
        return self._mass_below(x, strict=False)

    def cdf_left(self, x):
        return self._mass_below(x, strict=True)

    def atoms(self):
        return self._points

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        if self.total == 0:
            idx = np.minimum((u * len(self._points)).astype(int), len(self._points) - 1)
            return self._points[idx]
        ends = np.cumsum([b - a for a, b in self.intervals]) / self.total
        starts = np.concatenate([[0.0], ends[:-1]])
        out = np.empty_like(u)
        for (a, b), s, e in zip(self.intervals, starts, ends):
            sel = (u >= s) & (u <= e)
            out[sel] = a + (u[sel] - s) * self.total
        return out

    def expect(self, f):
        if self.total == 0:
            return np.mean(f(self._points))
        return super().expect(f)

    def support(self):
        return (self.intervals[0][0], self.intervals[-1][1])

    def params(self):
        return {"intervals": [list(ab) for ab in self.intervals]}


# ---------------------------------------------------------------------------
# Gibbs


@dataclass(frozen=True)
class GFactor:
    """Restoring drift ``g(x) = 2b/sigma_sum * (phi_s(x/c) - phi_c(x/c))``."""

    b: float
    c: float
    sigma_sum: float
    curves: PricingCurvePair

    def __post_init__(self):
        if not (self.b > 0 and self.c > 0 and self.sigma_sum > 0):
            raise ValueError("GFactor needs b, c, sigma_sum > 0")

    def __call__(self, x):
        x = np.asarray(x, dtype=float) / self.c
        return (2 * self.b / self.sigma_sum) * (self.curves.phi_s(x) - self.curves.phi_c(x))

    @property
    def bound(self) -> float:
        return 2 * self.b * 2 * self.curves.phi_max / self.sigma_sum

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(self.c * p for p in self.curves.breakpoints)

    def describe(self) -> dict:
        return {"b": self.b, "c": self.c, "sigma_sum": self.sigma_sum, "curves": self.curves.name}


def _vectorized(g):
    def f(x):
        x = np.asarray(x, dtype=float)
        y = np.asarray(g(x), dtype=float)
        return np.broadcast_to(y, x.shape) if y.shape != x.shape else y

    return f


class Gibbs(LimitLaw):
    """Density ``exp(-G(x)) / Z`` with ``G(x) = int_0^x g``.

    With ``positive=True`` the law is restricted to ``[0, inf)`` (Gibbs_+).

    Parameters
    ----------
    g : callable
        Vectorized drift. Jump locations may be advertised through a
        ``breakpoints`` attribute; undeclared jumps are found by bisection.
    tol : float
        Relative accuracy target for the tabulated ``exp(-G)``.
    """

    def __init__(self, g, tol: float = 1e-10, *, positive: bool = False, max_extent: float = 1e7):
        self.g = g
        self.tol = float(tol)
        self.positive = positive
        self.family = "GibbsPlus" if positive else "Gibbs"
        f = _vectorized(g)
        bps = tuple(float(b) for b in getattr(g, "breakpoints", ()))
        self.breakpoints = tuple(sorted(set(bps) | {0.0}))
        reach = max([1.0] + [2 * abs(b) for b in bps])
        right, left = reach, (0.0 if positive else reach)
        gtol = min(1e-13, self.tol)

        for _ in range(64):
            if right > max_extent or left > max_extent:
                raise DivergentNormalization(
                    "exp(-G) not integrable within |x| <= %g; the drift check failed" % max_extent
                )
            lo, hi = -left, right
            gp = adaptive_chebyshev(f, lo, hi, breakpoints=self.breakpoints, tol=gtol,
                                    max_width=min((hi - lo) / 8, max(0.5, (hi - lo) / 256)))
            G = gp.antiderivative(0.0)
            pts = G.sample_points()
            gmin = float(np.min(G(pts)))
            grow_r = float(G(np.array([hi]))[0]) - gmin < _TAIL_NATS
            grow_l = (not positive) and float(G(np.array([lo]))[0]) - gmin < _TAIL_NATS
            if not (grow_r or grow_l):
                break
            right *= 2 if grow_r else 1
            left *= 2 if grow_l else 1
        else:
            raise DivergentNormalization("support search did not converge")

        self._G = G
        self._gmin = gmin
        self._lo, self._hi = lo, hi
        h = lambda x: np.exp(-(G(x) - gmin))
        hp = adaptive_chebyshev(h, lo, hi, breakpoints=tuple(gp.edges), tol=min(self.tol, 1e-13) * 1e-1,
                                scale=1.0, max_width=max(0.5, (hi - lo) / 256))
        self._H = hp.antiderivative(lo)
        self._hp = hp
        self._zp = float(self._H(np.array([hi]))[0])
        if not (self._zp > 0 and math.isfinite(self._zp)):
            raise DivergentNormalization("normalization is not finite and positive")
        self.normalization = self._zp * math.exp(-gmin)
        self._pdf_panels = hp
        self._ppf = None

    def potential(self, x):
        """``G(x) = int_0^x g`` on the tabulated range."""
        return self._G(np.clip(np.asarray(x, dtype=float), self._lo, self._hi))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self._lo) & (x <= self._hi)
        val = np.exp(-(self._G(np.clip(x, self._lo, self._hi)) - self._gmin)) / self._zp
        return np.where(inside, val, 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        val = np.clip(self._H(np.clip(x, self._lo, self._hi)) / self._zp, 0.0, 1.0)
        return np.where(x < self._lo, 0.0, np.where(x >= self._hi, 1.0, val))

    def ppf(self, u, newton_steps: int = 3):
        """Monotone cubic interpolation of the tabulated CDF, polished by Newton steps."""
        if self._ppf is None:
            xs = self._hp.sample_points()
            fs = self.cdf(xs)
            fu, idx = np.unique(fs, return_index=True)
            self._ppf = PchipInterpolator(fu, xs[idx])
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        x = self._ppf(u)
        lo = 0.0 if self.positive else self._lo
        for _ in range(newton_steps):
            dens = self.pdf(x)
            ok = dens > 1e-300
            dx = np.where(ok, (self.cdf(x) - u) / np.where(ok, dens, 1.0), 0.0)
            x = np.clip(x - dx, lo, self._hi)
        return x

    def support(self):
        return (self._lo, self._hi)

    def params(self):
        desc = self.g.describe() if hasattr(self.g, "describe") else {"g": getattr(self.g, "__name__", "custom")}
        return {**desc, "normalization": self.normalization, "positive": self.positive}


def gibbs_law(g, tol: float = 1e-10) -> Gibbs:
    return Gibbs(g, tol)


def gibbs_plus_law(g, tol: float = 1e-10) -> Gibbs:
    return Gibbs(g, tol, positive=True)


def laplace_law(b: float) -> Laplace:
    return Laplace(b)


# ---------------------------------------------------------------------------
# minimizer set


def potential_on_grid(p: PricingCurvePair, x: np.ndarray, order: int = 8) -> np.ndarray:
    """``int_0^x (phi_s - phi_c)`` at grid points (grid must contain 0)."""
    t, w = np.polynomial.legendre.leggauss(order)
    lo, hi = x[:-1], x[1:]
    half = 0.5 * (hi - lo)
    nodes = 0.5 * (lo + hi)[:, None] + half[:, None] * t[None, :]
    cell = (p.drift(nodes) * w[None, :]).sum(axis=1) * half
    cum = np.concatenate([[0.0], np.cumsum(cell)])
    i0 = int(np.flatnonzero(x == 0)[0])
    return cum - cum[i0]


def phi_star(p: PricingCurvePair, extent: float = 20.0, grid_step: float = 1e-3, *, half_line: bool = False) -> list[tuple[float, float]]:
    """Minimizer set of ``x -> int_0^x (phi_s - phi_c)``, as merged grid intervals."""
    if not extent > 0 or not grid_step > 0:
        raise ValueError("extent and grid_step must be positive")
    n = int(round(extent / grid_step))
    x = grid_step * np.arange(0 if half_line else -n, n + 1, dtype=float)
    phi = potential_on_grid(p, x)
    best = phi.min()
    hit = phi <= best + 1e-9 * (1 + abs(best))
    edges = np.flatnonzero(np.diff(np.concatenate([[0], hit.astype(int), [0]])))
    runs = list(zip(edges[::2], edges[1::2] - 1))
    for a, b in runs:
        if b == len(x) - 1 or (a == 0 and not half_line):
            raise PhiStarUnbounded("Φ* possibly unbounded: minimum reached at the grid boundary")
    return [(float(x[a]), float(x[b])) for a, b in runs]


# ---------------------------------------------------------------------------
# regime -> law


def _tail_gap(p: PricingCurvePair) -> float:
    lim, stable = tail_limits(p)
    if not stable:
        raise ConditionError("Condition 3", "tails of the pricing curves do not stabilize")
    return float(lim["s+"] - lim["c+"])


def limit_law_for(spec: ChainSpec, regime: RegimeClass, scaling: str = "epsilon", *, tol: float = 1e-10) -> LimitLaw:
    """Limit law of ``eps * z`` (``scaling='epsilon'``) or ``z / tau`` (``'tau'``).

    Raises :class:`ConditionError` naming the violated condition; emits a
    :class:`ConditionWarning` when a law is used outside its proven setting.
    """
    if scaling not in ("epsilon", "tau"):
        raise ValueError("scaling must be 'epsilon' or 'tau'")
    single = spec.kind is ChainKind.SINGLE_SERVER
    chk = spec.drift_check()
    if not chk.satisfied:
        raise ConditionError("Condition 4" if single else "Condition 1",
                             "negative-drift grid check failed")
    curves = spec.pricing
    sigma_sum = spec.arrivals.sigma_sum
    label = regime.label

    if label is RegimeLabel.QUALITY_DRIVEN:
        if scaling != "epsilon":
            raise ValueError("quality-driven limit is stated for eps * z only")
        if single:
            gap = _tail_gap(curves)
            if not gap > 0:
                raise ConditionError("Condition 4", "phi_s(inf) - phi_c(inf) must be positive")
            return Exponential(sigma_sum / (2 * gap))
        sym = check_symmetry(curves)
        if not sym.stable_tails:
            raise ConditionError("Condition 3", "tails of the pricing curves do not stabilize")
        if not sym.symmetric:
            raise ConditionError("Condition 3", f"tail gaps are {sym.limit_plus:g} and {sym.limit_minus:g}, need both 1")
        return Laplace(sigma_sum / 2)

    if label is RegimeLabel.CRITICAL:
        if curves.smoothness is Smoothness.PIECEWISE and not curves.is_two_price:
            warnings.warn("Condition 2: curves are not tagged smooth (infinitely differentiable); "
                          "the Gibbs limit is unproven here", ConditionWarning, stacklevel=2)
        l = regime.l
        g = GFactor(1.0, l, sigma_sum, curves) if scaling == "epsilon" else GFactor(l, 1.0, sigma_sum, curves)
        return Gibbs(g, tol, positive=single)

    if scaling != "tau":
        raise ValueError("profit-driven limit is stated for z / tau only")
    intervals = phi_star(curves, half_line=single)
    if single and not curves.is_two_price:
        warnings.warn("single-server profit-driven limit is only established for the two-price policy",
                      ConditionWarning, stacklevel=2)
    if len(intervals) > 1:
        warnings.warn("Φ* is a union of intervals; uniform-by-length is an untested extrapolation",
                      ConditionWarning, stacklevel=2)
    return UniformOnSet(intervals)
