"""Pricing curves, scaling schedules and the structural checks on them.

A pricing policy perturbs the exogenous arrival rates as

    lambda(z) = lambda* + eps * phi_c(z / tau)
    mu(z)     = mu*     + eps * phi_s(z / tau)

where ``phi_c``/``phi_s`` are fixed bounded curves, ``eps`` sets the size of
the control and ``tau`` the imbalance scale at which it kicks in.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

CurveFn = Callable[[np.ndarray], np.ndarray]

_BOUND_SLACK = 1e-12


class ConditionError(ValueError):
    """A structural condition required by a limit theorem is violated."""

    def __init__(self, condition: str, message: str):
        super().__init__(f"{condition}: {message}")
        self.condition = condition


class ConditionWarning(UserWarning):
    """A result is used outside the hypotheses under which it is proven."""


class RegimeInconclusive(ValueError):
    """None of the regime criteria fired on a schedule."""


class Smoothness(str, enum.Enum):
    PIECEWISE = "piecewise"
    SMOOTH = "smooth"


def _vectorize(fn: CurveFn) -> CurveFn:
    def wrapped(x):
        x = np.asarray(x, dtype=float)
        try:
            y = np.asarray(fn(x), dtype=float)
            if y.shape != x.shape:
                y = np.broadcast_to(y, x.shape).astype(float)
        except (TypeError, ValueError):
            y = np.vectorize(lambda v: float(fn(v)), otypes=[float])(x)
        return y

    return wrapped


@dataclass(frozen=True)
class PricingCurvePair:
    """Customer/server rate-perturbation curves with a uniform bound.

    ``customer`` and ``server`` are the raw curves; use :meth:`phi_c` and
    :meth:`phi_s` to evaluate them, which also enforces ``|phi| <= phi_max``.
    ``breakpoints`` lists known jump/kink locations (in the unscaled
    argument); quadrature uses them as panel edges.
    """

    customer: CurveFn
    server: CurveFn
    phi_max: float
    smoothness: Smoothness = Smoothness.SMOOTH
    breakpoints: tuple[float, ...] = ()
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.phi_max > 0:
            raise ValueError("phi_max must be positive")
        object.__setattr__(self, "customer", _vectorize(self.customer))
        object.__setattr__(self, "server", _vectorize(self.server))
        object.__setattr__(self, "smoothness", Smoothness(self.smoothness))
        object.__setattr__(self, "breakpoints", tuple(sorted(float(b) for b in self.breakpoints)))

    def _checked(self, fn: CurveFn, x, which: str):
        y = fn(x)
        if np.any(np.abs(y) > self.phi_max + _BOUND_SLACK) or not np.all(np.isfinite(y)):
            raise ValueError(f"phi_{which} exceeds phi_max={self.phi_max} on the evaluated points")
        return float(y) if np.ndim(y) == 0 else y

    def phi_c(self, x):
        return self._checked(self.customer, x, "c")

    def phi_s(self, x):
        return self._checked(self.server, x, "s")

    def drift(self, x):
        """``phi_s(x) - phi_c(x)``, the restoring force toward zero."""
        return self.phi_s(x) - self.phi_c(x)

    @property
    def is_two_price(self) -> bool:
        return self.name in ("two_price", "two_price_single")


def two_price_curves() -> PricingCurvePair:
    """phi_c(x) = -1{x > 1}, phi_s(x) = -1{x < -1}."""
    return PricingCurvePair(
        customer=lambda x: -(np.asarray(x) > 1.0).astype(float),
        server=lambda x: -(np.asarray(x) < -1.0).astype(float),
        phi_max=1.0,
        smoothness=Smoothness.PIECEWISE,
        breakpoints=(-1.0, 1.0),
        name="two_price",
    )


def two_price_single_server_curves() -> PricingCurvePair:
    """Two-price control on the customer side only; service rate is constant."""
    return PricingCurvePair(
        customer=lambda x: -(np.asarray(x) > 1.0).astype(float),
        server=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        phi_max=1.0,
        smoothness=Smoothness.PIECEWISE,
        breakpoints=(1.0,),
        name="two_price_single",
    )


def tanh_curves(scale: float = 1.0) -> PricingCurvePair:
    """Smooth two-sided curves with ``phi_s - phi_c = tanh(x / scale)``."""
    if not scale > 0:
        raise ValueError("tanh scale must be positive")
    return PricingCurvePair(
        customer=lambda x: -0.5 * (1.0 + np.tanh(np.asarray(x) / scale)),
        server=lambda x: -0.5 * (1.0 - np.tanh(np.asarray(x) / scale)),
        phi_max=1.0,
        smoothness=Smoothness.SMOOTH,
        name="tanh",
        params={"scale": scale},
    )


def tanh_single_server_curves(scale: float = 1.0, shift: float = 0.0) -> PricingCurvePair:
    """Smooth customer-side curve ``-(1 + tanh((x - shift)/scale))/2``, constant service."""
    if not scale > 0:
        raise ValueError("tanh scale must be positive")
    return PricingCurvePair(
        customer=lambda x: -0.5 * (1.0 + np.tanh((np.asarray(x) - shift) / scale)),
        server=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        phi_max=1.0,
        smoothness=Smoothness.SMOOTH,
        name="tanh_single",
        params={"scale": scale, "shift": shift},
    )


def zero_curves() -> PricingCurvePair:
    return PricingCurvePair(
        customer=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        server=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        phi_max=1.0,
        smoothness=Smoothness.SMOOTH,
        name="zero",
    )


def knot_curves(
    knots_c: Sequence[Sequence[float]],
    knots_s: Sequence[Sequence[float]],
    smoothness: Smoothness | str = Smoothness.PIECEWISE,
) -> PricingCurvePair:
    """Piecewise-linear curves through ``(x, y)`` knots, constant beyond the ends."""
    arrays = []
    for label, knots in (("c", knots_c), ("s", knots_s)):
        k = np.asarray(knots, dtype=float)
        if k.ndim != 2 or k.shape[1] != 2 or len(k) == 0:
            raise ValueError(f"knots_{label} must be a nonempty list of (x, y) pairs")
        if np.any(np.diff(k[:, 0]) <= 0):
            raise ValueError(f"knots_{label} must be strictly increasing in x")
        arrays.append(k)
    kc, ks = arrays
    phi_max = float(max(np.abs(kc[:, 1]).max(), np.abs(ks[:, 1]).max()))
    return PricingCurvePair(
        customer=lambda x: np.interp(x, kc[:, 0], kc[:, 1]),
        server=lambda x: np.interp(x, ks[:, 0], ks[:, 1]),
        phi_max=phi_max if phi_max > 0 else 1.0,
        smoothness=smoothness,
        breakpoints=tuple(np.union1d(kc[:, 0], ks[:, 0])),
        name="knots",
        params={"knots_c": kc.tolist(), "knots_s": ks.tolist()},
    )


NAMED_CURVES = {
    "two_price": two_price_curves,
    "two_price_single": two_price_single_server_curves,
    "tanh": tanh_curves,
    "tanh_single": tanh_single_server_curves,
    "zero": zero_curves,
}


# ---------------------------------------------------------------------------
# scaling


@dataclass(frozen=True)
class ScalingPoint:
    epsilon: float
    tau: float
    eta: float = float("nan")

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError("epsilon must be positive and finite")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError("tau must be positive and finite")

    @property
    def product(self) -> float:
        return self.epsilon * self.tau


class RegimeLabel(str, enum.Enum):
    QUALITY_DRIVEN = "QualityDriven"
    CRITICAL = "Critical"
    PROFIT_DRIVEN = "ProfitDriven"


@dataclass(frozen=True)
class RegimeClass:
    """Limit ``l`` of ``eps * tau``; the label is derived from it."""

    l: float

    def __post_init__(self):
        if math.isnan(self.l) or self.l < 0:
            raise ValueError("l must be a nonnegative extended real")

    @property
    def label(self) -> RegimeLabel:
        if self.l == 0:
            return RegimeLabel.QUALITY_DRIVEN
        if math.isinf(self.l):
            return RegimeLabel.PROFIT_DRIVEN
        return RegimeLabel.CRITICAL


def classify_regime(
    schedule: Sequence[ScalingPoint],
    *,
    converged_rtol: float = 1e-3,
    low: float = 1e-2,
    high: float = 1e2,
) -> RegimeClass:
    """Infer the regime from the trend of ``eps * tau`` along a schedule.

    Raises
    ------
    RegimeInconclusive
        If the products neither settle nor clearly head to 0 or infinity.
    """
    if len(schedule) == 0:
        raise ValueError("schedule: nonempty required")
    eps = np.array([p.epsilon for p in schedule])
    tau = np.array([p.tau for p in schedule])
    if np.any(np.diff(eps) >= 0) or np.any(np.diff(tau) <= 0):
        raise ValueError("schedule must have strictly decreasing epsilon and strictly increasing tau")

    prod = eps * tau
    n = len(prod)
    quarter = prod[-max(2, n // 4):] if n > 1 else prod
    final = prod[-1]
    if np.max(np.abs(quarter - final)) / final < converged_rtol:
        return RegimeClass(float(final))

    half = prod[n // 2:] if n >= 4 else prod
    idx = np.arange(len(half))
    slope = np.polyfit(idx, np.log(half), 1)[0] if len(half) > 1 else 0.0
    if slope < 0 and final <= low:
        return RegimeClass(0.0)
    if slope > 0 and final >= high:
        return RegimeClass(math.inf)
    raise RegimeInconclusive(
        f"eps*tau trend inconclusive (final value {final:.4g}, log-slope {slope:.3g})"
    )


# ---------------------------------------------------------------------------
# conditions


@dataclass(frozen=True)
class DriftCheck:
    satisfied: bool
    delta: float
    K: float


def _grid(extent: float, step: float) -> np.ndarray:
    if not extent > 0 or not step > 0:
        raise ValueError("grid extent and step must be positive")
    n = int(round(extent / step))
    return step * np.arange(-n, n + 1, dtype=float)


def check_negative_drift(
    p: PricingCurvePair,
    grid_extent: float = 50.0,
    grid_step: float = 0.01,
    *,
    K: float | None = None,
    one_sided: bool = False,
) -> DriftCheck:
    """Grid certificate for the negative-drift condition.

    Looks for ``K > 0`` with ``phi_c - phi_s < 0`` on every grid point
    ``x > K`` and ``> 0`` on every grid point ``x < -K`` (only the right
    side when ``one_sided``, the single-server version). Without an explicit
    ``K`` the smallest certifying grid point is used. ``delta`` is the
    smallest margin ``|phi_c - phi_s|`` over the certified tails.
    """
    x = _grid(grid_extent, grid_step)
    d = p.phi_c(x) - p.phi_s(x)
    pos = x > 0
    xr = x[pos]
    dr = d[pos]
    # right_ok[i]: every grid point strictly right of xr[i] has d < 0
    neg_tail = (dr < 0)[::-1]
    right_ok = np.append(np.logical_and.accumulate(neg_tail)[::-1][1:], False)
    right_margin = np.append(np.minimum.accumulate((-dr)[::-1])[::-1][1:], np.inf)

    if one_sided:
        ok = right_ok
        margin = right_margin
    else:
        xl = -x[x < 0][::-1]  # mirror: xl[i] == xr[i]
        dl = d[x < 0][::-1]
        pos_tail = (dl > 0)[::-1]
        left_ok = np.append(np.logical_and.accumulate(pos_tail)[::-1][1:], False)
        left_margin = np.append(np.minimum.accumulate(dl[::-1])[::-1][1:], np.inf)
        assert np.allclose(xl, xr)
        ok = right_ok & left_ok
        margin = np.minimum(right_margin, left_margin)

    if K is not None:
        if not K > 0:
            raise ValueError("K must be positive")
        i = int(np.searchsorted(xr, K, side="right")) - 1
        i = max(i, 0)
        if i >= len(xr) - 1 or not ok[i]:
            return DriftCheck(False, 0.0, float(K))
        return DriftCheck(bool(margin[i] > 0), float(margin[i]), float(K))

    hits = np.flatnonzero(ok[:-1])
    if len(hits) == 0:
        return DriftCheck(False, 0.0, math.inf)
    i = hits[0]
    return DriftCheck(bool(margin[i] > 0), float(margin[i]), float(xr[i]))


@dataclass(frozen=True)
class SymmetryCheck:
    symmetric: bool
    limit_plus: float
    limit_minus: float
    stable_tails: bool
    # the condition's middle term read literally: phi_c(-inf) - phi_s(+inf)
    limit_minus_literal: float
    symmetric_literal: bool


def tail_limits(p: PricingCurvePair, probe: float = 1e3) -> tuple[dict, bool]:
    """Estimate ``phi(+-inf)`` by two-probe agreement at ``+-probe`` and ``+-2 probe``."""
    if not probe > 0:
        raise ValueError("probe must be positive")
    pts = np.array([probe, 2 * probe, -probe, -2 * probe])
    c, s = p.phi_c(pts), p.phi_s(pts)
    stable = bool(np.all(np.abs(c[[0, 2]] - c[[1, 3]]) <= 1e-9) and np.all(np.abs(s[[0, 2]] - s[[1, 3]]) <= 1e-9))
    limits = {"c+": c[1], "c-": c[3], "s+": s[1], "s-": s[3]}
    return limits, stable


def check_symmetry(p: PricingCurvePair, probe: float = 1e3) -> SymmetryCheck:
    lim, stable = tail_limits(p, probe)
    plus = lim["s+"] - lim["c+"]
    minus = lim["c-"] - lim["s-"]
    literal = lim["c-"] - lim["s+"]
    sym = stable and abs(plus - 1) <= 1e-9 and abs(minus - 1) <= 1e-9
    sym_lit = stable and abs(plus - 1) <= 1e-9 and abs(literal - 1) <= 1e-9
    return SymmetryCheck(bool(sym), float(plus), float(minus), stable, float(literal), bool(sym_lit))
