"""Single-server queue with state-dependent arrival and service rates.

The queue ``q' = max(q + a_c - a_s, 0)`` is the ``SingleServer`` kind of
:class:`~twoq.chain.ChainSpec`; this module adds its construction guard, its
limit laws, the unused-service identity and the bundled sweep presets.
"""

from __future__ import annotations

import numpy as np

from .chain import ArrivalModel, ChainKind, ChainSpec, DiscreteDistribution
from .limits import LimitLaw, limit_law_for
from .pricing import ConditionError, PricingCurvePair, RegimeClass, ScalingPoint

UNUSED_SERVICE_TOL = 1e-9


def single_server_spec(arrivals: ArrivalModel, pricing: PricingCurvePair, scaling: ScalingPoint) -> ChainSpec:
    """Build a single-server spec, rejecting curves without a restoring drift."""
    spec = ChainSpec(ChainKind.SINGLE_SERVER, arrivals, pricing, scaling)
    chk = spec.drift_check()
    if not chk.satisfied:
        raise ConditionError(
            "Condition 4",
            f"no K with phi_c(x) - phi_s(x) < -delta for all x > K (curves {pricing.name!r})",
        )
    return spec


def single_server_limit(spec: ChainSpec, regime: RegimeClass, scaling: str | None = None) -> LimitLaw:
    """Limit law of the scaled stationary queue length.

    ``eps * q`` for finite ``l`` and ``q / tau`` for ``l = inf`` unless
    ``scaling`` says otherwise.
    """
    if spec.kind is not ChainKind.SINGLE_SERVER:
        raise ValueError("expected a single-server spec")
    if scaling is None:
        scaling = "tau" if regime.l == np.inf else "epsilon"
    return limit_law_for(spec, regime, scaling)


def reflection_mass(spec: ChainSpec, d: DiscreteDistribution) -> float:
    """Expected service lost at an empty queue, summed from the kernel."""
    states = d.states
    offs, p = spec.jump_table(states)
    unused = np.maximum(-(states[:, None] + offs[None, :]), 0)
    return float(d.probabilities @ (p * unused).sum(axis=1))


def unused_service_rate(d: DiscreteDistribution, spec: ChainSpec, *, tol: float = UNUSED_SERVICE_TOL) -> float:
    """Long-run unused service per step under the stationary law ``d``.

    Computed as ``eps * E[phi_s(q/tau) - phi_c(q/tau)]`` and checked against
    the reflection mass of the kernel, which must agree at stationarity.
    """
    if spec.kind is not ChainKind.SINGLE_SERVER:
        raise ValueError("expected a single-server spec")
    if d.lo < 0:
        raise ValueError("queue law has negative states")
    by_drift = float(spec.epsilon * d.expect(lambda s: spec.pricing.drift(s / spec.tau)))
    by_kernel = reflection_mass(spec, d)
    if abs(by_drift - by_kernel) > tol:
        raise RuntimeError(
            f"unused-service identity violated: {by_drift!r} vs {by_kernel!r}; is d stationary for spec?"
        )
    return max(by_drift, 0.0)


_BERNOULLI = {"family": "Bernoulli", "lambda_star": 0.5, "mu_star": 0.5}
_QD_RULE = {"a": 1.0, "p": -1.0, "b": 1.0, "q": 0.5}
_CRIT_RULE = {"a": 1.0, "p": -1.0, "b": 1.0, "q": 1.0}


def _experiment(name, curves, schedule, regime, method):
    return {
        "name": name,
        "chain": "SingleServer",
        "curves": curves,
        "arrivals": dict(_BERNOULLI),
        "schedule": schedule,
        "regime": regime,
        "method": method,
    }


PRESETS = {
    "prop5.1-case1": [
        _experiment("prop5.1-case1", {"name": "two_price_single"},
                    {"rule": _QD_RULE, "eta": [1e2, 1e3, 1e4]}, 0, "exact_closed_form"),
    ],
    "prop5.1-case2": [
        _experiment("prop5.1-case2", {"name": "two_price_single"},
                    {"rule": _CRIT_RULE, "eta": [1e1, 1e2, 1e3]}, 1, "exact_closed_form"),
    ],
    "prop5.1-case3": [
        _experiment("prop5.1-case3", {"name": "two_price_single"},
                    {"rule": {"a": 0.05, "p": 0.0, "b": 1.0, "q": 1.0}, "eta": [1e2, 1e3]}, "inf",
                    "exact_closed_form"),
    ],
    "thm5.2-case1": [
        _experiment("thm5.2-case1", {"name": "tanh_single"},
                    {"rule": _QD_RULE, "eta": [10.0, 31.6227766016838, 100.0]}, 0, "truncated_solve"),
    ],
    "thm5.2-case2": [
        _experiment("thm5.2-case2", {"name": "tanh_single"},
                    {"rule": _CRIT_RULE, "eta": [10.0, 31.6227766016838, 100.0]}, 1, "truncated_solve"),
    ],
}
