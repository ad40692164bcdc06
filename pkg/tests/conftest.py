"""Shared oracles and the acceptance-summary hook."""

import numpy as np
import pytest

from twoq import ArrivalModel, ChainKind, ChainSpec, ScalingPoint

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def birth_death_stationary(rate_c, rate_s, lo, hi, *, reflect_at_zero=False):
    """Stationary law of a +-1 Bernoulli chain from the product of up/down ratios.

    Independent of the package's kernel builder and linear solver: with
    Bernoulli arrivals the imbalance moves by at most one, so detailed
    balance ``pi[i+1] * down(i+1) = pi[i] * up(i)`` pins the law.
    """
    z = np.arange(lo, hi + 1, dtype=float)
    lam, mu = rate_c(z), rate_s(z)
    up = lam * (1 - mu)
    down = mu * (1 - lam)
    log_pi = np.concatenate([[0.0], np.cumsum(np.log(up[:-1]) - np.log(down[1:]))])
    pi = np.exp(log_pi - log_pi.max())
    return z.astype(int), pi / pi.sum()


@pytest.fixture
def bernoulli_half():
    return ArrivalModel.bernoulli(0.5)


def make_spec(kind, curves, eps, tau, lam=0.5):
    return ChainSpec(ChainKind(kind), ArrivalModel.bernoulli(lam), curves, ScalingPoint(eps, tau))
