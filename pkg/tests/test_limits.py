import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from conftest import make_spec
from twoq.chain import ChainKind
from twoq.limits import (
    DivergentNormalization,
    Exponential,
    GFactor,
    Gibbs,
    Hybrid,
    Laplace,
    PhiStarUnbounded,
    UniformOnSet,
    gibbs_law,
    gibbs_plus_law,
    hybrid_cdf,
    hybrid_mgf,
    hybrid_pdf,
    laplace_cdf,
    laplace_law,
    limit_law_for,
    one_sided_hybrid_cdf,
    phi_star,
)
from twoq.pricing import (
    ConditionError,
    ConditionWarning,
    PricingCurvePair,
    RegimeClass,
    Smoothness,
    knot_curves,
    tanh_curves,
    tanh_single_server_curves,
    two_price_curves,
    two_price_single_server_curves,
    zero_curves,
)

TWO = ChainKind.TWO_SIDED
ONE = ChainKind.SINGLE_SERVER
SIGMA = 0.5  # sigma_c + sigma_s for Bernoulli(0.5)


def quad(f, a, b, points=None):
    return integrate.quad(f, a, b, points=points, epsabs=1e-14, epsrel=1e-13, limit=500)[0]


# ---------------------------------------------------------------------------
# closed forms


def test_laplace_basics():
    law = laplace_law(0.25)
    assert law.cdf(0.0) == 0.5
    assert law.mgf(1.0) == pytest.approx(1 / (1 - 0.0625), abs=1e-14)
    ref = quad(lambda x: math.exp(x) * math.exp(-abs(x) / 0.25) / 0.5, -30, 30, points=[0])
    assert law.mgf(1.0) == pytest.approx(ref, abs=1e-10)
    with pytest.raises(ValueError):
        laplace_law(0)


def test_hybrid_cdf_values():
    assert hybrid_cdf(0.25, 1, 1) == pytest.approx(0.9, abs=1e-15)
    ref = quad(lambda x: float(hybrid_pdf(0.25, 1, x)), -20, 1, points=[-1])
    assert hybrid_cdf(0.25, 1, 1) == pytest.approx(ref, abs=1e-12)
    with pytest.raises(ValueError):
        hybrid_cdf(0, 1, 0.0)
    with pytest.raises(ValueError):
        hybrid_cdf(0.25, -1, 0.0)


@given(st.floats(0.01, 10), st.floats(0, 10))
def test_hybrid_median_is_zero(b, c):
    assert hybrid_cdf(b, c, 0.0) == pytest.approx(0.5, abs=1e-15)


def test_hybrid_degenerates_to_laplace():
    x = np.linspace(-5, 5, 10_000)
    assert np.abs(hybrid_cdf(0.25, 0, x) - laplace_cdf(0.25, x)).max() <= 1e-12


def test_hybrid_approaches_laplace_as_plateau_shrinks():
    x = np.linspace(-5, 5, 10_000)
    dist = [np.abs(hybrid_cdf(0.25, l, x) - laplace_cdf(0.25, x)).max() for l in (1, 0.1, 0.01)]
    assert dist[0] > dist[1] > dist[2]
    assert dist[2] <= 1e-2


def test_hybrid_mgf_values():
    assert hybrid_mgf(0.25, 1, 1e-12) == pytest.approx(1, abs=1e-12)
    assert hybrid_mgf(0.25, 1, 0.0) == pytest.approx(1, abs=1e-15)
    assert hybrid_mgf(0.25, 0, 1.0) == pytest.approx(1 / (1 - 0.0625), abs=1e-13)
    ref = quad(lambda x: math.exp(0.5 * x) * float(hybrid_pdf(0.25, 1, x)), -40, 40, points=[-1, 1])
    assert hybrid_mgf(0.25, 1, 0.5) == pytest.approx(ref, abs=1e-8)
    with pytest.raises(ValueError):
        hybrid_mgf(0.25, 1, 4.0)


def test_one_sided_hybrid_closed_form():
    # P(q <= x) = x / (1 + m) on [0, 1) with m = 0.25
    assert one_sided_hybrid_cdf(0.25, 1.0, 0.5) == pytest.approx(0.5 / 1.25)
    assert one_sided_hybrid_cdf(0.25, 1.0, -0.1) == 0


# ---------------------------------------------------------------------------
# Gibbs


def test_gaussian_gibbs():
    law = gibbs_law(lambda x: x)
    assert law.normalization == pytest.approx(math.sqrt(2 * math.pi), abs=1e-8)
    assert float(law.cdf(0.0)) == pytest.approx(0.5, abs=1e-8)
    assert float(law.cdf(1.0)) == pytest.approx(0.5 * (1 + math.erf(1 / math.sqrt(2))), abs=1e-9)
    assert abs(law.expect(lambda x: x)) <= 1e-12


@pytest.mark.parametrize("l", [0.5, 1.0, 2.0])
def test_gibbs_two_price_is_hybrid(l):
    law = gibbs_law(GFactor(1.0, l, SIGMA, two_price_curves()))
    x = np.linspace(-4, 4, 4001)
    assert np.abs(law.pdf(x) - hybrid_pdf(0.25, l, x)).max() <= 1e-6
    assert np.abs(law.cdf(x) - hybrid_cdf(0.25, l, x)).max() <= 1e-6


@pytest.mark.parametrize("l", [0.5, 2.0])
def test_gibbs_variable_substitution(l):
    p = tanh_curves()
    a = gibbs_law(GFactor(l, 1.0, SIGMA, p))
    b = gibbs_law(GFactor(1.0, l, SIGMA, p))
    x = np.linspace(-3, 3, 601)
    assert np.abs(a.cdf(x) - b.cdf(l * x)).max() <= 1e-6


def test_gibbs_mean_drift_vanishes():
    g = GFactor(1.0, 1.0, SIGMA, tanh_curves())
    law = gibbs_law(g)
    assert abs(law.expect(g)) <= 1e-10


def test_gibbs_tanh_normalization_closed_form():
    # g = 4 tanh(x) gives exp(-G) = cosh(x)^-4, whose integral is 4/3
    law = gibbs_law(GFactor(1.0, 1.0, SIGMA, tanh_curves()))
    assert law.normalization == pytest.approx(4 / 3, abs=1e-10)


def test_gibbs_ppf_inverts_cdf():
    law = gibbs_law(GFactor(1.0, 1.0, SIGMA, tanh_curves()))
    x = np.linspace(-1.5, 1.5, 31)
    assert np.abs(law.ppf(law.cdf(x)) - x).max() <= 1e-6


def test_gibbs_divergent():
    with pytest.raises(DivergentNormalization):
        gibbs_law(lambda x: -np.ones_like(x))


def test_gibbs_plus_exponential():
    law = gibbs_plus_law(lambda x: np.ones_like(x))
    assert float(law.cdf(0.0)) == 0
    x = np.linspace(0, 10, 101)
    assert np.abs(law.cdf(x) - (1 - np.exp(-x))).max() <= 1e-10
    assert law.family == "GibbsPlus"


@pytest.mark.parametrize("l", [0.5, 1.0, 2.0])
def test_gibbs_plus_two_price_is_one_sided_hybrid(l):
    law = gibbs_plus_law(GFactor(1.0, l, SIGMA, two_price_single_server_curves()))
    x = np.linspace(0, 4, 2001)
    assert np.abs(law.cdf(x) - one_sided_hybrid_cdf(0.25, l, x)).max() <= 1e-6


# ---------------------------------------------------------------------------
# laws: generic invariants


LAWS = {
    "laplace": lambda: Laplace(0.25),
    "hybrid": lambda: Hybrid(0.25, 1.0),
    "exponential": lambda: Exponential(0.25),
    "uniform": lambda: UniformOnSet([(-1, 1)]),
    "uniform-union": lambda: UniformOnSet([(-2, -1), (1, 2)]),
    "gibbs-tanh": lambda: gibbs_law(GFactor(1.0, 1.0, SIGMA, tanh_curves())),
    "gibbs-plus-tanh": lambda: gibbs_plus_law(GFactor(1.0, 1.0, SIGMA, tanh_single_server_curves())),
}


@pytest.mark.parametrize("name", sorted(LAWS))
def test_law_normalized_and_monotone(name):
    law = LAWS[name]()
    assert law.expect(lambda x: np.ones_like(x)) == pytest.approx(1, abs=1e-8)
    lo, hi = law.support()
    x = np.linspace(lo - 1, hi + 1, 10_000)
    c = law.cdf(x)
    assert np.all(np.diff(c) >= -1e-15)
    assert c[0] == pytest.approx(0, abs=1e-12) and c[-1] == pytest.approx(1, abs=1e-12)
    assert np.all(law.pdf(x) >= 0)


@pytest.mark.parametrize("name", sorted(LAWS))
def test_law_ppf_roundtrip(name):
    law = LAWS[name]()
    u = np.linspace(0.01, 0.99, 50)
    assert np.abs(law.cdf(law.ppf(u)) - u).max() <= 1e-6


def test_uniform_on_points():
    law = UniformOnSet([(0.0, 0.0)])
    assert law.cdf_left(0.0) == 0 and law.cdf(0.0) == 1
    assert np.all(law.ppf(np.array([0.1, 0.9])) == 0)


# ---------------------------------------------------------------------------
# minimizer set


def test_phi_star_two_price():
    (iv,) = phi_star(two_price_curves())
    assert iv[0] == pytest.approx(-1, abs=1e-3) and iv[1] == pytest.approx(1, abs=1e-3)


def test_phi_star_v_shape():
    p = PricingCurvePair(lambda x: np.zeros_like(x), lambda x: np.sign(x), 1.0, Smoothness.PIECEWISE)
    (iv,) = phi_star(p)
    assert iv[0] == pytest.approx(0, abs=1e-3) and iv[1] == pytest.approx(0, abs=1e-3)


def _double_well():
    # restoring force -1 on (0,1), 0 on (1,2), +1 beyond, odd in x
    def f(x):
        a = np.abs(x)
        return np.sign(x) * np.where(a < 1, -1.0, np.where(a < 2, 0.0, 1.0))

    return PricingCurvePair(lambda x: np.zeros_like(x), f, 1.0, Smoothness.PIECEWISE)


def test_phi_star_double_well_matches_brute_force():
    p = _double_well()
    got = phi_star(p)
    # brute-force oracle: cumulative sum of the force on a fine midpoint grid
    h = 1e-4
    x = np.arange(-6, 6 + h / 2, h)
    mid = 0.5 * (x[1:] + x[:-1])
    pot = np.concatenate([[0.0], np.cumsum(p.drift(mid) * h)])
    pot -= pot[np.argmin(np.abs(x))]
    arg = x[pot <= pot.min() + 1e-6]
    assert len(got) == 2
    assert got[0][0] == pytest.approx(arg[arg < 0].min(), abs=2e-3)
    assert got[0][1] == pytest.approx(arg[arg < 0].max(), abs=2e-3)
    assert got[1][0] == pytest.approx(arg[arg > 0].min(), abs=2e-3)
    assert got[1][1] == pytest.approx(arg[arg > 0].max(), abs=2e-3)


def test_phi_star_unbounded():
    with pytest.raises(PhiStarUnbounded):
        phi_star(zero_curves())


# ---------------------------------------------------------------------------
# regime dispatch


def test_limit_law_quality_driven():
    law = limit_law_for(make_spec(TWO, two_price_curves(), 0.01, 10), RegimeClass(0))
    assert isinstance(law, Laplace) and law.b == pytest.approx(0.25)


def test_limit_law_critical_both_scalings():
    spec = make_spec(TWO, two_price_curves(), 0.01, 100)
    x = np.linspace(-3, 3, 601)
    for scaling in ("epsilon", "tau"):
        law = limit_law_for(spec, RegimeClass(1.0), scaling)
        assert np.abs(law.cdf(x) - hybrid_cdf(0.25, 1.0, x)).max() <= 1e-6


def test_limit_law_profit_driven():
    law = limit_law_for(make_spec(TWO, two_price_curves(), 0.05, 100), RegimeClass(math.inf), "tau")
    assert isinstance(law, UniformOnSet)
    assert law.intervals[0][0] == pytest.approx(-1, abs=1e-3)
    assert law.intervals[-1][1] == pytest.approx(1, abs=1e-3)


def test_limit_law_single_server():
    spec = make_spec(ONE, two_price_single_server_curves(), 0.01, 10)
    assert limit_law_for(spec, RegimeClass(0)).mean == pytest.approx(0.25)
    law = limit_law_for(spec, RegimeClass(math.inf), "tau")
    assert law.intervals[0][0] == 0 and law.intervals[-1][1] == pytest.approx(1, abs=1e-3)


def test_limit_law_names_failed_condition():
    with pytest.raises(ConditionError, match="Condition 1"):
        limit_law_for(make_spec(TWO, zero_curves(), 0.01, 10), RegimeClass(0))
    # tail gaps are 1 on the right and 0.75 on the left
    lopsided = knot_curves([[-1, 0.5], [1, -0.5]], [[-1, -0.25], [1, 0.5]], "smooth")
    with pytest.raises(ConditionError, match="Condition 3"):
        limit_law_for(make_spec(TWO, lopsided, 0.01, 10), RegimeClass(0))


def test_condition_2_warning_for_piecewise_curves():
    p = knot_curves([[-1, 0.5], [1, -0.5]], [[-1, -0.5], [1, 0.5]], "piecewise")
    with pytest.warns(ConditionWarning, match="Condition 2"):
        limit_law_for(make_spec(TWO, p, 0.01, 100), RegimeClass(1.0))
    with warnings.catch_warnings():
        warnings.simplefilter("error", ConditionWarning)
        limit_law_for(make_spec(TWO, two_price_curves(), 0.01, 100), RegimeClass(1.0))
