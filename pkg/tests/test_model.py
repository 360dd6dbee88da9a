import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from seqmis.model import (
    InvalidInput,
    Normal,
    PriorSpec,
    TargetModel,
    Uniform,
    benchmark,
    loglik_eggbox,
    loglik_nlg,
    loglik_shells,
    nlg_coordinate_loglik,
    nlg_marginal_cdf,
    reference_log_evidence,
)

LN_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


# ---------------------------------------------------------------- transform

def test_midpoints():
    assert PriorSpec([Uniform(0.0, 10 * math.pi)]).to_physical([0.0])[0] == pytest.approx(5 * math.pi, rel=1e-15)
    assert PriorSpec([Normal(3.0, 2.0)]).to_physical([0.0])[0] == 3.0


def test_phi_of_one_against_mpmath():
    mpmath.mp.dps = 30
    expected = float(mpmath.ncdf(1))
    assert PriorSpec([Uniform(0.0, 1.0)]).to_physical([1.0])[0] == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(0.841345, abs=1e-6)


def test_log_jacobian_values():
    assert PriorSpec([Uniform(0.0, 1.0)]).log_jacobian([0.0]) == pytest.approx(-0.918939, abs=1e-6)
    assert PriorSpec([Normal(0.0, 1.0)] * 3).log_jacobian([0.3, -2.0, 5.0]) == 0.0
    # 2 (ln phi(0) + ln 2) = -0.4515827...
    assert PriorSpec([Uniform(0.0, 2.0)] * 2).log_jacobian([0.0, 0.0]) == pytest.approx(
        2 * (math.log(2.0) - LN_SQRT_2PI), abs=1e-15)


def test_log_jacobian_matches_finite_difference():
    prior = PriorSpec([Uniform(-3.0, 7.0), Normal(1.0, 0.5)])
    u = np.array([0.7, -1.2])
    h = 1e-6
    fd = 0.0
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd += math.log((prior.to_physical(u + e)[j] - prior.to_physical(u - e)[j]) / (2 * h))
    assert prior.log_jacobian(u) == pytest.approx(fd, abs=1e-7)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-4.0, 4.0), min_size=3, max_size=3))
def test_round_trip_moderate(u):
    prior = PriorSpec([Uniform(0.0, 10 * math.pi), Uniform(-30.0, 30.0), Normal(2.0, 3.0)])
    u = np.array(u)
    assert np.max(np.abs(prior.to_standard(prior.to_physical(u)) - u)) < 1e-10


@settings(max_examples=200, deadline=None)
@given(st.floats(-6.0, 6.0))
def test_round_trip_tails(u):
    # exact for normal coordinates; for uniform ones the error is bounded by one ulp of theta
    # mapped back through the inverse density, which grows like 1/phi(u) in the tails
    prior = PriorSpec([Normal(2.0, 3.0), Uniform(0.0, 1.0)])
    back = prior.to_standard(prior.to_physical([u, u]))
    assert abs(back[0] - u) < 1e-10
    width = 1.0
    bound = 4 * np.spacing(width) / (width * math.exp(-0.5 * u * u - LN_SQRT_2PI))
    assert abs(back[1] - u) <= max(1e-10, bound)


def test_uniform_support_strict():
    prior = PriorSpec([Uniform(0.0, 1.0)])
    theta = prior.to_physical(np.array([[-40.0], [40.0]]))
    assert 0.0 < theta[0, 0] < 1.0 and 0.0 < theta[1, 0] < 1.0


def test_non_finite_rejected():
    prior = PriorSpec([Uniform(0.0, 1.0)])
    with pytest.raises(InvalidInput):
        prior.to_physical([np.nan])
    with pytest.raises(InvalidInput):
        prior.to_physical([np.inf])


def test_bad_marginals():
    with pytest.raises(ValueError):
        Uniform(1.0, 1.0)
    with pytest.raises(ValueError):
        Normal(0.0, 0.0)


# ---------------------------------------------------------------- benchmarks

def test_eggbox_values():
    assert loglik_eggbox(np.array([0.0, 0.0]))[0] == 243.0
    assert loglik_eggbox(np.array([math.pi, 0.0]))[0] == pytest.approx(32.0, rel=1e-14)


def test_shells_values():
    assert loglik_shells(np.array([-1.5, 0.0]))[0] == pytest.approx(1.38364, abs=1e-5)
    th = np.array([[0.7, 1.3], [2.2, -0.4]])
    mirrored = th * np.array([-1.0, 1.0])
    assert np.allclose(loglik_shells(th), loglik_shells(mirrored), rtol=0, atol=1e-14)
    ten = np.zeros(10)
    ten[0] = -3.5
    expected = -0.5 * math.log(2 * math.pi * 0.01) - 4.0 / 0.02
    assert loglik_shells(ten)[0] == pytest.approx(expected, rel=1e-12)


def test_nlg_values():
    # ln[0.5 e^-1 + 0.5 LG(-10; 10)] + ln[0.5 phi(0) + 0.5 phi(-20)] = -3.305233
    hand = math.log(0.5 * math.exp(-1) + 0.5 * math.exp(-20 - math.exp(-20))) + math.log(
        0.5 * math.exp(-LN_SQRT_2PI) + 0.5 * math.exp(-200 - LN_SQRT_2PI))
    assert loglik_nlg(np.array([-10.0, -10.0]))[0] == pytest.approx(hand, abs=1e-14)
    assert hand == pytest.approx(-3.305233, abs=1e-6)
    th = np.full(6, 10.0)
    contrib = nlg_coordinate_loglik(th, 6)[0]
    # coordinates 3-4 are LogGamma(10), 5-6 normal(10)
    assert contrib[4] == pytest.approx(-0.918939, abs=1e-6)
    assert contrib[2] == pytest.approx(-1.0, abs=1e-15)
    assert loglik_nlg(np.array([3.0, 4.2]))[0] == pytest.approx(loglik_nlg(np.array([3.0, -4.2]))[0], abs=1e-14)


def test_nlg_separable():
    rng = np.random.default_rng(1)
    base = rng.uniform(-30, 30, 10)
    for j in range(10):
        moved = base.copy()
        moved[j] += 0.37
        diff = loglik_nlg(moved)[0] - loglik_nlg(base)[0]
        per = nlg_coordinate_loglik(moved, 10)[0, j] - nlg_coordinate_loglik(base, 10)[0, j]
        scale = max(abs(loglik_nlg(base)[0]), 1.0)
        assert diff == pytest.approx(per, abs=1e-14 * scale)


def test_nlg_marginal_cdf_values():
    assert nlg_marginal_cdf(9, 10.0, 10) == pytest.approx(0.5, abs=1e-12)
    assert nlg_marginal_cdf(1, 0.0, 10) == pytest.approx(0.5, abs=1e-12)
    assert nlg_marginal_cdf(2, 10.0, 10) == pytest.approx(1 - math.exp(-1), abs=1e-9)
    assert nlg_marginal_cdf(0, -40.0, 2) == 0.0 and nlg_marginal_cdf(0, 40.0, 2) == 1.0


def test_nlg_marginal_cdf_against_quadrature():
    like = lambda x: math.exp(nlg_coordinate_loglik(np.array([[x, 0.0]]), 2)[0, 0])
    z = integrate.quad(like, -30, 30, points=[-10, 10], limit=400)[0]
    part = integrate.quad(like, -30, 5.0, points=[-10], limit=400)[0]
    assert nlg_marginal_cdf(0, 5.0, 2) == pytest.approx(part / z, abs=1e-9)


def test_benchmarks_finite_on_support():
    rng = np.random.default_rng(2)
    for case, dim in [("eggbox", 2), ("shells", 2), ("shells", 10), ("nlg", 2), ("nlg", 20)]:
        model = benchmark(case, dim)
        u = rng.standard_normal((500, dim)) * 3
        assert np.all(np.isfinite(model.loglik_u(u)))


def test_reference_values():
    assert reference_log_evidence("nlg", 2) == -8.19
    assert reference_log_evidence("eggbox", 2) == 235.86
    assert reference_log_evidence("nlg", 7) is None


# Frozen oracles: composite Gauss-Legendre (eggbox), radial quadrature (shells)
# and per-coordinate quadrature (nlg), computed independently of the package.
ORACLE = {
    ("eggbox", 2): 235.8559403322541,
    ("shells", 2): -1.7456418720467646,
    ("shells", 10): -14.59049107438517,
    ("shells", 30): -60.12776734137088,
    ("nlg", 2): -8.188689125474777,
    ("nlg", 5): -20.47172281214108,
    ("nlg", 10): -40.943445623251584,
    ("nlg", 20): -81.88689124547258,
}


@pytest.mark.parametrize("key", sorted(ORACLE))
def test_reference_matches_quadrature_oracle(key):
    assert abs(reference_log_evidence(*key) - ORACLE[key]) < 1e-2


def test_nlg_reference_near_prior_volume():
    for n in (2, 5, 10, 20):
        assert reference_log_evidence("nlg", n) == pytest.approx(-n * math.log(60.0), abs=1e-2)


def test_shells_2d_quadrature_live():
    model = benchmark("shells", 2)

    def inner(x):
        f = lambda y: math.exp(model.log_likelihood(np.array([[x, y]]))[0])
        return integrate.quad(f, -6, 6, points=[-2, 0, 2], limit=200)[0]

    total = sum(integrate.quad(inner, a, a + 1.5, limit=200)[0] for a in np.arange(-6, 6, 1.5))
    assert math.log(total / 144.0) == pytest.approx(ORACLE[("shells", 2)], abs=1e-3)


def test_eval_count_threadsafe():
    from concurrent.futures import ThreadPoolExecutor

    model = TargetModel(PriorSpec.iid(Uniform(0, 1), 2), lambda th: np.zeros(th.shape[0]))
    with ThreadPoolExecutor(8) as pool:
        list(pool.map(lambda k: model.loglik(np.zeros((k % 5 + 1, 2))), range(400)))
    assert model.eval_count == sum(k % 5 + 1 for k in range(400))
