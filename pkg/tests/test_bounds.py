import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avgsgd import (BoundContext, BoundReport, ValidityRangeError, almost_sure_potential_bound,
                    appendixF_bound, gradient_tail_threshold, lemma1_tail_from_moments,
                    lemma2_tail_from_moments, prop1_bound, prop2_moment_bound,
                    prop3_tail_threshold, prop4_gradient_moment_bound,
                    prop5_selfconcordance_transfer, prop5_unconditional, prop6_adaptive_bounds,
                    prop6_valid)
from avgsgd.bounds import corollary2, corollary3, corollary4, corollary6


def ctx(gamma=0.1, n=10, R=1.0, dist0_sq=1.0, mu=0.0, p=1):
    return BoundContext(gamma=gamma, n=n, R=R, dist0_sq=dist0_sq, mu=mu, p=p)


def test_context_constants():
    c = ctx(gamma=0.05, n=100, R=2.0, dist0_sq=4.0)
    assert c.square_const == pytest.approx(2 * 0.05 * 4 * 10)
    assert c.triangle_const == pytest.approx(3 * 4 / (0.05 * 10) + 3 * 2 / (0.05 * 2 * 10))
    with pytest.raises(ValueError):
        ctx(gamma=0.0)
    with pytest.raises(ValueError):
        ctx(dist0_sq=float("nan"))


def test_prop1_examples():
    assert prop1_bound(ctx()) == pytest.approx(0.55)
    assert prop1_bound(ctx(n=20)) == pytest.approx(0.30)
    for N, R, d in [(100, 1.0, 1.0), (10 ** 4, 2.0, 0.3), (7, 0.5, 5.0)]:
        c = BoundContext.for_horizon(N, R, d)
        assert prop1_bound(c) == pytest.approx(corollary2(N, R, d), rel=1e-12)


def test_prop2_and_appendix_f_examples():
    c = ctx(gamma=0.1, n=100, R=1.0, dist0_sq=1.0)
    assert prop2_moment_bound(c) == pytest.approx(23)
    # p enters the base as well as the exponent: (3 + 40)^2
    assert prop2_moment_bound(ctx(gamma=0.1, n=100, p=2)) == pytest.approx(1849)
    assert appendixF_bound(c, 1) == pytest.approx(2)
    assert appendixF_bound(ctx(gamma=0.1, n=100, dist0_sq=1.0), 2) == pytest.approx(100)
    assert appendixF_bound(ctx(gamma=0.1, n=100, dist0_sq=0.0), 3) == pytest.approx(8000)
    with pytest.raises(ValidityRangeError, match="prop2_moment_bound"):
        appendixF_bound(c, 4)


def test_prop3_examples():
    c = ctx(gamma=0.05, n=40, R=1.5, dist0_sq=0.7)
    assert prop3_tail_threshold(c, 0.0) == pytest.approx((3 * 0.7 / (0.05 * 40), 6 * 0.7))
    a0, a1, a2 = (np.array(prop3_tail_threshold(c, t)) for t in (0.0, 1.3, 2.6))
    np.testing.assert_allclose(a2 - a1, a1 - a0, rtol=1e-12)
    for N, R, d, t in [(100, 1.0, 1.0, 1.0), (10 ** 4, 2.0, 0.3, 3.0), (5, 0.5, 2.0, 0.5)]:
        np.testing.assert_allclose(prop3_tail_threshold(BoundContext.for_horizon(N, R, d), t),
                                   corollary4(N, R, d, t), rtol=1e-12)
    with pytest.raises(ValueError):
        prop3_tail_threshold(c, -1.0)


def test_prop4_examples():
    for N, R, d, p in [(100, 1.0, 1.0, 1), (10 ** 4, 2.0, 0.3, 2), (9, 0.5, 4.0, 3)]:
        c = BoundContext.for_horizon(N, R, d, p=p)
        assert prop4_gradient_moment_bound(c) == pytest.approx(corollary6(N, R, d, p), rel=1e-12)
    # second arithmetic path for p = 1, n = 1e4, R = 1, gamma = 0.005, dist0_sq = 1
    val = prop4_gradient_moment_bound(ctx(gamma=0.005, n=10 ** 4, R=1.0, dist0_sq=1.0))
    hand = 0.01 * (8 + 0.04 + 40 * 0.005 * 100 + 3 / 0.5 + 3 / 0.5)
    assert val == pytest.approx(hand, rel=1e-12)
    assert hand == pytest.approx(0.4004, rel=1e-12)


@pytest.mark.parametrize("R", [0.5, 1.0, 3.0])
def test_prop4_homogeneous_in_radius(R):
    base = prop4_gradient_moment_bound(ctx(gamma=0.01, n=400, R=1.0, dist0_sq=2.0, p=2))
    scaled = prop4_gradient_moment_bound(ctx(gamma=0.01 / R ** 2, n=400, R=R, dist0_sq=2.0 / R ** 2, p=2))
    assert scaled == pytest.approx(R * base, rel=1e-12)


def test_corollary3_consistent_with_prop2():
    for N, R, d, p in [(100, 1.0, 1.0, 1), (400, 2.0, 0.5, 2), (50, 0.7, 3.0, 3)]:
        c = BoundContext.for_horizon(N, R, d, p=p)
        gap_bound, dist_bound = corollary3(N, R, d, p)
        assert dist_bound == pytest.approx(prop2_moment_bound(c), rel=1e-12)
        assert gap_bound == pytest.approx(prop2_moment_bound(c) / (2 * c.gamma * N) ** p, rel=1e-12)


def test_prop5_examples():
    assert prop5_selfconcordance_transfer(0.0, 0.3, 1.0) == (0.0, 0.0)
    assert prop5_selfconcordance_transfer(0.76, 1.0, 1.0) is None
    a, b = prop5_selfconcordance_transfer(0.5, 1.0, 1.0)
    assert (a, b) == (1.0, 0.5)
    with pytest.raises(ValueError):
        prop5_selfconcordance_transfer(0.1, 0.0, 1.0)
    assert prop5_unconditional(0.5, 1.0, 2.0, 1.0) == pytest.approx(0.75)


def test_prop6_examples():
    c = ctx(gamma=0.05, n=100, R=2.0, dist0_sq=0.0, mu=0.1)
    a, b = prop6_adaptive_bounds(c)
    assert a == pytest.approx(50625 * 4 / (100 * 0.1))
    assert b == pytest.approx(194481 * 4 / (100 * 0.01))
    c2 = ctx(gamma=0.05, n=200, R=2.0, dist0_sq=0.0, mu=0.1)
    np.testing.assert_allclose(prop6_adaptive_bounds(c2), np.array(prop6_adaptive_bounds(c)) / 2)
    c3 = ctx(gamma=0.05, n=100, R=2.0, dist0_sq=0.25, mu=0.1)
    assert prop6_adaptive_bounds(c3)[0] == pytest.approx(160000 * 4 / (100 * 0.1))
    with pytest.raises(ValueError):
        prop6_adaptive_bounds(ctx(mu=0.0))
    assert not prop6_valid(ctx(n=10 ** 4, mu=0.05))
    assert prop6_valid(ctx(n=10 ** 8, mu=0.05))


def test_lemma_examples():
    thr, prob = lemma1_tail_from_moments(1, 1, 2, 10)
    assert thr == 8 and prob == pytest.approx(2 * math.exp(-2))
    assert lemma1_tail_from_moments(1, 1, 0, 10)[1] == 2
    with pytest.raises(ValidityRangeError):
        lemma1_tail_from_moments(1, 1, 6, 10)
    assert lemma2_tail_from_moments(0, 0, 1, 3.0, 10) == pytest.approx((4, 4 * math.exp(-3)))
    assert lemma2_tail_from_moments(1, 0, 0, 1.0, 10) == pytest.approx((4, 4 / math.e))
    with pytest.raises(ValidityRangeError):
        lemma2_tail_from_moments(1, 1, 1, 11, 10)


def test_lemma1_exponential_monte_carlo():
    x = np.random.default_rng(0).exponential(size=10 ** 6)
    for t in (1.0, 2.0, 3.0):
        thr, prob = lemma1_tail_from_moments(1e-12, 1.0, t, 100)
        assert np.mean(x >= thr) <= prob


def test_gradient_tail_composes_lemma2():
    c = ctx(gamma=0.01, n=400, R=1.0, dist0_sq=0.5)
    t = 2.0
    rn = math.sqrt(c.n)
    A = 2 * c.R / rn * 5.0
    Bc = 2 * c.R / rn * 20 * c.R ** 2 * c.gamma * rn
    C = c.R / rn * c.triangle_const
    sq, prob = lemma2_tail_from_moments(A, Bc, C, t, c.n)
    thr, prob2 = gradient_tail_threshold(c, t)
    assert thr ** 2 == pytest.approx(sq, rel=1e-12) and prob2 == prob
    beyond, _ = gradient_tail_threshold(c, c.n)
    assert beyond <= c.R


def test_almost_sure_forms():
    c = ctx(gamma=0.1, n=10, R=1.0, dist0_sq=1.0)
    assert almost_sure_potential_bound(c) == pytest.approx(3 + 5 * 100 * 0.01)
    assert almost_sure_potential_bound(c, quadratic=False) == pytest.approx(3 + 5 * 10 * 0.01)


def test_report_flags():
    r = BoundReport("prop1", 1.0, 0.5, ci_upper=0.9)
    assert not r.violated and r.margin == pytest.approx(0.1)
    assert BoundReport("prop1", 1.0, 0.9, ci_upper=1.1).violated
    assert BoundReport("prop1", 1.0, 1.2).violated


contexts = st.builds(
    BoundContext,
    gamma=st.floats(1e-4, 1.0), n=st.integers(1, 10 ** 6), R=st.floats(0.1, 10.0),
    dist0_sq=st.floats(0.0, 100.0), mu=st.floats(1e-3, 10.0), p=st.integers(1, 3))


@settings(max_examples=1000, deadline=None)
@given(c=contexts, extra=st.floats(0.0, 10.0), t=st.floats(0.0, 20.0), dt=st.floats(0.0, 5.0))
def test_monotonicity_and_dominance(c, extra, t, dt):
    bigger = BoundContext(c.gamma, c.n, c.R, c.dist0_sq + extra, c.mu, c.p)
    higher_p = BoundContext(c.gamma, c.n, c.R, c.dist0_sq, c.mu, c.p + 1)
    for f in (prop1_bound, prop2_moment_bound, prop4_gradient_moment_bound,
              lambda k: prop6_adaptive_bounds(k)[0], lambda k: prop6_adaptive_bounds(k)[1],
              lambda k: prop3_tail_threshold(k, t)[0], almost_sure_potential_bound):
        assert f(bigger) >= f(c)
    # moment bounds grow with p in L^p norm, i.e. after taking the p-th root
    assert prop2_moment_bound(higher_p) ** (1 / higher_p.p) >= prop2_moment_bound(c) ** (1 / c.p)
    assert prop4_gradient_moment_bound(higher_p) >= prop4_gradient_moment_bound(c)
    a, b = prop3_tail_threshold(c, t), prop3_tail_threshold(c, t + dt)
    assert b[0] >= a[0] and b[1] >= a[1]
    assert appendixF_bound(c, c.p) <= prop2_moment_bound(c) * (1 + 1e-12)
    if c.p < 3:
        assert (appendixF_bound(higher_p, c.p + 1) ** (1 / (c.p + 1))
                >= appendixF_bound(c, c.p) ** (1 / c.p) * (1 - 1e-12))
