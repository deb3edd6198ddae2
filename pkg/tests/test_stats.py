import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from rwcnn.stats import betainc, f_survival, one_way_anova, pooled_t_test, welch_t_test
from rwcnn._validation import InvalidInputError

mp.mp.dps = 30


def t_tail_oracle(t, dof):
    """Two-sided p by integrating the Student-t density."""
    nu = mp.mpf(dof)
    c = mp.gamma((nu + 1) / 2) / (mp.sqrt(nu * mp.pi) * mp.gamma(nu / 2))
    dens = lambda x: c * (1 + x * x / nu) ** (-(nu + 1) / 2)
    return float(2 * mp.quad(dens, [abs(mp.mpf(t)), abs(mp.mpf(t)) + 10, mp.inf]))


def f_tail_oracle(F, d1, d2):
    """Upper tail of the F density by quadrature."""
    a, b = mp.mpf(d1), mp.mpf(d2)
    c = (a / b) ** (a / 2) / mp.beta(a / 2, b / 2)
    dens = lambda x: c * x ** (a / 2 - 1) * (1 + a * x / b) ** (-(a + b) / 2)
    return float(mp.quad(dens, [mp.mpf(F), mp.mpf(F) + 10, mp.inf]))


def _welch_dof(a, b):
    va, vb = np.var(a, ddof=1) / len(a), np.var(b, ddof=1) / len(b)
    return (va + vb) ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))


def _instances():
    rng = np.random.default_rng(99)
    out = []
    for i in range(20):
        kind = ("welch", "pooled", "anova")[i % 3]
        if kind == "anova":
            groups = [rng.normal(0.6 + 0.02 * g * (i % 4), 0.03, int(rng.integers(3, 8)))
                      for g in range(2 + i % 3)]
        else:
            groups = [rng.normal(0.7, 0.02, int(rng.integers(3, 10))),
                      rng.normal(0.7 + 0.01 * (i % 5), 0.03, int(rng.integers(3, 10)))]
        out.append((kind, groups))
    return out


@pytest.mark.parametrize("kind, groups", _instances())
def test_p_values_against_quadrature(kind, groups):
    if kind == "welch":
        t, p = welch_t_test(*groups)
        want = t_tail_oracle(t, _welch_dof(*groups))
    elif kind == "pooled":
        t, p = pooled_t_test(*groups)
        want = t_tail_oracle(t, len(groups[0]) + len(groups[1]) - 2)
    else:
        F, p = one_way_anova(*groups)
        n = sum(len(g) for g in groups)
        want = f_tail_oracle(F, len(groups) - 1, n - len(groups))
    assert abs(p - want) < 1e-6


def test_against_scipy():
    rng = np.random.default_rng(1)
    a, b, c = rng.normal(0, 1, 12), rng.normal(0.5, 2, 9), rng.normal(0.2, 1, 7)
    assert welch_t_test(a, b)[1] == pytest.approx(sps.ttest_ind(a, b, equal_var=False).pvalue, abs=1e-12)
    assert pooled_t_test(a, b)[1] == pytest.approx(sps.ttest_ind(a, b).pvalue, abs=1e-12)
    assert one_way_anova(a, b, c)[1] == pytest.approx(sps.f_oneway(a, b, c).pvalue, abs=1e-12)


@pytest.mark.parametrize("a, b, x", [(0.5, 0.5, 0.3), (2.0, 3.0, 0.9), (50.0, 0.5, 0.99), (1e3, 2.0, 0.998)])
def test_betainc_against_mpmath(a, b, x):
    assert betainc(a, b, x) == pytest.approx(float(mp.betainc(a, b, 0, x, regularized=True)), rel=1e-10)


def test_betainc_domain():
    assert betainc(2, 3, 0.0) == 0.0 and betainc(2, 3, 1.0) == 1.0
    with pytest.raises(InvalidInputError):
        betainc(0, 1, 0.5)
    with pytest.raises(InvalidInputError):
        betainc(1, 1, 1.5)


def test_identical_groups_give_p_one():
    g = [0.61, 0.64, 0.62]
    assert one_way_anova(g, list(g), list(g)) == (0.0, 1.0)
    assert welch_t_test(g, list(g))[1] == 1.0
    assert pooled_t_test(g, list(g))[1] == 1.0
    assert one_way_anova([0.5, 0.5], [0.5, 0.5]) == (0.0, 1.0)


def test_zero_variance_different_means():
    assert welch_t_test([1, 1, 1], [2, 2, 2]) == (-math.inf, 0.0)
    assert one_way_anova([1, 1], [2, 2])[1] == 0.0
    assert f_survival(math.inf, 1, 2) == 0.0


def test_two_group_anova_equals_pooled_t():
    rng = np.random.default_rng(7)
    a, b = rng.normal(0, 1, 8), rng.normal(0.4, 1, 11)
    t, pt = pooled_t_test(a, b)
    F, pf = one_way_anova(a, b)
    assert F == pytest.approx(t * t, rel=1e-9)
    assert pf == pytest.approx(pt, abs=1e-9)


def test_anova_accepts_group_list():
    groups = [[1.0, 2.0, 3.0], [2.0, 3.0, 4.5]]
    assert one_way_anova(groups) == one_way_anova(*groups)


def test_too_few_samples():
    with pytest.raises(InvalidInputError):
        welch_t_test([1.0], [1.0, 2.0])
    with pytest.raises(InvalidInputError):
        one_way_anova([1.0, 2.0])


samples = st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=12)


@settings(max_examples=60, deadline=None)
@given(a=samples, b=samples)
def test_t_tests_symmetric_and_bounded(a, b):
    for test in (welch_t_test, pooled_t_test):
        t1, p1 = test(a, b)
        t2, p2 = test(b, a)
        assert 0.0 <= p1 <= 1.0
        assert p1 == pytest.approx(p2, abs=1e-12)
        assert t1 == -t2 or (math.isnan(t1) and math.isnan(t2))


@settings(max_examples=40, deadline=None)
@given(groups=st.lists(samples, min_size=2, max_size=4))
def test_anova_p_bounded(groups):
    F, p = one_way_anova(*groups)
    assert 0.0 <= p <= 1.0 and F >= 0.0
