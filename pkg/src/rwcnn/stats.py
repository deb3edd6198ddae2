"""Significance tests used to compare feature types.

p-values come from the regularized incomplete beta function, evaluated by
its continued fraction (modified Lentz), so no statistics package is needed.
"""

import math

import numpy as np

from ._validation import InvalidInputError

_EPS = 1e-15
_TINY = 1e-300
_MAX_TERMS = 10_000


def _betacf(a, b, x):
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_TERMS + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a, b, x):
    """Regularized incomplete beta ``I_x(a, b)`` for ``a, b > 0`` and ``0 <= x <= 1``."""
    if a <= 0 or b <= 0:
        raise InvalidInputError("betainc needs positive shape parameters")
    if not 0.0 <= x <= 1.0:
        raise InvalidInputError(f"betainc argument {x} outside [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t, dof):
    if math.isinf(t):
        return 0.0
    return min(1.0, float(betainc(dof / 2.0, 0.5, dof / (dof + t * t))))


def f_survival(F, d1, d2):
    if math.isinf(F):
        return 0.0
    if F <= 0:
        return 1.0
    return min(1.0, float(betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * F))))


def _samples(a, name):
    a = np.asarray(a, dtype=np.float64).ravel()
    if len(a) < 2:
        raise InvalidInputError(f"{name} needs at least two samples")
    return a


def welch_t_test(a, b):
    """Two-sided Welch t-test (unequal variances).

    Returns ``(t, p)``.  When both groups have zero variance, equal means give
    ``(0, 1)`` and different means give ``(+-inf, 0)``.
    """
    a, b = _samples(a, "a"), _samples(b, "b")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0:
        if diff == 0:
            return 0.0, 1.0
        return math.copysign(math.inf, diff), 0.0
    t = diff / math.sqrt(se2)
    # Welch-Satterthwaite, written in variance shares so tiny variances cannot underflow
    ra, rb = va / se2, vb / se2
    dof = 1.0 / (ra ** 2 / (len(a) - 1) + rb ** 2 / (len(b) - 1))
    return float(t), t_two_sided_p(t, dof)


def pooled_t_test(a, b):
    """Two-sided Student t-test with pooled variance."""
    a, b = _samples(a, "a"), _samples(b, "b")
    na, nb = len(a), len(b)
    dof = na + nb - 2
    sp2 = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / dof
    diff = a.mean() - b.mean()
    if sp2 == 0:
        if diff == 0:
            return 0.0, 1.0
        return math.copysign(math.inf, diff), 0.0
    t = diff / math.sqrt(sp2 * (1.0 / na + 1.0 / nb))
    return float(t), t_two_sided_p(t, dof)


def one_way_anova(*groups):
    """Classic one-way ANOVA F test.  Returns ``(F, p)``."""
    if len(groups) == 1 and not np.isscalar(groups[0][0]):
        groups = tuple(groups[0])
    if len(groups) < 2:
        raise InvalidInputError("ANOVA needs at least two groups")
    groups = [_samples(g, f"group {i}") for i, g in enumerate(groups)]
    k = len(groups)
    n = sum(len(g) for g in groups)
    means = [g.mean() for g in groups]
    grand = np.concatenate(groups).mean()
    if all(m == means[0] for m in means):
        ss_between = 0.0
    else:
        ss_between = sum(len(g) * (m - grand) ** 2 for g, m in zip(groups, means))
    ss_within = sum(((g - g.mean()) ** 2).sum() for g in groups)
    d1, d2 = k - 1, n - k
    if ss_within == 0:
        if ss_between == 0:
            return 0.0, 1.0
        return math.inf, 0.0
    F = (ss_between / d1) / (ss_within / d2)
    return float(F), f_survival(F, d1, d2)
